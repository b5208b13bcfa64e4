#pragma once

#include "trellis/digest.hpp"
#include "trellis/gateway.hpp"
#include "trellis/rng.hpp"

#include <atomic>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

// Deterministic scripted actors and reward models for offline runs and
// tests. Outcomes are pure functions of (seed, inputs): two runs with the
// same seed produce byte-identical sequences, regardless of call order or
// thread interleaving. Script tables are fixed at construction; lookups
// afterwards take no locks.

namespace trellis {

// Script tables key on (problem id, action, prefix hash).
struct ScriptKey {
    std::string problem_id;
    ActionKind action = ActionKind::Thinking;
    std::uint64_t prefix_hash = 0;

    auto tie() const { return std::tie(problem_id, action, prefix_hash); }
    bool operator<(const ScriptKey& o) const { return tie() < o.tie(); }
    bool operator==(const ScriptKey& o) const { return tie() == o.tie(); }
};

struct WeightedText {
    std::string text;
    double weight = 1.0;
};

// ---------------------------------------------------------------------------
// Scripted actor
// ---------------------------------------------------------------------------

class ScriptedActor : public ActorModel {
public:
    ScriptedActor(std::string id, std::uint64_t seed,
                  std::map<ScriptKey, std::vector<WeightedText>> script = {})
        : id_(std::move(id)), seed_(seed), script_(std::move(script)) {}

    const std::string& id() const override { return id_; }

    ReasoningStep generate(const Problem& problem,
                           std::span<const ReasoningStep> prefix,
                           ActionKind action,
                           double temperature) override {
        const std::uint64_t ph = prefix_hash(prefix);
        const std::uint64_t h = call_hash(problem.id, action, ph, temperature);
        auto it = script_.find(ScriptKey{problem.id, action, ph});
        std::string content =
            (it != script_.end() && !it->second.empty())
                ? pick_weighted(it->second, rng::u01(h))
                : default_content(problem, action, h,
                                  action == ActionKind::Answer && prefix.empty());
        return ReasoningStep{action, std::move(content), id_};
    }

private:
    std::uint64_t call_hash(const std::string& problem_id, ActionKind action,
                            std::uint64_t ph, double temperature) const {
        std::uint64_t h = rng::combine(seed_, id_);
        h = rng::combine(h, problem_id);
        h = rng::combine(h, static_cast<std::uint64_t>(action));
        h = rng::combine(h, ph);
        std::uint64_t tbits;
        static_assert(sizeof(tbits) == sizeof(temperature));
        std::memcpy(&tbits, &temperature, sizeof(tbits));
        return rng::combine(h, tbits);
    }

    static std::string pick_weighted(const std::vector<WeightedText>& table, double u) {
        double total = 0.0;
        for (const auto& e : table) total += e.weight;
        double threshold = u * total;
        double acc = 0.0;
        for (const auto& e : table) {
            acc += e.weight;
            if (threshold < acc) return e.text;
        }
        return table.back().text;
    }

    // Fallback for keys the script does not cover. For a whole-solution
    // request (answer action, empty prefix) this emits a parseable tagged
    // response; otherwise a synthetic one-line step.
    std::string default_content(const Problem& problem, ActionKind action, std::uint64_t h,
                                bool full_solution) const {
        const std::string tag = digest_hex(std::to_string(h)).substr(0, 8);
        if (full_solution) {
            const std::string ans = "ans-" + tag;
            std::string text;
            text += "[caption] the figure for " + problem.id + " (" + tag + ")\n";
            text += "[thinking] derivation " + tag + "\n";
            text += "[self_reflection] check " + tag + "\n";
            text += "[answer] " + ans + "\n";
            return text;
        }
        if (action == ActionKind::Answer) return "ans-" + tag;
        return std::string(to_string(action)) + " step " + tag + " for " + problem.id;
    }

    std::string id_;
    std::uint64_t seed_;
    std::map<ScriptKey, std::vector<WeightedText>> script_;
};

// ---------------------------------------------------------------------------
// Scripted reward model
// ---------------------------------------------------------------------------

// Entry for one scripted critique. `scores` with more than one element is
// cycled across repeated calls on the same key (per-key atomic counter), so
// k_prm-sample averaging can be scripted; a single-element table is
// stateless.
struct CritiqueScript {
    std::vector<double> scores;
    StepLabel label = StepLabel::CorrectStep;
    std::string explanation = "scripted critique";
};

class ScriptedReward : public RewardModel {
public:
    explicit ScriptedReward(std::uint64_t seed, std::string id = "scripted-prm")
        : id_(std::move(id)), seed_(seed) {}

    // Full-key script: (problem, action, prefix) + step content.
    ScriptedReward& script(const ScriptKey& key, const std::string& content, CritiqueScript entry) {
        keyed_[KeyedContent{key, content}] = make_state(std::move(entry));
        return *this;
    }

    // Content-only script: matches a step by content for any problem/prefix.
    ScriptedReward& script_content(const std::string& content, CritiqueScript entry) {
        by_content_[content] = make_state(std::move(entry));
        return *this;
    }

    ScriptedReward& script_content(const std::string& content, double score) {
        return script_content(content, CritiqueScript{{score},
                                                      score >= 0.5 ? StepLabel::CorrectStep
                                                                   : StepLabel::LogicalReasoningError,
                                                      "scripted critique"});
    }

    const std::string& id() const override { return id_; }

    StepCritique critique(const Problem& problem,
                          std::span<const ReasoningStep> prefix,
                          const ReasoningStep& step) override {
        if (auto it = keyed_.find(KeyedContent{
                ScriptKey{problem.id, step.action, prefix_hash(prefix)}, step.content});
            it != keyed_.end())
            return realize(*it->second, step);
        if (auto it = by_content_.find(step.content); it != by_content_.end())
            return realize(*it->second, step);
        return default_critique(problem, prefix, step);
    }

private:
    struct KeyedContent {
        ScriptKey key;
        std::string content;
        bool operator<(const KeyedContent& o) const {
            return std::tie(key, content) < std::tie(o.key, o.content);
        }
    };

    struct EntryState {
        CritiqueScript entry;
        mutable std::atomic<std::uint64_t> calls{0};
    };

    static std::shared_ptr<EntryState> make_state(CritiqueScript entry) {
        auto st = std::make_shared<EntryState>();
        st->entry = std::move(entry);
        if (st->entry.scores.empty()) st->entry.scores.push_back(1.0);
        return st;
    }

    static StepCritique realize(const EntryState& st, const ReasoningStep& step) {
        const auto n = st.calls.fetch_add(1, std::memory_order_relaxed);
        const double score = st.entry.scores[n % st.entry.scores.size()];
        return StepCritique{step.content, st.entry.label, st.entry.explanation, score};
    }

    // Seed-derived critique for unscripted steps: score uniform in [0,1),
    // label correct above 0.5, otherwise an error label picked by hash.
    StepCritique default_critique(const Problem& problem,
                                  std::span<const ReasoningStep> prefix,
                                  const ReasoningStep& step) const {
        std::uint64_t h = rng::combine(seed_, problem.id);
        h = rng::combine(h, static_cast<std::uint64_t>(step.action));
        h = rng::combine(h, prefix_hash(prefix));
        h = rng::combine(h, step.content);
        const double score = rng::u01(h);
        StepLabel label = StepLabel::CorrectStep;
        if (score < 0.5) {
            // kAllStepLabels[0] is CorrectStep; pick among the eight error labels.
            const auto idx = 1 + static_cast<std::size_t>(rng::mix(h) % 8);
            label = kAllStepLabels[idx];
        }
        return StepCritique{step.content, label, "auto critique " + digest_hex(std::to_string(h)).substr(0, 8),
                            score};
    }

    std::string id_;
    std::uint64_t seed_;
    std::map<KeyedContent, std::shared_ptr<EntryState>> keyed_;
    std::map<std::string, std::shared_ptr<EntryState>> by_content_;
};

// ---------------------------------------------------------------------------
// Callback-backed models (test oracles, planted suites)
// ---------------------------------------------------------------------------

class CallbackActor : public ActorModel {
public:
    using Fn = std::function<std::string(const Problem&, std::span<const ReasoningStep>, ActionKind,
                                         double)>;

    CallbackActor(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

    const std::string& id() const override { return id_; }

    ReasoningStep generate(const Problem& problem,
                           std::span<const ReasoningStep> prefix,
                           ActionKind action,
                           double temperature) override {
        return ReasoningStep{action, fn_(problem, prefix, action, temperature), id_};
    }

private:
    std::string id_;
    Fn fn_;
};

class CallbackReward : public RewardModel {
public:
    using Fn = std::function<StepCritique(const Problem&, std::span<const ReasoningStep>,
                                          const ReasoningStep&)>;

    CallbackReward(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

    const std::string& id() const override { return id_; }

    StepCritique critique(const Problem& problem,
                          std::span<const ReasoningStep> prefix,
                          const ReasoningStep& step) override {
        return fn_(problem, prefix, step);
    }

private:
    std::string id_;
    Fn fn_;
};

} // namespace trellis
