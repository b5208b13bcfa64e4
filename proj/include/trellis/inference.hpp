#pragma once

#include "trellis/canonical.hpp"
#include "trellis/datagen.hpp"
#include "trellis/gateway.hpp"
#include "trellis/log.hpp"
#include "trellis/rng.hpp"
#include "trellis/types.hpp"

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

// Best-of-n candidate sampling and reranking. Candidates are full solutions
// in the tagged text format below, parsed into step sequences and scored
// step-by-step by the PRM.

namespace trellis::inference {

enum class BonStrategy { Random, SelfConsistency, PrmAccumulated };

inline std::string_view to_string(BonStrategy s) {
    switch (s) {
        case BonStrategy::Random: return "random";
        case BonStrategy::SelfConsistency: return "self_consistency";
        case BonStrategy::PrmAccumulated: return "prm_accumulated";
    }
    return "?";
}

inline std::optional<BonStrategy> strategy_from_string(std::string_view s) {
    if (s == "random") return BonStrategy::Random;
    if (s == "self_consistency") return BonStrategy::SelfConsistency;
    if (s == "prm_accumulated") return BonStrategy::PrmAccumulated;
    return std::nullopt;
}

// How per-step scores fold into one candidate score.
enum class Accumulate { Sum, Mean };

struct BonConfig {
    int n = 8;
    BonStrategy strategy = BonStrategy::PrmAccumulated;
    double temperature_low = 1.1;
    double temperature_high = 1.3;
    Accumulate accumulate = Accumulate::Sum;
    std::uint64_t seed = 0;

    void validate() const {
        if (n < 1) throw std::invalid_argument("BonConfig.n must be >= 1");
        if (temperature_low > temperature_high)
            throw std::invalid_argument("temperature_low must be <= temperature_high");
        if (temperature_low <= 0.0)
            throw std::invalid_argument("temperatures must be > 0");
    }
};

// ---------------------------------------------------------------------------
// Tagged trajectory text format
// ---------------------------------------------------------------------------

// One step per tagged line: "[thinking] compute the area". Untagged lines
// continue the current step.
inline std::string format_trajectory(const Trajectory& t) {
    std::string out;
    for (const auto& s : t.steps) {
        out += '[';
        out += to_string(s.action);
        out += "] ";
        out += s.content;
        out += '\n';
    }
    return out;
}

namespace detail {

inline std::optional<std::pair<ActionKind, std::string>> parse_tagged_line(const std::string& line) {
    if (line.empty() || line.front() != '[') return std::nullopt;
    const auto close = line.find(']');
    if (close == std::string::npos) return std::nullopt;
    auto action = action_from_string(line.substr(1, close - 1));
    if (!action) return std::nullopt;
    std::size_t start = close + 1;
    while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
    return std::make_pair(*action, line.substr(start));
}

inline std::string last_nonempty_line(const std::string& text) {
    std::istringstream in(text);
    std::string line, last;
    while (std::getline(in, line)) {
        const auto b = line.find_first_not_of(" \t\r");
        if (b != std::string::npos) last = line.substr(b);
    }
    while (!last.empty() && (last.back() == ' ' || last.back() == '\t' || last.back() == '\r'))
        last.pop_back();
    return last;
}

} // namespace detail

// Parse a full-solution text into a trajectory. Texts with no recognizable
// tags fall back to a two-step thinking+answer trajectory so the candidate
// still participates in selection.
inline Trajectory parse_trajectory(const std::string& text, const std::string& problem_id) {
    Trajectory t;
    t.problem_id = problem_id;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (auto tagged = detail::parse_tagged_line(line)) {
            t.steps.push_back(ReasoningStep{tagged->first, tagged->second, "parsed"});
        } else if (!t.steps.empty()) {
            const auto b = line.find_first_not_of(" \t");
            if (b != std::string::npos) {
                t.steps.back().content += '\n';
                t.steps.back().content += line.substr(b);
            }
        }
    }
    // Drop empty-content steps the tag scan may have produced.
    std::erase_if(t.steps, [](const ReasoningStep& s) { return s.content.empty(); });

    if (t.steps.empty()) {
        const std::string answer = detail::last_nonempty_line(text);
        t.steps.push_back(ReasoningStep{ActionKind::Thinking, text, "fallback"});
        t.steps.push_back(
            ReasoningStep{ActionKind::Answer, answer.empty() ? text : answer, "fallback"});
    }
    // Keep at most one answer step: everything after the first answer is
    // discarded, matching the grammar's answer-is-last rule.
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        if (t.steps[i].action == ActionKind::Answer) {
            t.steps.resize(i + 1);
            break;
        }
    }
    if (t.steps.back().action == ActionKind::Answer) t.final_answer = t.steps.back().content;
    return t;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct Candidate {
    Trajectory trajectory;
    double temperature = 0.0;
    int slot = 0;  // 0-based generation slot
};

// n independent full-solution generations, each at a temperature drawn
// uniformly from [low, high] by the run seed. Failed slots are dropped with
// a warning; zero successes is a SamplingError.
inline std::vector<Candidate> sample_candidates(ActorModel& actor, const Problem& problem,
                                                const BonConfig& config) {
    config.validate();
    std::vector<Candidate> out;
    std::size_t failures = 0;
    for (int slot = 0; slot < config.n; ++slot) {
        std::uint64_t h = rng::combine(config.seed, problem.id);
        h = rng::combine(h, static_cast<std::uint64_t>(slot));
        const double temperature =
            config.temperature_low +
            rng::u01(h) * (config.temperature_high - config.temperature_low);
        try {
            const ReasoningStep full =
                actor.generate(problem, {}, ActionKind::Answer, temperature);
            out.push_back(Candidate{parse_trajectory(full.content, problem.id), temperature, slot});
        } catch (const std::exception& e) {
            ++failures;
            logging::warn("candidate slot " + std::to_string(slot + 1) + " of " +
                          std::to_string(config.n) + " failed on " + problem.id + ": " + e.what());
        }
    }
    if (out.empty())
        throw SamplingError("all " + std::to_string(config.n) + " candidate generations failed for " +
                            problem.id);
    return out;
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

struct ScoredCandidate {
    Trajectory trajectory;
    std::vector<StepCritique> critiques;
};

inline double accumulated_reward(const ScoredCandidate& c, Accumulate mode) {
    double sum = 0.0;
    for (const auto& k : c.critiques) sum += k.score;
    if (mode == Accumulate::Mean && !c.critiques.empty())
        return sum / static_cast<double>(c.critiques.size());
    return sum;
}

// Pick one candidate: Random draws uniformly from the seed;
// SelfConsistency majority-votes canonical final answers and returns the
// highest-scoring member of the winning class; PrmAccumulated takes the
// argmax of accumulated stepwise reward. Ties resolve to the earliest
// candidate.
inline std::size_t bon_select_index(const std::vector<ScoredCandidate>& candidates,
                                    const BonConfig& config) {
    if (candidates.empty()) throw std::invalid_argument("bon_select: no candidates");
    switch (config.strategy) {
        case BonStrategy::Random: {
            std::uint64_t h = rng::combine(config.seed, std::uint64_t{0xb0u});
            h = rng::combine(h, candidates[0].trajectory.problem_id);
            return static_cast<std::size_t>(rng::u01(h) * static_cast<double>(candidates.size()));
        }
        case BonStrategy::SelfConsistency: {
            std::vector<std::string> answers;
            answers.reserve(candidates.size());
            for (const auto& c : candidates)
                answers.push_back(canonical_answer(c.trajectory.final_answer.value_or("")));
            const datagen::VoteResult vote = datagen::self_consistency_vote(answers);
            std::size_t best = candidates.size();
            double best_score = 0.0;
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                if (answers[i] != vote.winner) continue;
                const double score = accumulated_reward(candidates[i], config.accumulate);
                if (best == candidates.size() || score > best_score) {
                    best = i;
                    best_score = score;
                }
            }
            return best;
        }
        case BonStrategy::PrmAccumulated: {
            std::size_t best = 0;
            double best_score = accumulated_reward(candidates[0], config.accumulate);
            for (std::size_t i = 1; i < candidates.size(); ++i) {
                const double score = accumulated_reward(candidates[i], config.accumulate);
                if (score > best_score) {
                    best = i;
                    best_score = score;
                }
            }
            return best;
        }
    }
    return 0;
}

inline const Trajectory& bon_select(const std::vector<ScoredCandidate>& candidates,
                                    const BonConfig& config) {
    return candidates[bon_select_index(candidates, config)].trajectory;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct AccuracyRow {
    std::string strategy;
    int n = 0;
    double accuracy = 0.0;
    std::size_t problems = 0;
};

struct AuditEntry {
    std::string problem_id;
    std::string strategy;
    int n = 0;
    int slot = 0;
    double temperature = 0.0;
    std::string answer;
    double accumulated = 0.0;
    bool selected = false;
};

// Fraction of problems whose selected candidate answers the gold answer,
// per configuration. Deterministic under scripted models and a fixed seed.
inline std::vector<AccuracyRow> evaluate_suite(const std::vector<Problem>& problems,
                                               ActorModel& actor, RewardModel& prm,
                                               const std::vector<BonConfig>& configs,
                                               std::vector<AuditEntry>* audit = nullptr) {
    std::vector<AccuracyRow> rows;
    for (const auto& config : configs) {
        config.validate();
        std::size_t correct = 0;
        std::size_t counted = 0;
        for (const auto& problem : problems) {
            if (!problem.ground_truth)
                throw std::invalid_argument("evaluate_suite: problem " + problem.id +
                                            " has no gold answer");
            std::vector<Candidate> sampled;
            try {
                sampled = sample_candidates(actor, problem, config);
            } catch (const SamplingError& e) {
                logging::warn(std::string("evaluate_suite: ") + e.what());
                ++counted;  // an unsampleable problem scores as wrong
                continue;
            }
            std::vector<ScoredCandidate> scored;
            scored.reserve(sampled.size());
            for (auto& c : sampled)
                scored.push_back(ScoredCandidate{c.trajectory,
                                                 prm.critique_full(problem, c.trajectory)});
            const std::size_t pick = bon_select_index(scored, config);
            const std::string got =
                canonical_answer(scored[pick].trajectory.final_answer.value_or(""));
            const bool ok = got == canonical_answer(*problem.ground_truth);
            ++counted;
            if (ok) ++correct;
            if (audit) {
                for (std::size_t i = 0; i < scored.size(); ++i) {
                    audit->push_back(AuditEntry{
                        problem.id, std::string(to_string(config.strategy)), config.n,
                        sampled[i].slot, sampled[i].temperature,
                        scored[i].trajectory.final_answer.value_or(""),
                        accumulated_reward(scored[i], config.accumulate), i == pick});
                }
            }
        }
        rows.push_back(AccuracyRow{std::string(to_string(config.strategy)), config.n,
                                   counted == 0 ? 0.0
                                                : static_cast<double>(correct) /
                                                      static_cast<double>(counted),
                                   counted});
    }
    return rows;
}

} // namespace trellis::inference
