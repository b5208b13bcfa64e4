#pragma once

#include "trellis/errors.hpp"
#include "trellis/types.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace trellis {

// Uniform interfaces to step generators (actors) and the step critic (PRM).
// Implementations must be reentrant: the search engine may call them from
// several worker threads at once.

// A generative model that proposes the next step of a given action type.
//
// Convention: calling generate with an empty prefix and ActionKind::Answer
// requests a complete solution in the tagged trajectory text format (see
// inference.hpp); best-of-n sampling relies on this.
class ActorModel {
public:
    virtual ~ActorModel() = default;

    virtual const std::string& id() const = 0;

    // May throw; the caller decides whether a failed actor is fatal.
    virtual ReasoningStep generate(const Problem& problem,
                                   std::span<const ReasoningStep> prefix,
                                   ActionKind action,
                                   double temperature) = 0;
};

// A model scoring individual reasoning steps with a full quadruple
// (content, label, explanation, score) rather than only final answers.
class RewardModel {
public:
    virtual ~RewardModel() = default;

    virtual const std::string& id() const = 0;

    virtual StepCritique critique(const Problem& problem,
                                  std::span<const ReasoningStep> prefix,
                                  const ReasoningStep& step) = 0;

    // One critique per step, in step order.
    virtual std::vector<StepCritique> critique_full(const Problem& problem,
                                                    const Trajectory& trajectory) {
        std::vector<StepCritique> out;
        out.reserve(trajectory.steps.size());
        for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
            std::span<const ReasoningStep> prefix(trajectory.steps.data(), i);
            out.push_back(critique(problem, prefix, trajectory.steps[i]));
        }
        return out;
    }
};

// Averaged affirmative score for one candidate step: the mean of `k_prm`
// critique scores. Scores outside [0,1] are a protocol violation, never
// clamped. A failed critique raises ScoringError carrying the partial
// results.
inline double prm_step_score(RewardModel& prm,
                             const Problem& problem,
                             std::span<const ReasoningStep> prefix,
                             const ReasoningStep& step,
                             int k_prm) {
    if (k_prm < 1) throw std::invalid_argument("k_prm must be >= 1");
    std::vector<double> scores;
    scores.reserve(static_cast<std::size_t>(k_prm));
    for (int i = 0; i < k_prm; ++i) {
        StepCritique c;
        try {
            c = prm.critique(problem, prefix, step);
        } catch (const ProtocolError&) {
            throw;
        } catch (const std::exception& e) {
            throw ScoringError(std::string("critique failed on sample ") + std::to_string(i + 1) +
                                   " of " + std::to_string(k_prm) + ": " + e.what(),
                               std::move(scores));
        }
        if (c.score < 0.0 || c.score > 1.0)
            throw ProtocolError("critique score out of [0,1]: " + std::to_string(c.score));
        scores.push_back(c.score);
    }
    double sum = 0.0;
    for (double s : scores) sum += s;
    return sum / static_cast<double>(k_prm);
}

} // namespace trellis
