#pragma once

#include "trellis/types.hpp"

#include <span>
#include <vector>

// Action-ordering rules for trajectories. The default rules:
//   (a) the first step, if any, is a caption;
//   (b) there is at most one answer step and it is last;
//   (c) an answer requires at least one self-reflection earlier in the
//       sequence.
// Rule violations of (a) and (b) are unrecoverable: no extension of a
// violating prefix can become valid, which is what lets search reject early.

namespace trellis {

struct ActionGrammar {
    bool require_caption_first = true;
    bool single_answer_last = true;
    bool require_reflection_before_answer = true;

    bool valid(std::span<const ReasoningStep> steps) const {
        bool seen_reflection = false;
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const ActionKind a = steps[i].action;
            if (i == 0 && require_caption_first && a != ActionKind::Caption) return false;
            if (a == ActionKind::Answer) {
                if (single_answer_last && i + 1 != steps.size()) return false;
                if (require_reflection_before_answer && !seen_reflection) return false;
            }
            if (a == ActionKind::SelfReflection) seen_reflection = true;
        }
        return true;
    }

    // Actions that may legally follow `prefix`. Empty after an answer, or
    // when the prefix already violates the rules.
    std::vector<ActionKind> legal_next(std::span<const ReasoningStep> prefix) const {
        if (!valid(prefix)) return {};
        if (single_answer_last) {
            for (const auto& s : prefix)
                if (s.action == ActionKind::Answer) return {};
        }
        if (prefix.empty() && require_caption_first) return {ActionKind::Caption};

        bool seen_reflection = false;
        for (const auto& s : prefix)
            if (s.action == ActionKind::SelfReflection) seen_reflection = true;

        std::vector<ActionKind> out;
        for (ActionKind a : kAllActions) {
            if (a == ActionKind::Answer && require_reflection_before_answer && !seen_reflection)
                continue;
            out.push_back(a);
        }
        return out;
    }
};

inline const ActionGrammar& default_grammar() {
    static const ActionGrammar g{};
    return g;
}

inline bool grammar_valid(std::span<const ReasoningStep> steps) {
    return default_grammar().valid(steps);
}

inline bool grammar_valid(const std::vector<ReasoningStep>& steps) {
    return grammar_valid(std::span<const ReasoningStep>(steps));
}

inline bool grammar_valid(const Trajectory& trajectory) {
    return grammar_valid(trajectory.steps);
}

// The fixed single-path action order used by the linear schedule.
inline constexpr std::array<ActionKind, 6> kLinearSchedule = {
    ActionKind::Caption,  ActionKind::Summary,        ActionKind::SubTask,
    ActionKind::Thinking, ActionKind::SelfReflection, ActionKind::Answer,
};

} // namespace trellis
