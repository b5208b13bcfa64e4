#pragma once

#include "trellis/errors.hpp"
#include "trellis/rng.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Core domain types. Everything here is an immutable value object except
// SearchNode, whose trees are mutated only by the mcts engine.

namespace trellis {

// ---------------------------------------------------------------------------
// Action kinds
// ---------------------------------------------------------------------------

// The six step types a trajectory is built from.
enum class ActionKind {
    Caption,
    Summary,
    SubTask,
    Thinking,
    SelfReflection,
    Answer,
};

inline constexpr std::array<ActionKind, 6> kAllActions = {
    ActionKind::Caption,   ActionKind::Summary,        ActionKind::SubTask,
    ActionKind::Thinking,  ActionKind::SelfReflection, ActionKind::Answer,
};

constexpr std::string_view to_string(ActionKind a) {
    switch (a) {
        case ActionKind::Caption: return "caption";
        case ActionKind::Summary: return "summary";
        case ActionKind::SubTask: return "sub_task";
        case ActionKind::Thinking: return "thinking";
        case ActionKind::SelfReflection: return "self_reflection";
        case ActionKind::Answer: return "answer";
    }
    return "?";
}

inline std::optional<ActionKind> action_from_string(std::string_view s) {
    for (ActionKind a : kAllActions)
        if (to_string(a) == s) return a;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Subjects and step labels
// ---------------------------------------------------------------------------

enum class Subject { Math, Biology, Physics, Geography, Chemistry };

inline constexpr std::array<Subject, 5> kAllSubjects = {
    Subject::Math, Subject::Biology, Subject::Physics, Subject::Geography,
    Subject::Chemistry,
};

constexpr int kGradeMin = 7;
constexpr int kGradeMax = 12;

constexpr std::string_view to_string(Subject s) {
    switch (s) {
        case Subject::Math: return "math";
        case Subject::Biology: return "biology";
        case Subject::Physics: return "physics";
        case Subject::Geography: return "geography";
        case Subject::Chemistry: return "chemistry";
    }
    return "?";
}

inline std::optional<Subject> subject_from_string(std::string_view s) {
    for (Subject v : kAllSubjects)
        if (to_string(v) == s) return v;
    return std::nullopt;
}

// Step-level quality labels a critique can assign.
enum class StepLabel {
    CorrectStep,
    VisualMisunderstanding,
    ProblemMisunderstanding,
    LackOfDomainKnowledge,
    MisapplicationOfKnowledge,
    LogicalReasoningError,
    Hallucination,
    ComputationalError,
    OffTopicOrIncongruent,
};

inline constexpr std::array<StepLabel, 9> kAllStepLabels = {
    StepLabel::CorrectStep,
    StepLabel::VisualMisunderstanding,
    StepLabel::ProblemMisunderstanding,
    StepLabel::LackOfDomainKnowledge,
    StepLabel::MisapplicationOfKnowledge,
    StepLabel::LogicalReasoningError,
    StepLabel::Hallucination,
    StepLabel::ComputationalError,
    StepLabel::OffTopicOrIncongruent,
};

constexpr std::string_view to_string(StepLabel l) {
    switch (l) {
        case StepLabel::CorrectStep: return "correct_step";
        case StepLabel::VisualMisunderstanding: return "visual_misunderstanding";
        case StepLabel::ProblemMisunderstanding: return "problem_misunderstanding";
        case StepLabel::LackOfDomainKnowledge: return "lack_of_domain_knowledge";
        case StepLabel::MisapplicationOfKnowledge: return "misapplication_of_knowledge";
        case StepLabel::LogicalReasoningError: return "logical_reasoning_error";
        case StepLabel::Hallucination: return "hallucination";
        case StepLabel::ComputationalError: return "computational_error";
        case StepLabel::OffTopicOrIncongruent: return "off_topic_or_incongruent";
    }
    return "?";
}

inline std::optional<StepLabel> step_label_from_string(std::string_view s) {
    for (StepLabel v : kAllStepLabels)
        if (to_string(v) == s) return v;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Problems and steps
// ---------------------------------------------------------------------------

// A multimodal question. Images are opaque asset ids resolved by the model
// gateway; the core never inspects pixels.
struct Problem {
    std::string id;
    std::string statement;
    std::vector<std::string> image_refs;
    Subject subject = Subject::Math;
    int grade = kGradeMin;
    std::vector<std::string> concept_ids;
    std::optional<std::string> ground_truth;

    void validate() const {
        if (id.empty()) throw std::invalid_argument("Problem.id must be non-empty");
        if (grade < kGradeMin || grade > kGradeMax)
            throw std::invalid_argument("Problem.grade out of range 7-12: " + std::to_string(grade));
    }

    bool operator==(const Problem&) const = default;
};

inline Problem make_problem(std::string id, std::string statement) {
    Problem p;
    p.id = std::move(id);
    p.statement = std::move(statement);
    return p;
}

// One typed action's content, tagged with the actor that produced it.
struct ReasoningStep {
    ActionKind action = ActionKind::Thinking;
    std::string content;
    std::string producer_id;

    void validate() const {
        if (content.empty()) throw std::invalid_argument("ReasoningStep.content must be non-empty");
    }

    bool operator==(const ReasoningStep&) const = default;
};

// An ordered action sequence from root to answer.
//
// The action grammar is validated where trajectories enter contracts that
// require it (search results, dataset export), not at construction:
// best-of-n fallback segmentation may legitimately produce sequences the
// default grammar rejects. The structural answer invariants below always
// hold.
struct Trajectory {
    std::string problem_id;
    std::vector<ReasoningStep> steps;
    std::optional<std::string> final_answer;

    void validate() const {
        std::size_t answers = 0;
        for (const auto& s : steps) {
            s.validate();
            if (s.action == ActionKind::Answer) ++answers;
        }
        if (answers > 1) throw std::invalid_argument("Trajectory has more than one answer step");
        if (final_answer && (steps.empty() || steps.back().action != ActionKind::Answer))
            throw std::invalid_argument("Trajectory.final_answer set but last step is not an answer");
    }

    bool operator==(const Trajectory&) const = default;
};

// PRM output for one step: a quadruple of content, label, explanation, score.
struct StepCritique {
    std::string content;
    StepLabel label = StepLabel::CorrectStep;
    std::string explanation;
    double score = 0.0;

    void validate() const {
        if (score < 0.0 || score > 1.0)
            throw std::invalid_argument("StepCritique.score out of [0,1]: " + std::to_string(score));
    }

    bool operator==(const StepCritique&) const = default;
};

// ---------------------------------------------------------------------------
// Search nodes
// ---------------------------------------------------------------------------

// One node of a search tree. The root carries no step. `reward` is the
// step's creation-time score; `value`/`visits` evolve under backpropagation.
// expanded/exhausted/creation_index are engine bookkeeping.
struct SearchNode {
    std::optional<ReasoningStep> step;
    double value = 0.0;
    int visits = 0;
    double reward = 0.0;
    SearchNode* parent = nullptr;
    std::vector<std::unique_ptr<SearchNode>> children;

    int depth = 0;
    std::uint64_t creation_index = 0;
    bool expanded = false;
    bool exhausted = false;

    bool is_root() const { return parent == nullptr; }
    bool is_answer() const { return step && step->action == ActionKind::Answer; }
};

// Steps along the path root -> node, excluding the (step-less) root.
inline std::vector<ReasoningStep> path_steps(const SearchNode& node) {
    std::vector<const SearchNode*> chain;
    for (const SearchNode* n = &node; n != nullptr && !n->is_root(); n = n->parent)
        chain.push_back(n);
    std::vector<ReasoningStep> steps;
    steps.reserve(chain.size());
    for (auto it = chain.rbegin(); it != chain.rend(); ++it)
        steps.push_back(*(*it)->step);
    return steps;
}

// ---------------------------------------------------------------------------
// Hashing helpers shared by scripts and traces
// ---------------------------------------------------------------------------

// Stable hash of a step prefix; scripted mocks key outcome tables on it.
inline std::uint64_t prefix_hash(std::span<const ReasoningStep> steps) {
    std::uint64_t h = rng::kFnvOffset;
    for (const auto& s : steps) {
        h = rng::fnv1a64(to_string(s.action), h);
        h ^= 0x1f;
        h *= rng::kFnvPrime;
        h = rng::fnv1a64(s.content, h);
        h ^= 0x1e;
        h *= rng::kFnvPrime;
    }
    return h;
}

inline std::uint64_t prefix_hash(const std::vector<ReasoningStep>& steps) {
    return prefix_hash(std::span<const ReasoningStep>(steps));
}

} // namespace trellis
