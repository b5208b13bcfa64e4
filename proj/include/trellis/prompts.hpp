#pragma once

#include "trellis/errors.hpp"
#include "trellis/types.hpp"

#include <map>
#include <span>
#include <sstream>
#include <string>

// Prompt templates for remote actors and critics. Placeholders use
// {{name}}; build_prompt fails if any placeholder survives substitution.

namespace trellis {

namespace detail {

inline std::string numbered_steps(std::span<const ReasoningStep> steps) {
    std::ostringstream out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        out << (i + 1) << ". [" << to_string(steps[i].action) << "] " << steps[i].content;
        if (i + 1 != steps.size()) out << '\n';
    }
    return out.str();
}

inline std::string label_taxonomy() {
    std::string out;
    for (std::size_t i = 0; i < kAllStepLabels.size(); ++i) {
        if (i) out += ", ";
        out += to_string(kAllStepLabels[i]);
    }
    return out;
}

} // namespace detail

class PromptRegistry {
public:
    PromptRegistry() { register_defaults(); }

    void add(const std::string& id, std::string text) { templates_[id] = std::move(text); }

    bool has(const std::string& id) const { return templates_.count(id) != 0; }

    // Substitute {{placeholders}} from `vars`; any unresolved placeholder is
    // a TemplateError.
    std::string render(const std::string& id, const std::map<std::string, std::string>& vars) const {
        auto it = templates_.find(id);
        if (it == templates_.end()) throw TemplateError("unknown template id: " + id);
        std::string text = it->second;
        for (const auto& [key, value] : vars) {
            const std::string needle = "{{" + key + "}}";
            std::size_t pos = 0;
            while ((pos = text.find(needle, pos)) != std::string::npos) {
                text.replace(pos, needle.size(), value);
                pos += value.size();
            }
        }
        if (auto pos = text.find("{{"); pos != std::string::npos) {
            auto end = text.find("}}", pos);
            const std::string name =
                end == std::string::npos ? "?" : text.substr(pos + 2, end - pos - 2);
            throw TemplateError("unresolved placeholder {{" + name + "}} in template " + id);
        }
        return text;
    }

private:
    void register_defaults() {
        const std::string header =
            "Subject: {{subject}} (grade {{grade}})\nProblem: {{statement}}\n";
        const std::string prefix_block = "Steps so far:\n{{prefix_steps}}\n";

        add("step:caption", header +
            "Describe exactly what the attached figure(s) show: axes, labels, values, "
            "geometric relations. Do not solve anything yet.\n");
        add("step:summary", header + prefix_block +
            "Restate the goal of the problem in one or two sentences: what is asked, "
            "what is given, which constraints apply.\n");
        add("step:sub_task", header + prefix_block +
            "Name the next sub-task to tackle and why it is the right next move.\n");
        add("step:thinking", header + prefix_block +
            "Carry out the next piece of reasoning or computation. Show the work.\n");
        add("step:self_reflection", header + prefix_block +
            "Check the steps so far for mistakes: misread values, wrong formulas, "
            "arithmetic slips, logical gaps. State clearly whether everything holds.\n");
        add("step:answer", header + prefix_block +
            "State the final answer only, as concisely as possible.\n");

        add("full_solution", header +
            "Solve the problem step by step. Write each step on its own line, tagged "
            "with its type in brackets, one of: [caption] [summary] [sub_task] "
            "[thinking] [self_reflection] [answer]. Begin with [caption], reflect "
            "before answering, and end with a single [answer] line.\n");

        add("critique_step", header + prefix_block +
            "Candidate next step ([{{action}}]): {{step}}\n"
            "Assess this single step. Reply with a JSON object "
            "{\"content\", \"label\", \"explanation\", \"score\"} where label is one of: "
            "{{labels}}; score is a number in [0,1] giving the probability the step is "
            "correct and useful.\n");
        add("critique_full", header +
            "Full solution to review:\n{{prefix_steps}}\n"
            "Assess every step. Reply with a JSON array of objects "
            "{\"content\", \"label\", \"explanation\", \"score\"}, one per step, in order. "
            "Labels: {{labels}}.\n");
        add("segment_answer", header +
            "Student answer:\n{{answer}}\n"
            "Split the answer into its individual reasoning steps. Reply with a JSON "
            "array of strings, one step per element, preserving the original wording.\n");
        add("inject_error",
            "Rewrite the following reasoning step so that it exhibits exactly one "
            "error of type \"{{error_type}}\", keeping the style and length similar. "
            "Reply with the rewritten step only.\nStep: {{step}}\n");
    }

    std::map<std::string, std::string> templates_;
};

inline const PromptRegistry& default_prompts() {
    static const PromptRegistry reg;
    return reg;
}

// Deterministic prompt construction for the common cases. `payload` supplies
// template-specific extras (e.g. "action"/"step" for critique_step,
// "answer" for segment_answer, "error_type"/"step" for inject_error).
inline std::string build_prompt(const std::string& template_id,
                                const Problem& problem,
                                std::span<const ReasoningStep> prefix,
                                std::map<std::string, std::string> payload = {},
                                const PromptRegistry& registry = default_prompts()) {
    payload.emplace("statement", problem.statement);
    payload.emplace("subject", std::string(to_string(problem.subject)));
    payload.emplace("grade", std::to_string(problem.grade));
    payload.emplace("prefix_steps", prefix.empty() ? "(none)" : detail::numbered_steps(prefix));
    payload.emplace("labels", detail::label_taxonomy());
    return registry.render(template_id, payload);
}

} // namespace trellis
