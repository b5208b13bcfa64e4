#pragma once

#include "trellis/types.hpp"

#include <json.hpp>

#include <cmath>
#include <string>

// JSON schemas for the core types, snake_case field names. Canonical
// encoding: UTF-8 text, object keys in the fixed order below, scores as
// decimals with at most six fractional digits. encode(decode(encode(x)))
// is byte-identical to encode(x).

namespace trellis {

using json = nlohmann::ordered_json;

// Scores are quantised to six decimals on encode so the canonical text form
// is exact. nlohmann prints the shortest decimal that round-trips, which for
// a multiple of 1e-6 is that multiple itself.
inline double canonical_score(double x) {
    return std::nearbyint(x * 1e6) / 1e6;
}

namespace codec {

inline json encode(const Problem& p) {
    json j;
    j["id"] = p.id;
    j["statement"] = p.statement;
    j["image_refs"] = p.image_refs;
    j["subject"] = to_string(p.subject);
    j["grade"] = p.grade;
    j["concept_ids"] = p.concept_ids;
    if (p.ground_truth) j["ground_truth"] = *p.ground_truth;
    return j;
}

inline Problem decode_problem(const json& j) {
    Problem p;
    p.id = j.at("id").get<std::string>();
    p.statement = j.at("statement").get<std::string>();
    p.image_refs = j.value("image_refs", std::vector<std::string>{});
    auto subject = subject_from_string(j.at("subject").get<std::string>());
    if (!subject) throw std::invalid_argument("unknown subject: " + j.at("subject").get<std::string>());
    p.subject = *subject;
    p.grade = j.at("grade").get<int>();
    p.concept_ids = j.value("concept_ids", std::vector<std::string>{});
    if (j.contains("ground_truth")) p.ground_truth = j.at("ground_truth").get<std::string>();
    p.validate();
    return p;
}

inline json encode(const ReasoningStep& s) {
    json j;
    j["action"] = to_string(s.action);
    j["content"] = s.content;
    j["producer_id"] = s.producer_id;
    return j;
}

inline ReasoningStep decode_step(const json& j) {
    ReasoningStep s;
    auto action = action_from_string(j.at("action").get<std::string>());
    if (!action) throw std::invalid_argument("unknown action: " + j.at("action").get<std::string>());
    s.action = *action;
    s.content = j.at("content").get<std::string>();
    s.producer_id = j.value("producer_id", std::string{});
    s.validate();
    return s;
}

inline json encode(const Trajectory& t) {
    json j;
    j["problem_id"] = t.problem_id;
    j["steps"] = json::array();
    for (const auto& s : t.steps) j["steps"].push_back(encode(s));
    if (t.final_answer) j["final_answer"] = *t.final_answer;
    return j;
}

inline Trajectory decode_trajectory(const json& j) {
    Trajectory t;
    t.problem_id = j.at("problem_id").get<std::string>();
    for (const auto& sj : j.at("steps")) t.steps.push_back(decode_step(sj));
    if (j.contains("final_answer")) t.final_answer = j.at("final_answer").get<std::string>();
    t.validate();
    return t;
}

inline json encode(const StepCritique& c) {
    json j;
    j["content"] = c.content;
    j["label"] = to_string(c.label);
    j["explanation"] = c.explanation;
    j["score"] = canonical_score(c.score);
    return j;
}

inline StepCritique decode_critique(const json& j) {
    StepCritique c;
    c.content = j.at("content").get<std::string>();
    auto label = step_label_from_string(j.at("label").get<std::string>());
    if (!label) throw std::invalid_argument("unknown step label: " + j.at("label").get<std::string>());
    c.label = *label;
    c.explanation = j.at("explanation").get<std::string>();
    c.score = j.at("score").get<double>();
    c.validate();
    return c;
}

// Search nodes serialize structurally (children nested); parent pointers are
// rebuilt on decode.
inline json encode(const SearchNode& n) {
    json j;
    if (n.step) j["step"] = encode(*n.step);
    j["value"] = canonical_score(n.value);
    j["visits"] = n.visits;
    j["reward"] = canonical_score(n.reward);
    j["children"] = json::array();
    for (const auto& c : n.children) j["children"].push_back(encode(*c));
    return j;
}

inline std::unique_ptr<SearchNode> decode_search_node(const json& j, SearchNode* parent = nullptr) {
    auto n = std::make_unique<SearchNode>();
    if (j.contains("step")) n->step = decode_step(j.at("step"));
    n->value = j.at("value").get<double>();
    n->visits = j.at("visits").get<int>();
    n->reward = j.at("reward").get<double>();
    n->parent = parent;
    n->depth = parent ? parent->depth + 1 : 0;
    for (const auto& cj : j.at("children"))
        n->children.push_back(decode_search_node(cj, n.get()));
    return n;
}

} // namespace codec

// Canonical single-line text forms (JSONL-ready, no trailing newline).
inline std::string encode_text(const Problem& p) { return codec::encode(p).dump(); }
inline std::string encode_text(const ReasoningStep& s) { return codec::encode(s).dump(); }
inline std::string encode_text(const Trajectory& t) { return codec::encode(t).dump(); }
inline std::string encode_text(const StepCritique& c) { return codec::encode(c).dump(); }

} // namespace trellis
