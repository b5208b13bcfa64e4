#pragma once

#include "trellis/digest.hpp"
#include "trellis/gateway.hpp"
#include "trellis/grammar.hpp"
#include "trellis/json_codec.hpp"
#include "trellis/log.hpp"
#include "trellis/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

// PRM-guided tree search over typed reasoning actions. One rollout walks the
// shared tree root-down: UCB selection through existing children, expansion
// of the first unexpanded node via the actor pool, PRM scoring with
// tau-threshold pruning, and value/visit backpropagation along the ancestor
// chain. A rollout ends when an answer node is created, a branch dies
// (empty survivor set), or the depth cap is hit.

namespace trellis::mcts {

// Which actions get proposed at each node.
enum class Schedule {
    GrammarLegal,   // every action the grammar admits after the prefix
    Linear,         // fixed caption->summary->sub_task->thinking->reflection->answer
    Unconstrained,  // all six actions at any depth (ablation baseline)
};

inline std::string_view to_string(Schedule s) {
    switch (s) {
        case Schedule::GrammarLegal: return "grammar";
        case Schedule::Linear: return "linear";
        case Schedule::Unconstrained: return "unconstrained";
    }
    return "?";
}

inline std::optional<Schedule> schedule_from_string(std::string_view s) {
    if (s == "grammar") return Schedule::GrammarLegal;
    if (s == "linear") return Schedule::Linear;
    if (s == "unconstrained") return Schedule::Unconstrained;
    return std::nullopt;
}

struct SearchConfig {
    int k_actors = 3;        // actors drawn from the pool per expansion
    int k_prm = 1;           // critique samples averaged into one reward
    double tau = 0.5;        // pruning threshold on the averaged reward
    double c_explore = 1.4142135623730951;
    int max_depth = 12;
    int rollouts = 4;
    double confidence_floor = 0.6;  // reflection-gate mean-reward floor
    double expand_temperature = 1.0;
    Schedule schedule = Schedule::GrammarLegal;
    std::uint64_t seed = 0;

    void validate() const {
        if (k_actors < 1) throw std::invalid_argument("k_actors must be >= 1");
        if (k_prm < 1) throw std::invalid_argument("k_prm must be >= 1");
        if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("tau must be in [0,1]");
        if (c_explore <= 0.0) throw std::invalid_argument("c_explore must be > 0");
        if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
        if (rollouts < 1) throw std::invalid_argument("rollouts must be >= 1");
    }
};

struct ScoredStep {
    ReasoningStep step;
    double reward = 0.0;
};

struct TraceEvent {
    enum class Kind { Insert, Prune } kind = Kind::Insert;
    std::uint64_t node_id = 0;    // creation index; 0 for prunes
    std::uint64_t parent_id = 0;  // 0 = root
    ActionKind action = ActionKind::Thinking;
    std::string content_hash;
    double reward = 0.0;
};

struct TreeStats {
    std::size_t node_count = 0;  // nodes in the tree, root included
    int max_depth = 0;
    std::size_t pruned_count = 0;
};

struct TrajectorySample {
    Trajectory trajectory;
    std::vector<double> step_rewards;  // creation rewards along the path
    double terminal_reward = 0.0;      // the answer node's reward
};

struct SearchResult {
    std::vector<TrajectorySample> trajectories;
    TreeStats stats;
    std::vector<TraceEvent> trace;
    std::unique_ptr<SearchNode> tree_root;  // retained for audits and invariant checks
};

// Owns the root and the bookkeeping shared by the engine's operations.
struct Tree {
    std::unique_ptr<SearchNode> root = std::make_unique<SearchNode>();
    std::uint64_t next_creation_index = 1;
    std::size_t node_count = 1;
    int max_depth_reached = 0;
    std::size_t pruned_count = 0;
    std::vector<TraceEvent> trace;
};

// ---------------------------------------------------------------------------
// Expansion
// ---------------------------------------------------------------------------

// Ask each of the first k actors for a candidate next step of the given
// action. Identical contents are deduplicated (first producer wins). Actors
// that throw are logged and skipped; if every actor fails the expansion
// itself fails.
inline std::vector<ReasoningStep> expand(const SearchNode& node,
                                         const Problem& problem,
                                         std::span<ActorModel* const> actors,
                                         ActionKind next_action,
                                         const SearchConfig& config) {
    const std::vector<ReasoningStep> prefix = path_steps(node);
    std::vector<ReasoningStep> candidates;
    std::size_t failures = 0;
    const std::size_t pool =
        std::min(actors.size(), static_cast<std::size_t>(config.k_actors));
    for (std::size_t i = 0; i < pool; ++i) {
        try {
            ReasoningStep step =
                actors[i]->generate(problem, prefix, next_action, config.expand_temperature);
            step.validate();
            const bool duplicate =
                std::any_of(candidates.begin(), candidates.end(),
                            [&](const ReasoningStep& c) { return c.content == step.content; });
            if (!duplicate) candidates.push_back(std::move(step));
        } catch (const std::exception& e) {
            ++failures;
            logging::warn("actor " + actors[i]->id() + " failed on " + problem.id + "/" +
                          std::string(to_string(next_action)) + ": " + e.what());
        }
    }
    if (candidates.empty() && failures == pool && pool > 0)
        throw ExpansionError("all " + std::to_string(pool) + " actors failed expanding " +
                             problem.id + "/" + std::string(to_string(next_action)));
    return candidates;
}

// ---------------------------------------------------------------------------
// Scoring and filtering
// ---------------------------------------------------------------------------

// Score every candidate with the PRM (k_prm-sample average) and keep those
// with reward >= tau. An empty survivor list signals a dead branch, not an
// error. Pruned candidates are appended to `pruned_out` when given.
inline std::vector<ScoredStep> score_and_filter(const std::vector<ReasoningStep>& candidates,
                                                RewardModel& prm,
                                                const Problem& problem,
                                                std::span<const ReasoningStep> prefix,
                                                const SearchConfig& config,
                                                std::vector<ScoredStep>* pruned_out = nullptr) {
    std::vector<ScoredStep> survivors;
    for (const auto& candidate : candidates) {
        const double reward = prm_step_score(prm, problem, prefix, candidate, config.k_prm);
        if (reward >= config.tau) {
            survivors.push_back(ScoredStep{candidate, reward});
        } else if (pruned_out) {
            pruned_out->push_back(ScoredStep{candidate, reward});
        }
    }
    return survivors;
}

// ---------------------------------------------------------------------------
// Backpropagation
// ---------------------------------------------------------------------------

// Insert the surviving candidates as children of `expanded` (value = reward,
// visits = 1) and push the batch up the ancestor chain leaf-upward:
//   V(s) <- (N(s)*V(s) + sum of rewards) / (N(s) + m),  N(s) <- N(s) + m
// where m is the survivor count. An empty batch changes nothing.
inline std::vector<SearchNode*> backpropagate(Tree& tree, SearchNode& expanded,
                                              const std::vector<ScoredStep>& surviving) {
    std::vector<SearchNode*> inserted;
    if (surviving.empty()) return inserted;

    double reward_sum = 0.0;
    for (const auto& s : surviving) {
        auto child = std::make_unique<SearchNode>();
        child->step = s.step;
        child->reward = s.reward;
        child->value = s.reward;
        child->visits = 1;
        child->parent = &expanded;
        child->depth = expanded.depth + 1;
        child->creation_index = tree.next_creation_index++;
        reward_sum += s.reward;
        inserted.push_back(child.get());
        tree.trace.push_back(TraceEvent{TraceEvent::Kind::Insert, child->creation_index,
                                        expanded.creation_index, s.step.action,
                                        digest_hex(s.step.content), s.reward});
        expanded.children.push_back(std::move(child));
    }
    tree.node_count += surviving.size();
    tree.max_depth_reached = std::max(tree.max_depth_reached, expanded.depth + 1);

    const int m = static_cast<int>(surviving.size());
    for (SearchNode* s = &expanded; s != nullptr; s = s->parent) {
        s->value = (s->visits * s->value + reward_sum) / (s->visits + m);
        s->visits += m;
    }
    return inserted;
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

inline double ucb_score(const SearchNode& child, const SearchNode& parent, double c_explore) {
    const double log_parent = std::log(static_cast<double>(std::max(parent.visits, 1)));
    return child.value + c_explore * std::sqrt(log_parent / (1.0 + child.visits));
}

// Child maximizing V + c*sqrt(log N(parent) / (1 + N(child))); ties go to
// the earliest-created child.
inline SearchNode* select(std::span<SearchNode* const> children, const SearchNode& parent,
                          double c_explore) {
    if (children.empty()) throw std::invalid_argument("select: children must be non-empty");
    SearchNode* best = children[0];
    double best_score = ucb_score(*best, parent, c_explore);
    for (std::size_t i = 1; i < children.size(); ++i) {
        const double score = ucb_score(*children[i], parent, c_explore);
        if (score > best_score ||
            (score == best_score && children[i]->creation_index < best->creation_index)) {
            best = children[i];
            best_score = score;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Reflection gate
// ---------------------------------------------------------------------------

// A trajectory passes the reflection gate iff the mean critique score over
// all steps clears the confidence floor and every self-reflection step is
// labeled correct. Requires at least one self-reflection step.
inline bool reflect_verify(const Trajectory& trajectory, RewardModel& prm, const Problem& problem,
                           double confidence_floor = 0.6) {
    const bool has_reflection =
        std::any_of(trajectory.steps.begin(), trajectory.steps.end(),
                    [](const ReasoningStep& s) { return s.action == ActionKind::SelfReflection; });
    if (!has_reflection)
        throw std::invalid_argument("reflect_verify: trajectory has no self-reflection step");

    const std::vector<StepCritique> critiques = prm.critique_full(problem, trajectory);
    if (critiques.size() != trajectory.steps.size())
        throw ScoringError("critique_full returned " + std::to_string(critiques.size()) +
                               " critiques for " + std::to_string(trajectory.steps.size()) + " steps",
                           {});
    double sum = 0.0;
    for (std::size_t i = 0; i < critiques.size(); ++i) {
        sum += critiques[i].score;
        if (trajectory.steps[i].action == ActionKind::SelfReflection &&
            critiques[i].label != StepLabel::CorrectStep)
            return false;
    }
    return sum / static_cast<double>(critiques.size()) >= confidence_floor;
}

// ---------------------------------------------------------------------------
// Search driver
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<ActionKind> proposed_actions(const SearchNode& node, const SearchConfig& config) {
    const std::vector<ReasoningStep> prefix = path_steps(node);
    switch (config.schedule) {
        case Schedule::GrammarLegal:
            return default_grammar().legal_next(prefix);
        case Schedule::Linear: {
            const std::size_t depth = prefix.size();
            if (depth >= kLinearSchedule.size()) return {};
            return {kLinearSchedule[depth]};
        }
        case Schedule::Unconstrained:
            return {kAllActions.begin(), kAllActions.end()};
    }
    return {};
}

// A node is exhausted when it can never yield a new trajectory: dead
// expansion, terminal answer, depth cap, or all children exhausted.
// Exhaustion propagates upward so selection never re-enters a spent
// subtree.
inline void mark_exhausted(SearchNode* node) {
    while (node != nullptr) {
        node->exhausted = true;
        SearchNode* parent = node->parent;
        if (parent == nullptr) return;
        if (!parent->expanded) return;
        const bool all_spent =
            std::all_of(parent->children.begin(), parent->children.end(),
                        [](const std::unique_ptr<SearchNode>& c) { return c->exhausted; });
        if (!all_spent) return;
        node = parent;
    }
}

inline std::vector<SearchNode*> viable_children(SearchNode& node) {
    std::vector<SearchNode*> out;
    for (const auto& c : node.children)
        if (!c->exhausted) out.push_back(c.get());
    return out;
}

inline void record_trajectory(SearchResult& result, const Problem& problem,
                              const SearchNode& answer_node) {
    std::vector<ReasoningStep> steps = path_steps(answer_node);
    if (!grammar_valid(steps)) return;  // only grammar-valid completions are returned
    TrajectorySample sample;
    sample.trajectory.problem_id = problem.id;
    sample.trajectory.final_answer = answer_node.step->content;
    sample.trajectory.steps = std::move(steps);
    sample.terminal_reward = answer_node.reward;
    sample.step_rewards.reserve(sample.trajectory.steps.size());
    std::vector<const SearchNode*> chain;
    for (const SearchNode* n = &answer_node; n && !n->is_root(); n = n->parent) chain.push_back(n);
    for (auto it = chain.rbegin(); it != chain.rend(); ++it)
        sample.step_rewards.push_back((*it)->reward);
    result.trajectories.push_back(std::move(sample));
}

// Expand `node` over every proposed action, filter by tau, insert and
// backpropagate. Returns true if at least one answer child was created
// (the rollout-terminating event).
inline bool expand_node(Tree& tree, SearchNode& node, SearchResult& result, const Problem& problem,
                        std::span<ActorModel* const> actors, RewardModel& prm,
                        const SearchConfig& config) {
    const std::vector<ActionKind> actions = proposed_actions(node, config);
    node.expanded = true;
    if (actions.empty()) {
        mark_exhausted(&node);
        return false;
    }

    const std::vector<ReasoningStep> prefix = path_steps(node);
    std::vector<ScoredStep> survivors;
    std::vector<ScoredStep> pruned;
    for (ActionKind action : actions) {
        std::vector<ReasoningStep> candidates = expand(node, problem, actors, action, config);
        std::vector<ScoredStep> kept =
            score_and_filter(candidates, prm, problem, prefix, config, &pruned);
        survivors.insert(survivors.end(), std::make_move_iterator(kept.begin()),
                         std::make_move_iterator(kept.end()));
    }

    for (const auto& p : pruned)
        tree.trace.push_back(TraceEvent{TraceEvent::Kind::Prune, 0, node.creation_index,
                                        p.step.action, digest_hex(p.step.content), p.reward});
    tree.pruned_count += pruned.size();

    const std::vector<SearchNode*> inserted = backpropagate(tree, node, survivors);
    bool answer_created = false;
    for (SearchNode* child : inserted) {
        if (child->is_answer()) {
            answer_created = true;
            record_trajectory(result, problem, *child);
            mark_exhausted(child);  // terminal: never expanded or re-selected
        } else if (child->depth >= config.max_depth) {
            mark_exhausted(child);  // depth cap: cannot be expanded
        }
    }
    if (inserted.empty()) mark_exhausted(&node);
    return answer_created;
}

} // namespace detail

// Run `config.rollouts` passes over a shared tree and return every
// grammar-valid complete trajectory discovered, with per-step rewards and
// tree statistics. Zero completions is an empty result, not an error; a
// rollout aborted by ExpansionError/ScoringError does not abort the search.
inline SearchResult search(const Problem& problem, std::span<ActorModel* const> actors,
                           RewardModel& prm, const SearchConfig& config) {
    config.validate();
    if (actors.empty()) throw std::invalid_argument("search: need at least one actor");

    Tree tree;
    SearchResult result;
    for (int pass = 0; pass < config.rollouts; ++pass) {
        if (tree.root->exhausted) break;
        SearchNode* node = tree.root.get();
        try {
            while (true) {
                if (!node->expanded) {
                    const bool answer_created =
                        detail::expand_node(tree, *node, result, problem, actors, prm, config);
                    if (answer_created) break;
                    if (node->exhausted) break;  // dead branch or depth cap
                }
                std::vector<SearchNode*> viable = detail::viable_children(*node);
                if (viable.empty()) {
                    detail::mark_exhausted(node);
                    break;
                }
                node = select(viable, *node, config.c_explore);
            }
        } catch (const Error& e) {
            logging::warn("rollout " + std::to_string(pass + 1) + " on " + problem.id +
                          " aborted: " + e.what());
        }
    }

    result.stats.node_count = tree.node_count;
    result.stats.max_depth = tree.max_depth_reached;
    result.stats.pruned_count = tree.pruned_count;
    result.trace = std::move(tree.trace);
    result.tree_root = std::move(tree.root);
    return result;
}

// ---------------------------------------------------------------------------
// Trace export
// ---------------------------------------------------------------------------

// One JSON line per node event, preceded by a config header. Insert events
// carry the node's final value/visit statistics so audits can recompute the
// tree without replaying the search.
inline std::string trace_to_jsonl(const SearchResult& result, const Problem& problem,
                                  const SearchConfig& config) {
    using trellis::json;
    std::string out;
    {
        json header;
        header["event"] = "config";
        header["problem_id"] = problem.id;
        header["tau"] = canonical_score(config.tau);
        header["c_explore"] = canonical_score(config.c_explore);
        header["rollouts"] = config.rollouts;
        header["max_depth"] = config.max_depth;
        header["seed"] = config.seed;
        header["schedule"] = std::string(to_string(config.schedule));
        out += header.dump();
        out += '\n';
    }
    if (result.tree_root) {
        json root_line;
        root_line["event"] = "root";
        root_line["value"] = canonical_score(result.tree_root->value);
        root_line["visits"] = result.tree_root->visits;
        out += root_line.dump();
        out += '\n';
    }
    // Final stats per node id, gathered from the tree.
    std::map<std::uint64_t, std::pair<double, int>> final_stats;
    if (result.tree_root) {
        std::vector<const SearchNode*> stack{result.tree_root.get()};
        while (!stack.empty()) {
            const SearchNode* n = stack.back();
            stack.pop_back();
            final_stats[n->creation_index] = {n->value, n->visits};
            for (const auto& c : n->children) stack.push_back(c.get());
        }
    }
    for (const auto& ev : result.trace) {
        json line;
        line["event"] = ev.kind == TraceEvent::Kind::Insert ? "insert" : "prune";
        if (ev.kind == TraceEvent::Kind::Insert) line["id"] = ev.node_id;
        line["parent"] = ev.parent_id;
        line["action"] = std::string(to_string(ev.action));
        line["content_hash"] = ev.content_hash;
        line["reward"] = canonical_score(ev.reward);
        if (ev.kind == TraceEvent::Kind::Insert) {
            const auto& [value, visits] = final_stats.at(ev.node_id);
            line["value"] = canonical_score(value);
            line["visits"] = visits;
        }
        out += line.dump();
        out += '\n';
    }
    return out;
}

} // namespace trellis::mcts
