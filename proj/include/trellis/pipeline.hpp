#pragma once

#include "trellis/datagen.hpp"
#include "trellis/gateway.hpp"
#include "trellis/inference.hpp"
#include "trellis/json_codec.hpp"
#include "trellis/jsonl.hpp"
#include "trellis/log.hpp"
#include "trellis/mcts.hpp"
#include "trellis/remote.hpp"
#include "trellis/scripted.hpp"
#include "trellis/selection.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

// Pipeline commands behind the CLI: select, search, build-data, rerank and
// verify-traces, all driven by one JSON run configuration. Every command is
// rerunnable and, under scripted models with a fixed seed, byte-
// deterministic in all outputs.

namespace trellis::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct EndpointsConfig {
    std::string mode = "scripted";  // "scripted" | "remote"
    std::uint64_t scripted_seed = 0;
    int scripted_actors = 3;
    std::optional<fs::path> script_file;
    std::vector<EndpointConfig> actors;   // remote mode
    std::optional<EndpointConfig> prm;    // remote mode
};

struct SelectionConfig {
    double top_fraction = 0.25;
    long long total_quota = 160000;
    double accuracy_ceiling = 0.70;
};

struct DatagenConfig {
    double confidence_floor = 0.6;
    double coverage_cap = 0.4;
    int injections_per_reference = 1;
};

struct RunConfig {
    std::optional<std::uint64_t> seed;
    int workers = 1;
    fs::path corpus;
    fs::path rollout_scores;
    fs::path problem_stats;
    fs::path concept_counts;
    fs::path references;
    fs::path student_answers;
    fs::path out_dir = "out";
    EndpointsConfig endpoints;
    mcts::SearchConfig search;
    inference::BonConfig bon;
    std::vector<int> bon_n_values;                       // rerank sweep; empty -> {bon.n}
    std::vector<inference::BonStrategy> bon_strategies;  // empty -> {bon.strategy}
    SelectionConfig selection;
    DatagenConfig datagen;

    std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }

    // Spec'd precedence below explicit flags: environment beats the file.
    void apply_env() {
        if (const char* s = std::getenv("TRELLIS_SEED"); s && *s)
            seed = static_cast<std::uint64_t>(std::strtoull(s, nullptr, 10));
        if (const char* w = std::getenv("TRELLIS_WORKERS"); w && *w)
            workers = static_cast<int>(std::strtol(w, nullptr, 10));
    }
};

namespace detail {

inline EndpointConfig parse_endpoint(const nlohmann::ordered_json& j) {
    EndpointConfig e;
    e.base_url = j.at("base_url").get<std::string>();
    e.path = j.value("path", e.path);
    e.model = j.value("model", e.model);
    e.api_key_env = j.value("api_key_env", e.api_key_env);
    e.timeout_sec = j.value("timeout_sec", e.timeout_sec);
    e.max_in_flight = j.value("max_in_flight", e.max_in_flight);
    e.request_logprobs = j.value("request_logprobs", e.request_logprobs);
    if (j.contains("retry")) {
        const auto& r = j.at("retry");
        e.retry.max_retries = r.value("max_retries", e.retry.max_retries);
        e.retry.base_delay_ms = r.value("base_delay_ms", e.retry.base_delay_ms);
        e.retry.growth = r.value("growth", e.retry.growth);
    }
    return e;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

} // namespace detail

inline RunConfig load_config(const fs::path& file) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(read_file(file));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
    }
    const fs::path base = file.has_parent_path() ? file.parent_path() : fs::path(".");
    RunConfig c;
    try {
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        c.workers = j.value("workers", c.workers);
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            auto get = [&](const char* key) -> fs::path {
                return p.contains(key) ? detail::resolve(base, p.at(key).get<std::string>())
                                       : fs::path{};
            };
            c.corpus = get("corpus");
            c.rollout_scores = get("rollout_scores");
            c.problem_stats = get("problem_stats");
            c.concept_counts = get("concept_counts");
            c.references = get("references");
            c.student_answers = get("student_answers");
            if (p.contains("out_dir")) c.out_dir = detail::resolve(base, p.at("out_dir").get<std::string>());
        }
        if (j.contains("endpoints")) {
            const auto& e = j.at("endpoints");
            c.endpoints.mode = e.value("mode", c.endpoints.mode);
            if (e.contains("scripted")) {
                const auto& s = e.at("scripted");
                c.endpoints.scripted_seed = s.value("seed", c.endpoints.scripted_seed);
                c.endpoints.scripted_actors = s.value("actors", c.endpoints.scripted_actors);
                if (s.contains("script_file"))
                    c.endpoints.script_file =
                        detail::resolve(base, s.at("script_file").get<std::string>());
            }
            if (e.contains("actors"))
                for (const auto& a : e.at("actors"))
                    c.endpoints.actors.push_back(detail::parse_endpoint(a));
            if (e.contains("prm")) c.endpoints.prm = detail::parse_endpoint(e.at("prm"));
        }
        if (j.contains("search")) {
            const auto& s = j.at("search");
            c.search.k_actors = s.value("k_actors", c.search.k_actors);
            c.search.k_prm = s.value("k_prm", c.search.k_prm);
            c.search.tau = s.value("tau", c.search.tau);
            c.search.c_explore = s.value("c_explore", c.search.c_explore);
            c.search.max_depth = s.value("max_depth", c.search.max_depth);
            c.search.rollouts = s.value("rollouts", c.search.rollouts);
            c.search.confidence_floor = s.value("confidence_floor", c.search.confidence_floor);
            c.search.expand_temperature = s.value("expand_temperature", c.search.expand_temperature);
            if (s.contains("schedule")) {
                auto sched = mcts::schedule_from_string(s.at("schedule").get<std::string>());
                if (!sched) throw ConfigError("unknown search.schedule: " +
                                              s.at("schedule").get<std::string>());
                c.search.schedule = *sched;
            }
        }
        if (j.contains("bon")) {
            const auto& b = j.at("bon");
            c.bon.n = b.value("n", c.bon.n);
            c.bon.temperature_low = b.value("temperature_low", c.bon.temperature_low);
            c.bon.temperature_high = b.value("temperature_high", c.bon.temperature_high);
            if (b.contains("strategy")) {
                auto st = inference::strategy_from_string(b.at("strategy").get<std::string>());
                if (!st) throw ConfigError("unknown bon.strategy: " +
                                           b.at("strategy").get<std::string>());
                c.bon.strategy = *st;
            }
            if (b.contains("accumulate"))
                c.bon.accumulate = b.at("accumulate").get<std::string>() == "mean"
                                       ? inference::Accumulate::Mean
                                       : inference::Accumulate::Sum;
            if (b.contains("n_values"))
                c.bon_n_values = b.at("n_values").get<std::vector<int>>();
            if (b.contains("strategies"))
                for (const auto& s : b.at("strategies")) {
                    auto st = inference::strategy_from_string(s.get<std::string>());
                    if (!st) throw ConfigError("unknown strategy in bon.strategies");
                    c.bon_strategies.push_back(*st);
                }
        }
        if (j.contains("selection")) {
            const auto& s = j.at("selection");
            c.selection.top_fraction = s.value("top_fraction", c.selection.top_fraction);
            c.selection.total_quota = s.value("total_quota", c.selection.total_quota);
            c.selection.accuracy_ceiling = s.value("accuracy_ceiling", c.selection.accuracy_ceiling);
        }
        if (j.contains("datagen")) {
            const auto& d = j.at("datagen");
            c.datagen.confidence_floor = d.value("confidence_floor", c.datagen.confidence_floor);
            c.datagen.coverage_cap = d.value("coverage_cap", c.datagen.coverage_cap);
            c.datagen.injections_per_reference =
                d.value("injections_per_reference", c.datagen.injections_per_reference);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + file.string() + ": " + e.what());
    }
    c.apply_env();
    return c;
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

struct ModelSet {
    std::vector<std::unique_ptr<ActorModel>> owned_actors;
    std::unique_ptr<RewardModel> prm;
    std::vector<ActorModel*> actors;  // raw view over owned_actors
};

namespace detail {

inline void load_script_file(const fs::path& file, std::uint64_t seed,
                             std::map<std::string, std::map<ScriptKey, std::vector<WeightedText>>>&
                                 actor_scripts,
                             ScriptedReward& prm) {
    const auto j = nlohmann::ordered_json::parse(read_file(file));
    if (j.contains("actors")) {
        for (const auto& [actor_id, entries] : j.at("actors").items()) {
            for (const auto& entry : entries) {
                ScriptKey key;
                key.problem_id = entry.at("problem_id").get<std::string>();
                auto action = action_from_string(entry.at("action").get<std::string>());
                if (!action) throw ConfigError("script file: unknown action");
                key.action = *action;
                key.prefix_hash = entry.value("prefix_hash", std::uint64_t{0});
                std::vector<WeightedText> outcomes;
                for (const auto& o : entry.at("outcomes"))
                    outcomes.push_back(WeightedText{o.at("text").get<std::string>(),
                                                    o.value("weight", 1.0)});
                actor_scripts[actor_id][key] = std::move(outcomes);
            }
        }
    }
    if (j.contains("prm") && j.at("prm").contains("content_scores")) {
        for (const auto& [content, v] : j.at("prm").at("content_scores").items()) {
            if (v.is_number()) {
                prm.script_content(content, v.get<double>());
            } else {
                CritiqueScript cs;
                cs.scores = v.at("scores").get<std::vector<double>>();
                if (v.contains("label")) {
                    auto l = step_label_from_string(v.at("label").get<std::string>());
                    if (!l) throw ConfigError("script file: unknown label");
                    cs.label = *l;
                }
                cs.explanation = v.value("explanation", cs.explanation);
                prm.script_content(content, std::move(cs));
            }
        }
    }
    (void)seed;
}

} // namespace detail

inline ModelSet build_models(const RunConfig& config) {
    ModelSet set;
    if (config.endpoints.mode == "scripted") {
        const std::uint64_t seed = config.endpoints.scripted_seed ^ config.seed_or(0);
        auto prm = std::make_unique<ScriptedReward>(seed);
        std::map<std::string, std::map<ScriptKey, std::vector<WeightedText>>> scripts;
        if (config.endpoints.script_file)
            detail::load_script_file(*config.endpoints.script_file, seed, scripts, *prm);
        for (int i = 0; i < config.endpoints.scripted_actors; ++i) {
            const std::string id = "actor-" + std::to_string(i);
            auto it = scripts.find(id);
            set.owned_actors.push_back(std::make_unique<ScriptedActor>(
                id, rng::combine(seed, static_cast<std::uint64_t>(i)),
                it == scripts.end() ? std::map<ScriptKey, std::vector<WeightedText>>{}
                                    : it->second));
        }
        set.prm = std::move(prm);
    } else if (config.endpoints.mode == "remote") {
        if (config.endpoints.actors.empty())
            throw ConfigError("endpoints.actors is empty in remote mode");
        if (!config.endpoints.prm) throw ConfigError("endpoints.prm missing in remote mode");
        for (std::size_t i = 0; i < config.endpoints.actors.size(); ++i)
            set.owned_actors.push_back(std::make_unique<RemoteActor>(
                "remote-actor-" + std::to_string(i), config.endpoints.actors[i]));
        set.prm = std::make_unique<RemoteReward>("remote-prm", *config.endpoints.prm);
    } else {
        throw ConfigError("unknown endpoints.mode: " + config.endpoints.mode);
    }
    for (auto& a : set.owned_actors) set.actors.push_back(a.get());
    return set;
}

// ---------------------------------------------------------------------------
// Input loaders
// ---------------------------------------------------------------------------

namespace detail {

inline void require_file(const fs::path& p, const std::string& what) {
    if (p.empty()) throw ConfigError("paths." + what + " is not set");
    if (!fs::exists(p)) throw ConfigError("paths." + what + ": no such file: " + p.string());
}

inline std::vector<Problem> load_corpus(const fs::path& path) {
    std::vector<Problem> out;
    for (const auto& j : read_jsonl(path)) out.push_back(codec::decode_problem(j));
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

struct SelectSummary {
    std::size_t problems = 0;
    std::size_t eligible = 0;
    std::size_t prioritized = 0;
    fs::path report_path;
    fs::path ids_path;
};

// Variance-prioritize problems from preliminary rollout scores, drop the
// too-easy and text-only-solvable ones, and compute stratified quotas.
inline SelectSummary cmd_select(const RunConfig& config) {
    detail::require_file(config.corpus, "corpus");
    detail::require_file(config.rollout_scores, "rollout_scores");
    detail::require_file(config.problem_stats, "problem_stats");
    detail::require_file(config.concept_counts, "concept_counts");

    const std::vector<Problem> corpus = detail::load_corpus(config.corpus);
    if (corpus.empty()) throw EmptyCorpus("corpus " + config.corpus.string() + " has no problems");

    std::map<std::string, std::vector<std::vector<double>>> rollout_scores;
    for (const auto& j : read_jsonl(config.rollout_scores))
        rollout_scores[j.at("problem_id").get<std::string>()] =
            j.at("solutions").get<std::vector<std::vector<double>>>();

    std::vector<selection::ProblemStats> stats;
    for (const auto& j : read_jsonl(config.problem_stats))
        stats.push_back(selection::ProblemStats{j.at("problem_id").get<std::string>(),
                                                j.at("model_accuracy").get<double>(),
                                                j.at("text_only_solvable").get<bool>()});

    std::vector<selection::CellCount> counts;
    for (const auto& j : read_jsonl(config.concept_counts)) {
        auto subject = subject_from_string(j.at("subject").get<std::string>());
        if (!subject) throw ConfigError("concept_counts: unknown subject");
        counts.push_back(selection::CellCount{*subject, j.at("grade").get<int>(),
                                              j.at("count").get<long long>()});
    }

    const bool have_stats = !stats.empty();
    const std::vector<std::string> eligible =
        selection::difficulty_filter(stats, config.selection.accuracy_ceiling);
    const std::set<std::string> eligible_set(eligible.begin(), eligible.end());

    std::vector<selection::SelectionReport> reports;
    for (const auto& problem : corpus) {
        auto it = rollout_scores.find(problem.id);
        if (it == rollout_scores.end() || it->second.size() < 2) continue;
        if (have_stats && !eligible_set.count(problem.id)) continue;
        const auto mv = selection::reward_variance(it->second);
        reports.push_back(selection::SelectionReport{problem.id, mv.variance, mv.mean, false});
    }
    if (reports.empty())
        throw EmptyCorpus("no problems with at least 2 scored solutions after filtering");

    const std::vector<std::string> chosen =
        selection::select_samples(reports, config.selection.top_fraction);
    const std::set<std::string> chosen_set(chosen.begin(), chosen.end());
    for (auto& r : reports) r.prioritized = chosen_set.count(r.problem_id) > 0;

    const auto quotas = selection::stratified_quotas(counts, config.selection.total_quota);

    SelectSummary summary;
    summary.problems = corpus.size();
    summary.eligible = reports.size();
    summary.prioritized = chosen.size();
    summary.report_path = config.out_dir / "selection" / "report.jsonl";
    summary.ids_path = config.out_dir / "selection" / "ids.txt";

    std::vector<nlohmann::ordered_json> report_rows;
    for (const auto& r : reports) {
        nlohmann::ordered_json j;
        j["problem_id"] = r.problem_id;
        j["variance"] = canonical_score(r.variance);
        j["mean_reward"] = canonical_score(r.mean_reward);
        j["prioritized"] = r.prioritized;
        report_rows.push_back(std::move(j));
    }
    write_jsonl_atomic(summary.report_path, report_rows);

    std::string ids_text;
    for (const auto& id : chosen) {
        ids_text += id;
        ids_text += '\n';
    }
    write_file_atomic(summary.ids_path, ids_text);

    nlohmann::ordered_json qj;
    qj["total"] = config.selection.total_quota;
    qj["quotas"] = nlohmann::ordered_json::array();
    for (const auto& [key, quota] : quotas) {
        nlohmann::ordered_json cell;
        cell["subject"] = std::string(to_string(key.first));
        cell["grade"] = key.second;
        cell["quota"] = quota;
        qj["quotas"].push_back(std::move(cell));
    }
    write_file_atomic(config.out_dir / "selection" / "quotas.json", qj.dump(2) + "\n");
    return summary;
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

struct SearchSummary {
    std::size_t problems = 0;
    std::size_t trajectories = 0;
    std::size_t nodes = 0;
    std::size_t pruned = 0;
    std::vector<std::string> failures;  // problem ids that errored out
};

// Run the tree search per problem (problems in parallel), persisting one
// trace file per problem plus a flattened trajectory store.
inline SearchSummary cmd_search(const RunConfig& config,
                                const std::optional<fs::path>& id_list = {}) {
    detail::require_file(config.corpus, "corpus");
    std::vector<Problem> corpus = detail::load_corpus(config.corpus);

    if (id_list) {
        detail::require_file(*id_list, "id_list");
        std::set<std::string> wanted;
        {
            std::ifstream in(*id_list);
            std::string line;
            while (std::getline(in, line))
                if (!line.empty()) wanted.insert(line);
        }
        std::map<std::string, Problem> by_id;
        for (auto& p : corpus) by_id[p.id] = std::move(p);
        corpus.clear();
        for (const auto& id : wanted) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw ConfigError("id list names unknown problem: " + id);
            corpus.push_back(std::move(it->second));
        }
    }

    ModelSet models = build_models(config);
    mcts::SearchConfig search_config = config.search;
    search_config.seed = config.seed_or(search_config.seed);

    struct PerProblem {
        std::optional<mcts::SearchResult> result;
        std::string error;
    };
    std::vector<PerProblem> results(corpus.size());

    const int workers = std::max(1, config.workers);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= corpus.size()) return;
            try {
                results[i].result = mcts::search(corpus[i],
                                                 std::span<ActorModel* const>(models.actors),
                                                 *models.prm, search_config);
            } catch (const std::exception& e) {
                results[i].error = e.what();
            }
        }
    };
    {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SearchSummary summary;
    summary.problems = corpus.size();
    std::vector<nlohmann::ordered_json> store_rows;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!results[i].result) {
            summary.failures.push_back(corpus[i].id);
            logging::error("search failed for " + corpus[i].id + ": " + results[i].error);
            continue;
        }
        const auto& result = *results[i].result;
        summary.trajectories += result.trajectories.size();
        summary.nodes += result.stats.node_count;
        summary.pruned += result.stats.pruned_count;
        write_file_atomic(config.out_dir / "traces" / (corpus[i].id + ".jsonl"),
                          mcts::trace_to_jsonl(result, corpus[i], search_config));
        for (const auto& sample : result.trajectories) {
            nlohmann::ordered_json j = codec::encode(sample.trajectory);
            nlohmann::ordered_json rewards = nlohmann::ordered_json::array();
            for (double r : sample.step_rewards) rewards.push_back(canonical_score(r));
            j["step_rewards"] = std::move(rewards);
            j["terminal_reward"] = canonical_score(sample.terminal_reward);
            store_rows.push_back(std::move(j));
        }
    }
    write_jsonl_atomic(config.out_dir / "trajectories.jsonl", store_rows);

    nlohmann::ordered_json sj;
    sj["problems"] = summary.problems;
    sj["trajectories"] = summary.trajectories;
    sj["nodes"] = summary.nodes;
    sj["pruned"] = summary.pruned;
    sj["failures"] = summary.failures;
    write_file_atomic(config.out_dir / "search_summary.json", sj.dump(2) + "\n");
    return summary;
}

// ---------------------------------------------------------------------------
// build-data
// ---------------------------------------------------------------------------

struct BuildDataSummary {
    std::size_t mcts_records = 0;
    std::size_t injection_records = 0;
    std::size_t dialogue_records = 0;
    std::size_t qc_rejected = 0;
    datagen::Manifest manifest;
};

// Construct training records from searched trajectories (two-stage filter),
// error-injected references and dialogue critiques; QC-filter and export
// partitioned by curriculum stage.
inline BuildDataSummary cmd_build_data(const RunConfig& config) {
    if (!config.seed)
        throw ConfigError("seed is mandatory for build-data runs (writes datasets)");
    ModelSet models = build_models(config);
    std::vector<datagen::DatasetRecord> records;
    BuildDataSummary summary;

    // 1) Searched trajectories -> stepwise records (stage 1).
    const fs::path store = config.out_dir / "trajectories.jsonl";
    if (fs::exists(store)) {
        std::map<std::string, Problem> problems;
        if (!config.corpus.empty() && fs::exists(config.corpus))
            for (auto& p : detail::load_corpus(config.corpus)) problems[p.id] = std::move(p);
        std::vector<std::pair<Trajectory, std::vector<StepCritique>>> candidates;
        for (const auto& j : read_jsonl(store)) {
            Trajectory t = codec::decode_trajectory(j);
            auto it = problems.find(t.problem_id);
            const Problem problem = it != problems.end()
                                        ? it->second
                                        : make_problem(t.problem_id, "(unknown)");
            std::vector<StepCritique> critiques = models.prm->critique_full(problem, t);
            candidates.emplace_back(std::move(t), std::move(critiques));
        }
        std::map<std::string, std::vector<StepCritique>> critique_of;
        for (const auto& [t, c] : candidates) critique_of[encode_text(t)] = c;
        for (const Trajectory& t :
             datagen::filter_trajectories(candidates, config.datagen.confidence_floor)) {
            datagen::DatasetRecord r;
            r.problem_id = t.problem_id;
            r.format = datagen::RecordFormat::Stepwise;
            r.source = datagen::RecordSource::MctsPath;
            r.curriculum_stage = datagen::CurriculumStage::Stage1Stepwise;
            for (const auto& s : t.steps) r.step_texts.push_back(s.content);
            r.steps = critique_of.at(encode_text(t));
            records.push_back(std::move(r));
            ++summary.mcts_records;
        }
    }

    // 2) Error-injected references -> stepwise records (stage 1).
    if (!config.references.empty() && fs::exists(config.references)) {
        const auto refs = read_jsonl(config.references);
        std::uint64_t counter = 0;
        for (const auto& j : refs) {
            const std::string problem_id = j.at("problem_id").get<std::string>();
            const auto steps = j.at("steps").get<std::vector<std::string>>();
            if (steps.empty()) continue;
            for (int k = 0; k < config.datagen.injections_per_reference; ++k) {
                std::uint64_t h = rng::combine(config.seed_or(0), problem_id);
                h = rng::combine(h, counter++);
                datagen::InjectionSpec spec;
                spec.step_index = static_cast<std::size_t>(rng::mix(h) % steps.size());
                spec.error_type = kAllStepLabels[1 + (rng::mix(h ^ 0x5eedull) % 8)];
                spec.generator_id = models.actors.front()->id();
                try {
                    auto injected = datagen::inject_error(steps, spec, *models.actors.front());
                    datagen::DatasetRecord r;
                    r.problem_id = problem_id;
                    r.format = datagen::RecordFormat::Stepwise;
                    r.source = datagen::RecordSource::ErrorInjection;
                    r.curriculum_stage = datagen::CurriculumStage::Stage1Stepwise;
                    r.step_texts = injected.steps;
                    r.steps = injected.gold;
                    records.push_back(std::move(r));
                    ++summary.injection_records;
                } catch (const InjectionFailed& e) {
                    logging::warn(std::string("injection skipped: ") + e.what());
                }
            }
        }
    }

    // 3) Student answers -> dialogue critique records (stage 2).
    if (!config.student_answers.empty() && fs::exists(config.student_answers)) {
        std::map<std::string, Problem> problems;
        if (!config.corpus.empty() && fs::exists(config.corpus))
            for (auto& p : detail::load_corpus(config.corpus)) problems[p.id] = std::move(p);
        for (const auto& j : read_jsonl(config.student_answers)) {
            const std::string problem_id = j.at("problem_id").get<std::string>();
            const std::string answer = j.at("answer").get<std::string>();
            auto it = problems.find(problem_id);
            const Problem problem = it != problems.end()
                                        ? it->second
                                        : make_problem(problem_id, "(unknown)");
            try {
                records.push_back(datagen::build_dialogue_critique(problem, answer, *models.prm));
                ++summary.dialogue_records;
            } catch (const SegmentationError& e) {
                logging::warn(std::string("dialogue skipped: ") + e.what());
            }
        }
    }

    // 4) QC and export.
    datagen::QcConfig qc;
    qc.coverage_cap = config.datagen.coverage_cap;
    qc.seed = config.seed_or(0);
    datagen::QcOutcome outcome = datagen::qc_filters(records, {}, qc);
    summary.qc_rejected = outcome.rejections.size();

    std::vector<nlohmann::ordered_json> qc_rows;
    for (const auto& rej : outcome.rejections) {
        nlohmann::ordered_json j;
        j["record_index"] = rej.record_index;
        j["rule"] = rej.rule;
        j["detail"] = rej.detail;
        qc_rows.push_back(std::move(j));
    }
    write_jsonl_atomic(config.out_dir / "qc_report.jsonl", qc_rows);

    summary.manifest = datagen::export_dataset(outcome.retained, config.out_dir / "datasets");
    return summary;
}

// ---------------------------------------------------------------------------
// rerank
// ---------------------------------------------------------------------------

struct RerankSummary {
    std::vector<inference::AccuracyRow> rows;
    fs::path csv_path;
};

// Best-of-n evaluation across the configured n values and strategies.
inline RerankSummary cmd_rerank(const RunConfig& config) {
    detail::require_file(config.corpus, "corpus");
    const std::vector<Problem> corpus = detail::load_corpus(config.corpus);
    for (const auto& p : corpus)
        if (!p.ground_truth)
            throw ConfigError("rerank needs gold answers; problem " + p.id + " has none");

    ModelSet models = build_models(config);
    std::vector<int> ns = config.bon_n_values.empty() ? std::vector<int>{config.bon.n}
                                                      : config.bon_n_values;
    std::vector<inference::BonStrategy> strategies =
        config.bon_strategies.empty() ? std::vector<inference::BonStrategy>{config.bon.strategy}
                                      : config.bon_strategies;
    std::vector<inference::BonConfig> configs;
    for (auto strategy : strategies)
        for (int n : ns) {
            inference::BonConfig b = config.bon;
            b.n = n;
            b.strategy = strategy;
            b.seed = config.seed_or(b.seed);
            configs.push_back(b);
        }

    std::vector<inference::AuditEntry> audit;
    RerankSummary summary;
    summary.rows =
        inference::evaluate_suite(corpus, *models.actors.front(), *models.prm, configs, &audit);

    std::string csv = "strategy,n,accuracy,problems\n";
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    for (const auto& row : summary.rows) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", row.accuracy);
        csv += row.strategy + "," + std::to_string(row.n) + "," + buf + "," +
               std::to_string(row.problems) + "\n";
        nlohmann::ordered_json j;
        j["strategy"] = row.strategy;
        j["n"] = row.n;
        j["accuracy"] = canonical_score(row.accuracy);
        j["problems"] = row.problems;
        table.push_back(std::move(j));
    }
    summary.csv_path = config.out_dir / "rerank" / "accuracy.csv";
    write_file_atomic(summary.csv_path, csv);
    write_file_atomic(config.out_dir / "rerank" / "accuracy.json", table.dump(2) + "\n");

    std::vector<nlohmann::ordered_json> audit_rows;
    for (const auto& a : audit) {
        nlohmann::ordered_json j;
        j["problem_id"] = a.problem_id;
        j["strategy"] = a.strategy;
        j["n"] = a.n;
        j["slot"] = a.slot;
        j["temperature"] = canonical_score(a.temperature);
        j["answer"] = a.answer;
        j["accumulated"] = canonical_score(a.accumulated);
        j["selected"] = a.selected;
        audit_rows.push_back(std::move(j));
    }
    write_jsonl_atomic(config.out_dir / "rerank" / "audit.jsonl", audit_rows);
    return summary;
}

// ---------------------------------------------------------------------------
// verify-traces
// ---------------------------------------------------------------------------

struct TraceCheck {
    fs::path file;
    bool ok = false;
    std::string detail;
};

// Re-validate persisted traces: every inserted node's reward clears the
// recorded tau, and the recorded value/visit statistics match an exact
// recount over the reconstructed tree.
inline TraceCheck verify_trace_file(const fs::path& file) {
    TraceCheck check{file, false, ""};
    struct Node {
        std::uint64_t parent;
        double reward;
        double value;
        int visits;
        std::vector<std::uint64_t> children;
    };
    std::map<std::uint64_t, Node> nodes;
    nodes[0] = Node{0, 0.0, 0.0, 0, {}};
    double tau = 0.0;
    bool seen_config = false;
    double root_value = 0.0;
    int root_visits = -1;

    try {
        for (const auto& j : read_jsonl(file)) {
            const std::string event = j.at("event").get<std::string>();
            if (event == "config") {
                tau = j.at("tau").get<double>();
                seen_config = true;
            } else if (event == "insert") {
                const auto id = j.at("id").get<std::uint64_t>();
                const auto parent = j.at("parent").get<std::uint64_t>();
                const double reward = j.at("reward").get<double>();
                if (reward < tau - 1e-6) {
                    check.detail = "node " + std::to_string(id) + " reward " +
                                   std::to_string(reward) + " below tau";
                    return check;
                }
                nodes[id] = Node{parent, reward, j.at("value").get<double>(),
                                 j.at("visits").get<int>(), {}};
                nodes.at(parent).children.push_back(id);
            } else if (event == "root") {
                root_value = j.at("value").get<double>();
                root_visits = j.at("visits").get<int>();
            } else if (event == "prune") {
                // Recorded rewards are quantized to 6 decimals; allow that slack.
                if (j.at("reward").get<double>() > tau + 1e-6) {
                    check.detail = "pruned candidate with reward >= tau";
                    return check;
                }
            }
        }
    } catch (const std::exception& e) {
        check.detail = std::string("parse error: ") + e.what();
        return check;
    }
    if (!seen_config) {
        check.detail = "missing config header";
        return check;
    }

    // Recount: visits = subtree insertions (self included), value = mean of
    // subtree rewards. Children recurse before parents; ids are creation-
    // ordered so a reverse sweep suffices.
    std::map<std::uint64_t, std::pair<double, long long>> acc;  // id -> (reward sum, count)
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        const auto id = it->first;
        double sum = id == 0 ? 0.0 : it->second.reward;
        long long count = id == 0 ? 0 : 1;
        for (auto child : it->second.children) {
            sum += acc.at(child).first;
            count += acc.at(child).second;
        }
        acc[id] = {sum, count};
        const double expect_value = count == 0 ? 0.0 : sum / static_cast<double>(count);
        const double got_value = id == 0 ? root_value : it->second.value;
        const long long got_visits = id == 0 ? root_visits : it->second.visits;
        if (id == 0 && root_visits < 0) continue;  // no root line recorded
        if (got_visits != count) {
            check.detail = "visit recount mismatch at node " + std::to_string(id);
            return check;
        }
        // Recorded values are canonicalized to 6 decimals; allow that much slack.
        if (std::abs(got_value - expect_value) > 2e-6) {
            check.detail = "value recount mismatch at node " + std::to_string(id);
            return check;
        }
    }
    check.ok = true;
    return check;
}

inline std::vector<TraceCheck> cmd_verify_traces(const fs::path& traces_dir) {
    if (!fs::exists(traces_dir))
        throw ConfigError("traces directory does not exist: " + traces_dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(traces_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<TraceCheck> checks;
    for (const auto& f : files) checks.push_back(verify_trace_file(f));
    return checks;
}

} // namespace trellis::pipeline
