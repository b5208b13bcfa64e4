// trellis: PRM-guided tree search over reasoning trajectories.
//
// Subcommands: select, search, build-data, rerank, verify-traces. One JSON
// config file drives everything; explicit flags beat environment variables,
// which beat the file.

#include <CLI11.hpp>

#include <trellis/log.hpp>
#include <trellis/pipeline.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> out_dir;
    bool verbose = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_path, "run configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", opts.seed, "override the run seed");
    cmd->add_option("--workers", opts.workers, "parallel worker cap");
    cmd->add_option("--out-dir", opts.out_dir, "override the output directory");
    cmd->add_flag("-v,--verbose", opts.verbose, "info-level logging");
}

trellis::pipeline::RunConfig load(const CommonOpts& opts) {
    if (opts.verbose) trellis::logging::set_level(trellis::logging::Level::Info);
    auto config = trellis::pipeline::load_config(opts.config_path);
    if (opts.seed) config.seed = *opts.seed;
    if (opts.workers) config.workers = *opts.workers;
    if (opts.out_dir) config.out_dir = *opts.out_dir;
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PRM-guided reasoning trajectory search, data construction and reranking"};
    app.require_subcommand(1);

    CommonOpts select_opts, search_opts, build_opts, rerank_opts;
    std::string id_list;
    std::string traces_dir;

    CLI::App* select_cmd =
        app.add_subcommand("select", "variance-prioritize problems and compute quotas");
    add_common(select_cmd, select_opts);

    CLI::App* search_cmd = app.add_subcommand("search", "run the tree search per problem");
    add_common(search_cmd, search_opts);
    search_cmd->add_option("--ids", id_list, "file with one problem id per line");

    CLI::App* build_cmd =
        app.add_subcommand("build-data", "construct, QC and export training records");
    add_common(build_cmd, build_opts);

    CLI::App* rerank_cmd = app.add_subcommand("rerank", "best-of-n accuracy evaluation");
    add_common(rerank_cmd, rerank_opts);

    CLI::App* verify_cmd = app.add_subcommand("verify-traces", "re-check persisted search traces");
    verify_cmd->add_option("traces_dir", traces_dir, "directory of trace .jsonl files")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (select_cmd->parsed()) {
            const auto summary = trellis::pipeline::cmd_select(load(select_opts));
            std::cout << "select: " << summary.prioritized << " of " << summary.eligible
                      << " eligible problems prioritized (corpus " << summary.problems << ")\n"
                      << "  report: " << summary.report_path.string() << "\n"
                      << "  ids:    " << summary.ids_path.string() << "\n";
            return 0;
        }
        if (search_cmd->parsed()) {
            std::optional<std::filesystem::path> ids;
            if (!id_list.empty()) ids = id_list;
            const auto summary = trellis::pipeline::cmd_search(load(search_opts), ids);
            std::cout << "search: " << summary.trajectories << " trajectories over "
                      << summary.problems << " problems (" << summary.nodes << " nodes, "
                      << summary.pruned << " pruned)\n";
            for (const auto& id : summary.failures) std::cout << "  failed: " << id << "\n";
            return summary.failures.empty() ? 0 : 1;
        }
        if (build_cmd->parsed()) {
            const auto summary = trellis::pipeline::cmd_build_data(load(build_opts));
            std::cout << "build-data: " << summary.manifest.total_records << " records exported ("
                      << summary.mcts_records << " search paths, " << summary.injection_records
                      << " injected, " << summary.dialogue_records << " dialogue; "
                      << summary.qc_rejected << " QC-rejected)\n";
            for (const auto& f : summary.manifest.files)
                std::cout << "  " << f.path << "  " << f.records << " records  " << f.sha << "\n";
            return 0;
        }
        if (rerank_cmd->parsed()) {
            const auto summary = trellis::pipeline::cmd_rerank(load(rerank_opts));
            std::cout << "rerank:\n";
            for (const auto& row : summary.rows)
                std::cout << "  " << row.strategy << " n=" << row.n << "  accuracy "
                          << row.accuracy << " over " << row.problems << " problems\n";
            std::cout << "  table: " << summary.csv_path.string() << "\n";
            return 0;
        }
        if (verify_cmd->parsed()) {
            const auto checks = trellis::pipeline::cmd_verify_traces(traces_dir);
            std::size_t failed = 0;
            for (const auto& check : checks) {
                std::cout << (check.ok ? "ok   " : "FAIL ") << check.file.filename().string();
                if (!check.ok) {
                    std::cout << "  " << check.detail;
                    ++failed;
                }
                std::cout << "\n";
            }
            std::cout << checks.size() - failed << "/" << checks.size() << " traces verified\n";
            return failed == 0 ? 0 : 1;
        }
    } catch (const trellis::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
