// decay-bench: stage-wise experiment runner.
#include <iostream>

#include <torch/torch.h>

#include "cli11.hpp"
#include "decay_bench/errors.hpp"
#include "decay_bench/experiment.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/util.hpp"

using namespace decay_bench;
namespace ex = decay_bench::experiment;

namespace {

Json outcome_json(const ex::StageOutcome& o, const ex::Pipeline& p) {
    return {{"stage", ex::to_string(o.stage)},
            {"skipped", o.skipped},
            {"fingerprint", o.record.fingerprint},
            {"dir", p.stage_dir(o.stage).string()}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"decay-bench: deepfake detector performance-decay experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<int> workers;
    std::optional<std::uint64_t> seed;
    std::string log_level = "info";

    std::vector<std::pair<CLI::App*, std::optional<ex::Stage>>> cmds;
    for (auto s : ex::all_stages()) {
        auto* c = app.add_subcommand(std::string(ex::to_string(s)), "Run the " + std::string(ex::to_string(s)) + " stage");
        cmds.emplace_back(c, s);
    }
    cmds.emplace_back(app.add_subcommand("run-all", "Run every stage in order, skipping up-to-date ones"), std::nullopt);
    for (auto& [c, s] : cmds) {
        c->add_option("--config", config_path, "Experiment config (JSON)")->required();
        c->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
        c->add_option("--seed", seed, "Global seed override");
        c->add_option("--log-level", log_level, "debug|info|warn|error")
            ->check(CLI::IsMember({"debug", "info", "warn", "error"}));
    }

    CLI11_PARSE(app, argc, argv);
    log::set_min_level(log_level == "debug"  ? log::Level::debug
                       : log_level == "warn" ? log::Level::warn
                       : log_level == "error" ? log::Level::error
                                              : log::Level::info);
    try {
        auto cfg = ex::ExperimentConfig::load(config_path, seed, workers);
        torch::set_num_threads(cfg.workers);
        ex::Pipeline pipeline(cfg);
        log::info("run.config", {{"config_hash", cfg.hash()}, {"run_dir", cfg.run_dir().string()}});
        for (auto& [c, s] : cmds) {
            if (!c->parsed()) continue;
            Json out;
            if (s) {
                out = outcome_json(pipeline.run(*s), pipeline);
            } else {
                out = Json::array();
                for (const auto& o : pipeline.run_all()) out.push_back(outcome_json(o, pipeline));
                out = {{"stages", out}};
            }
            out["config_hash"] = cfg.hash();
            out["run_dir"] = cfg.run_dir().string();
            std::cout << out.dump() << "\n";
        }
    } catch (const Error& e) {
        log::error("run.failed", {{"error", e.kind()}, {"message", e.what()}});
        std::cout << Json{{"error", e.kind()}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        log::error("run.failed", {{"error", "InternalError"}, {"message", e.what()}});
        std::cout << Json{{"error", "InternalError"}, {"message", e.what()}}.dump() << "\n";
        return 3;
    }
    return 0;
}
