// decay-bench-data: corpus utilities (synthetic generation, directory scans,
// baseline identity-embedder asset).
#include <iostream>

#include "cli11.hpp"
#include "decay_bench/baseline.hpp"
#include "decay_bench/errors.hpp"
#include "decay_bench/extraction.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/manifest.hpp"
#include "decay_bench/synth.hpp"
#include "decay_bench/util.hpp"

using namespace decay_bench;

int main(int argc, char** argv) {
    CLI::App app{"decay-bench-data: build video manifests and synthetic corpora"};
    app.require_subcommand(1);

    std::string out_dir, generation = "A", config_path;
    std::uint64_t seed = 0;
    int identities = 40;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic two-generation video corpus");
    synth_cmd->add_option("--out", out_dir, "Output directory")->required();
    synth_cmd->add_option("--generation", generation, "A or B")->check(CLI::IsMember({"A", "B", "a", "b"}));
    synth_cmd->add_option("--config", config_path, "JSON generator settings");
    synth_cmd->add_option("--identities", identities, "Number of identities");
    synth_cmd->add_option("--seed", seed, "Seed");

    std::string root, version, manifest_out;
    auto* scan_cmd = app.add_subcommand("scan", "Build a manifest by walking a corpus directory");
    scan_cmd->add_option("--root", root, "Corpus root")->required();
    scan_cmd->add_option("--version", version, "dataset_version value")->required();
    scan_cmd->add_option("--out", manifest_out, "Manifest path (.csv or .json)")->required();

    std::string index_path, asset_out;
    int epochs = 10;
    auto* base_cmd = app.add_subcommand("train-baseline", "Train the identity embedder asset from an extracted frame index");
    base_cmd->add_option("--index", index_path, "Frame index JSON written by the extract stage")->required();
    base_cmd->add_option("--out", asset_out, "Asset path (default <assets>/baseline/identity_embedder.ckpt)");
    base_cmd->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    base_cmd->add_option("--seed", seed, "Seed");

    CLI11_PARSE(app, argc, argv);
    try {
        if (synth_cmd->parsed()) {
            auto cfg = config_path.empty() ? synth::SynthConfig{} : synth::SynthConfig::from_json(read_json(config_path));
            if (synth_cmd->count("--identities")) cfg.identities = identities;
            if (synth_cmd->count("--seed")) cfg.seed = seed;
            const auto m = synth::generate_corpus(out_dir, synth::parse_generation(generation), cfg);
            std::cout << Json{{"manifest", (fs::path(out_dir) / "manifest.csv").string()},
                              {"videos", m.size()},
                              {"identities", m.identities().size()}}
                             .dump()
                      << "\n";
        } else if (scan_cmd->parsed()) {
            const auto m = manifest::scan_directory(root, version);
            manifest::save_manifest(m, manifest_out);
            std::cout << Json{{"manifest", manifest_out}, {"videos", m.size()}}.dump() << "\n";
        } else if (base_cmd->parsed()) {
            frame::IdentityEmbedderConfig cfg;
            cfg.epochs = epochs;
            cfg.seed = seed;
            const auto index = extraction::FrameIndex::from_json(read_json(index_path));
            const auto ckpt = frame::train_identity_embedder(index, cfg);
            const fs::path out = asset_out.empty() ? frame::default_baseline_asset() : fs::path(asset_out);
            fs::create_directories(out.parent_path());
            ckpt.save(out);
            std::cout << Json{{"asset", out.string()}, {"checkpoint_hash", ckpt.content_hash()}}.dump() << "\n";
        }
    } catch (const Error& e) {
        std::cout << Json{{"error", e.kind()}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cout << Json{{"error", "InternalError"}, {"message", e.what()}}.dump() << "\n";
        return 3;
    }
    return 0;
}
