#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decay_bench/augment.hpp"
#include "decay_bench/extraction.hpp"
#include "decay_bench/finetune.hpp"
#include "decay_bench/frame_model.hpp"
#include "decay_bench/manifest.hpp"
#include "decay_bench/temporal.hpp"

namespace decay_bench::experiment {

enum class Stage { extract, train_frame, embed, train_temporal, finetune, evaluate, report };
std::string_view to_string(Stage s);
/// Accepts both "train-frame" and "train_frame".
Stage parse_stage(std::string_view s);
const std::vector<Stage>& all_stages();

struct DatasetRef {
    std::string name;
    std::filesystem::path manifest;
};

struct EmbeddingSettings {
    /// "frame_model" (the trained ResNet) or "baseline" (identity embedder).
    std::string extractor = "frame_model";
    std::filesystem::path baseline_asset;  ///< empty = default asset
    int baseline_input_size = 160;         ///< for TorchScript assets
};

struct FinetuneSettings {
    bool enabled = true;
    std::string target_dataset;
    /// Init checkpoint "@frame" refers to the train-frame stage output.
    finetune::FinetunePlan plan;
    std::string zero_shot_init;
};

struct ReportSettings {
    int pca_max_points = 2000;
};

/// Declarative experiment. Relative paths resolve against the config file's
/// directory. Module seeds all come from the global `seed`.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "runs";
    std::filesystem::path cache_root = "cache";
    int workers = 1;  ///< not part of the hash
    manifest::ClassScheme class_scheme = manifest::ClassScheme::binary;
    std::vector<DatasetRef> datasets;
    std::string train_dataset;
    std::vector<std::string> eval_datasets;  ///< empty = all datasets
    extraction::ExtractionConfig extraction;
    frame::FrameModelConfig frame;
    double frame_val_fraction = 0.15;
    frame::AugmentationPolicy augmentation;
    EmbeddingSettings embedding;
    temporal::TemporalModelConfig temporal;
    FinetuneSettings finetune;
    ReportSettings report;

    /// Parses, resolves paths, applies the DECAY_BENCH_CACHE override and the
    /// optional CLI overrides, then validates. Throws ConfigError.
    static ExperimentConfig load(const std::filesystem::path& file, std::optional<std::uint64_t> seed = {},
                                 std::optional<int> workers = {});
    static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

    /// Throws ConfigError (including unresolvable paths).
    void validate() const;
    /// Every setting with defaults materialised; excludes `workers`.
    nlohmann::json resolved_json() const;
    std::string hash() const;
    std::filesystem::path run_dir() const;
    const DatasetRef& dataset(const std::string& name) const;
    std::vector<std::string> evaluation_datasets() const;
};

/// Provenance record written as `<stage>/stage.json`.
struct StageRecord {
    Stage stage = Stage::extract;
    std::string fingerprint;
    std::string config_hash;
    std::map<std::string, std::string> upstream;  ///< stage -> fingerprint
    std::map<std::string, std::string> outputs;   ///< relative path -> sha256
    nlohmann::json details = nlohmann::json::object();

    nlohmann::json to_json() const;
    static StageRecord from_json(const nlohmann::json& j);
};

struct StageOutcome {
    Stage stage = Stage::extract;
    bool skipped = false;
    StageRecord record;
};

class Pipeline {
public:
    explicit Pipeline(ExperimentConfig config);

    const ExperimentConfig& config() const { return config_; }
    std::filesystem::path stage_dir(Stage s) const;
    /// Completed record of a stage, if any.
    std::optional<StageRecord> record(Stage s) const;

    /// Runs one stage; skips it when its record is current and every output
    /// still hashes to the recorded value. Throws MissingUpstream.
    StageOutcome run(Stage s);
    std::vector<StageOutcome> run_all();

    /// Upstream stages a stage depends on under this config.
    std::vector<Stage> upstream(Stage s) const;

private:
    ExperimentConfig config_;

    std::string fingerprint(Stage s, const std::map<std::string, std::string>& upstream) const;
    StageRecord require(Stage s) const;

    nlohmann::json do_extract(const std::filesystem::path& dir);
    nlohmann::json do_train_frame(const std::filesystem::path& dir);
    nlohmann::json do_embed(const std::filesystem::path& dir);
    nlohmann::json do_train_temporal(const std::filesystem::path& dir);
    nlohmann::json do_finetune(const std::filesystem::path& dir);
    nlohmann::json do_evaluate(const std::filesystem::path& dir);
    nlohmann::json do_report(const std::filesystem::path& dir);

    manifest::DatasetManifest load_dataset(const std::string& name) const;
    extraction::FrameIndex load_index(const std::string& name) const;
};

/// Checks every stage record under a run directory: outputs exist with the
/// recorded hashes and every upstream fingerprint matches that stage's record.
/// Returns the list of problems (empty when the chain is complete).
std::vector<std::string> verify_provenance(const std::filesystem::path& run_dir);

}  // namespace decay_bench::experiment
