#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace decay_bench {

/// Serialized model: weights and buffers, configuration, per-parameter freeze
/// flags and training provenance, stored as one libtorch archive. The
/// `architecture` tag distinguishes frame CNNs, temporal GRUs and baseline
/// embedders.
struct ModelCheckpoint {
    std::string architecture;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, torch::Tensor> state;  ///< parameters and buffers by name
    std::map<std::string, bool> freeze_map;      ///< parameters only
    std::string train_manifest_hash;
    int epochs_trained = 0;
    double best_val_loss = std::numeric_limits<double>::quiet_NaN();
    nlohmann::json provenance = nlohmann::json::object();

    /// Content hash over metadata and tensor bytes (independent of the
    /// archive container, so identical models hash identically).
    std::string content_hash() const;

    nlohmann::json metadata() const;

    void save(const std::filesystem::path& path) const;
    /// Throws IncompatibleCheckpoint if the file is not a checkpoint archive.
    static ModelCheckpoint load(const std::filesystem::path& path);
};

/// Copies a module's parameters and buffers into a name -> tensor map (deep copy).
std::map<std::string, torch::Tensor> snapshot_state(const torch::nn::Module& module);

/// Loads tensors into a module by name. Names in `skip_prefixes` are left
/// untouched. Throws IncompatibleCheckpoint on missing names or shape
/// mismatches unless `allow_missing`.
void restore_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state,
                   const std::vector<std::string>& skip_prefixes = {}, bool allow_missing = false);

/// Reads a zip-format pickled `{name: tensor}` dict as written by
/// `torch.save(state_dict)`. Throws AssetMissing if absent or unreadable.
std::map<std::string, torch::Tensor> load_pickled_state_dict(const std::filesystem::path& file);

/// Root of packaged model assets: $DECAY_BENCH_ASSETS, else the source tree's
/// assets directory recorded at build time.
std::filesystem::path asset_root();

}  // namespace decay_bench
