#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decay_bench/augment.hpp"
#include "decay_bench/evaluation.hpp"
#include "decay_bench/extraction.hpp"
#include "decay_bench/frame_model.hpp"
#include "decay_bench/manifest.hpp"

namespace decay_bench::finetune {

enum class TrainableScope { block4_and_head };
std::string_view to_string(TrainableScope s);
TrainableScope parse_trainable_scope(std::string_view s);
/// Residual blocks kept frozen under a scope.
std::set<int> frozen_blocks(TrainableScope s);

/// One starting point of a sweep.
struct BaseInit {
    std::string name;
    frame::InitKind kind = frame::InitKind::imagenet_pretrained;
    std::filesystem::path checkpoint;  ///< for kind == checkpoint
    std::filesystem::path pretrained_weights;  ///< optional, imagenet weights override

    nlohmann::json to_json() const;
    static BaseInit from_json(const nlohmann::json& j);
};

struct FinetunePlan {
    std::vector<BaseInit> inits;
    TrainableScope trainable_scope = TrainableScope::block4_and_head;
    double learning_rate = 2e-5;
    std::vector<double> identity_fractions{0.1, 0.2, 0.5, 1.0};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    /// Identity fraction of each subset held out for early stopping.
    double val_fraction = 0.15;
    manifest::ClassScheme class_scheme = manifest::ClassScheme::binary;
    /// Remaining recipe (batch size, patience, epochs, input size); its
    /// init, frozen_blocks, learning_rate and num_classes are overridden.
    frame::FrameModelConfig recipe;
    frame::AugmentationPolicy augmentation;

    /// Throws ConfigError.
    void validate() const;
    nlohmann::json to_json() const;
    static FinetunePlan from_json(const nlohmann::json& j);
};

/// Frame-model configuration of one fine-tuning run.
frame::FrameModelConfig finetune_config(const FinetunePlan& plan, const BaseInit& base, std::uint64_t seed);

/// Fine-tunes from `base` on the subset's identities: only block 4 and the
/// head are trainable. `frames` must cover the subset's videos. Throws
/// IncompatibleCheckpoint, IdentityLeakError (subset vs `eval_manifest`).
frame::TrainResult finetune_frame_model(const BaseInit& base, const extraction::FrameIndex& frames,
                                        const manifest::DatasetManifest& subset, const FinetunePlan& plan,
                                        std::uint64_t seed, const manifest::DatasetManifest* eval_manifest = nullptr);

struct CellResult {
    std::string init;
    double fraction = 1.0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error_kind;
    std::string error_message;
    std::vector<std::string> identities;
    std::filesystem::path checkpoint_path;  ///< relative to the sweep output dir
    std::string checkpoint_hash;
    int best_epoch = 0;
    std::optional<eval::EvaluationReport> report;

    std::string cell_name() const;
    nlohmann::json to_json() const;
};

struct SweepResult {
    std::size_t target_identities = 0;
    CellResult zero_shot;  ///< the un-fine-tuned base
    std::vector<CellResult> cells;

    nlohmann::json to_json() const;
    std::size_t failed() const;
};

struct SweepOptions {
    std::filesystem::path output_dir;
    /// Which init the zero-shot baseline evaluates; empty = the first
    /// checkpoint init, else the first init.
    std::string zero_shot_init;
};

/// Runs the (init x fraction x seed) grid on the train partition of
/// `target`. Every cell and the zero-shot base are evaluated on
/// `eval_manifest`; a failing cell is recorded and the sweep continues.
/// Writes one directory per cell plus sweep_summary.json.
SweepResult run_decay_sweep(const FinetunePlan& plan, const manifest::DatasetManifest& target,
                            const extraction::FrameIndex& frames, const manifest::DatasetManifest& eval_manifest,
                            const SweepOptions& options);

}  // namespace decay_bench::finetune
