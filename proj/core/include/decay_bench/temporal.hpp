#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "decay_bench/checkpoint.hpp"
#include "decay_bench/embedding_store.hpp"
#include "decay_bench/frame_model.hpp"
#include "decay_bench/manifest.hpp"

namespace decay_bench::temporal {

inline constexpr const char* kTemporalArchitecture = "gru_temporal";

struct TemporalModelConfig {
    int gru_layers = 5;
    bool bidirectional = true;
    int hidden_dim = 512;
    int fc_layers = 4;
    double dropout = 0.3;
    int target_length = 50;
    double mask_fraction = 0.10;
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    int early_stop_patience = 10;
    int max_epochs = 100;
    int batch_size = 32;
    int num_classes = 2;
    int folds = 5;
    /// Inverse-frequency class weights in the loss.
    bool class_weighted_loss = false;
    /// Halve the learning rate after `lr_plateau_epochs` epochs without
    /// validation improvement.
    bool lr_schedule = false;
    int lr_plateau_epochs = 3;
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
    nlohmann::json to_json() const;
    static TemporalModelConfig from_json(const nlohmann::json& j);

    /// Output widths of the FC stack for a given GRU output width. Hidden
    /// layer i (1-based) has width in / 2^(2i-1), at least num_classes; the
    /// last layer emits num_classes logits.
    std::vector<int> fc_widths(int gru_output_width) const;
};

enum class Mode { train, eval };

/// Crops or pads a T x D sequence along time to exactly `target_length` rows.
/// Eval mode crops from the beginning and pads by repeating the last row.
/// Train mode crops a contiguous window at a seeded offset and pads with k
/// copies of the first row in front and the rest as copies of the last row,
/// k seeded in [0, deficit]. Throws PreconditionError for T = 0.
torch::Tensor standardize_length(const torch::Tensor& seq, int target_length, Mode mode, std::uint64_t seed);

/// Columns zeroed for a video at an epoch: round(fraction * dim) distinct
/// indices drawn from a stream seeded by (seed, video_id, epoch), sorted.
std::vector<std::int64_t> mask_columns(std::int64_t dim, double fraction, std::uint64_t seed,
                                       const std::string& video_id, int epoch);

/// Zeroes the `mask_columns` columns across all rows; every other entry is
/// copied bit-exactly.
torch::Tensor mask_features(const torch::Tensor& seq, double fraction, std::uint64_t seed, const std::string& video_id,
                            int epoch);

/// Stacked GRU (bidirectional by default) followed by an FC stack with ReLU
/// and dropout. Input B x T x D, output B x num_classes logits.
struct TemporalNetImpl : torch::nn::Module {
    TemporalNetImpl(const TemporalModelConfig& config, std::int64_t input_dim);
    torch::Tensor forward(torch::Tensor x);

    torch::nn::GRU gru{nullptr};
    torch::nn::ModuleList fc{nullptr};
    double dropout = 0.0;
    bool bidirectional = true;
};
TORCH_MODULE(TemporalNet);

class TemporalModel {
public:
    TemporalModel(TemporalModelConfig config, std::int64_t input_dim);

    const TemporalModelConfig& config() const { return config_; }
    std::int64_t input_dim() const { return input_dim_; }
    TemporalNet& net() { return net_; }

    ModelCheckpoint to_checkpoint() const;
    /// Throws IncompatibleCheckpoint for non-temporal checkpoints.
    static TemporalModel from_checkpoint(const ModelCheckpoint& ckpt);

private:
    TemporalModelConfig config_;
    std::int64_t input_dim_;
    TemporalNet net_;
};

/// Seeds the initialisation from config.seed.
TemporalModel build_temporal_model(const TemporalModelConfig& config, std::int64_t input_dim);

struct TemporalEpoch {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double learning_rate = 0.0;
};

struct FoldReport {
    int fold = 0;
    manifest::IdentitySet train_identities;
    manifest::IdentitySet held_identities;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double val_accuracy = 0.0;  ///< at the best epoch
    std::vector<TemporalEpoch> history;

    nlohmann::json to_json() const;
};

struct FoldResult {
    ModelCheckpoint checkpoint;
    FoldReport report;
};

/// One labelled training sequence.
struct LabelledSequence {
    std::string video_id;
    std::string identity_id;
    torch::Tensor embeddings;  ///< T x D
    int label = 0;
};

/// Trains one model with early stopping on validation loss. `fold` selects
/// the independent random streams (crops, masks, order, initialisation).
/// Throws EmptyDataset, IdentityLeakError, TrainingDiverged.
FoldResult train_temporal_fold(const std::vector<LabelledSequence>& train, const std::vector<LabelledSequence>& val,
                               const TemporalModelConfig& config, int fold);

/// Loads the sequences of every manifest video. Throws MissingEmbeddings
/// naming all absent video ids.
std::vector<LabelledSequence> load_sequences(const frame::EmbeddingStore& store,
                                             const manifest::DatasetManifest& manifest);

/// k-fold identity-disjoint cross-validation over the manifest's train
/// partition: one model per fold.
std::vector<FoldResult> train_temporal_cv(const frame::EmbeddingStore& store, const manifest::DatasetManifest& manifest,
                                          const TemporalModelConfig& config);

/// Mean and standard deviation of fold validation metrics.
nlohmann::json aggregate_fold_reports(const std::vector<FoldReport>& reports);

/// Eval-mode standardisation, no masking, softmax (float64).
std::vector<double> predict_video_temporal(TemporalModel& model, const torch::Tensor& embeddings);
std::vector<double> predict_video_temporal(TemporalModel& model, const frame::EmbeddingSequence& seq);

}  // namespace decay_bench::temporal
