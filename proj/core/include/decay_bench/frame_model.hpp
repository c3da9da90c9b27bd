#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "decay_bench/augment.hpp"
#include "decay_bench/checkpoint.hpp"
#include "decay_bench/extraction.hpp"
#include "decay_bench/resnet.hpp"

namespace decay_bench::frame {

inline constexpr const char* kFrameArchitecture = "resnet50";

enum class InitKind { imagenet_pretrained, checkpoint, random };
std::string_view to_string(InitKind kind);
InitKind parse_init_kind(std::string_view s);

struct FrameModelConfig {
    std::string backbone = "resnet50";
    InitKind init = InitKind::imagenet_pretrained;
    /// Source checkpoint for init=checkpoint.
    std::filesystem::path init_checkpoint;
    /// torchvision-named ResNet-50 state dict for init=imagenet_pretrained;
    /// empty means `<assets>/resnet50/imagenet.pt`.
    std::filesystem::path pretrained_weights;
    std::set<int> frozen_blocks{1, 2};
    int num_classes = 2;
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    int early_stop_patience = 10;
    int max_epochs = 100;
    int batch_size = 64;
    int input_size = 224;
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
    nlohmann::json to_json() const;
    static FrameModelConfig from_json(const nlohmann::json& j);
};

std::filesystem::path default_imagenet_weights_path();

/// BGR 8-bit crop -> normalised 3 x S x S float tensor (RGB, ImageNet mean/std).
torch::Tensor to_input_tensor(const cv::Mat& bgr, int input_size);
/// Resize only (the geometry step of to_input_tensor), used before augmentation.
cv::Mat resize_to_input(const cv::Mat& bgr, int input_size);

/// A ResNet-50 plus its configuration and freeze state.
class FrameModel {
public:
    FrameModel(FrameModelConfig config, ResNet50 net);

    const FrameModelConfig& config() const { return config_; }
    ResNet50& net() { return net_; }
    const ResNet50& net() const { return net_; }

    /// Whether the named parameter belongs to a frozen block.
    bool is_frozen(const std::string& parameter_name) const;
    std::map<std::string, bool> freeze_map() const;
    /// Applies requires_grad according to the freeze map.
    void apply_freeze();
    /// Training mode for trainable blocks, eval mode (fixed BN statistics)
    /// for frozen ones.
    void set_training(bool training);

    /// Warnings raised while building (e.g. a head swap).
    const std::vector<std::string>& warnings() const { return warnings_; }
    void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

    ModelCheckpoint to_checkpoint() const;
    /// Rebuilds the exact trained model stored in a checkpoint.
    static FrameModel from_checkpoint(const ModelCheckpoint& ckpt);

private:
    FrameModelConfig config_;
    ResNet50 net_;
    std::vector<std::string> warnings_;
};

/// Builds a model as configured. For init=checkpoint a class-count mismatch
/// keeps the backbone and reinitialises the head (with a warning); any other
/// mismatch throws IncompatibleCheckpoint. Missing ImageNet weights throw
/// AssetMissing.
FrameModel build_frame_model(const FrameModelConfig& config);

/// Loads frame crops by path with an optional bounded in-memory cache of
/// already-resized images.
class FrameImageLoader {
public:
    FrameImageLoader(int input_size, std::size_t cache_budget_bytes = std::size_t{1} << 30);
    cv::Mat load(const std::filesystem::path& path);
    int input_size() const { return input_size_; }

private:
    int input_size_;
    std::size_t budget_;
    std::size_t used_ = 0;
    std::map<std::string, cv::Mat> cache_;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainOptions {
    manifest::ClassScheme scheme = manifest::ClassScheme::binary;
    /// Called after each epoch; used for progress logs.
    std::function<void(const EpochRecord&)> on_epoch;
    std::size_t image_cache_bytes = std::size_t{1} << 30;
};

struct TrainResult {
    ModelCheckpoint checkpoint;
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    std::vector<std::string> warnings;
};

/// Trains with per-frame cross-entropy and Adam on the non-frozen
/// parameters; keeps the lowest-validation-loss weights and stops after
/// `early_stop_patience` epochs without improvement.
/// Throws IdentityLeakError, EmptyDataset, TrainingDiverged.
TrainResult train_frame_model(const extraction::FrameIndex& train_index, const extraction::FrameIndex& val_index,
                              const FrameModelConfig& config, const AugmentationPolicy& augmentation,
                              const TrainOptions& options = {});

/// Continues training an already-built model (used by fine-tuning).
TrainResult fit_frame_model(FrameModel& model, const extraction::FrameIndex& train_index,
                            const extraction::FrameIndex& val_index, const AugmentationPolicy& augmentation,
                            const TrainOptions& options = {});

/// Per-frame softmax probabilities, T x C float64. Throws PreconditionError on
/// an empty input.
torch::Tensor predict_frames(FrameModel& model, const std::vector<cv::Mat>& frames);
torch::Tensor predict_frames(FrameModel& model, const extraction::FrameSet& frames);

/// Column-wise mean of T x C probability rows. Throws EmptyInput for T = 0.
std::vector<double> aggregate_video(const torch::Tensor& frame_probs);

struct EmbeddingSequence {
    std::string video_id;
    torch::Tensor embeddings;  ///< T x D float32, rows in timestamp order
    std::vector<double> timestamps;
    int label = 0;
    std::string identity_id;
    manifest::Label binary_label = manifest::Label::real;
    manifest::Technique technique = manifest::Technique::real;

    std::int64_t length() const { return embeddings.size(0); }
    std::int64_t dim() const { return embeddings.size(1); }
};

/// Penultimate (pooled, 2048-d) activations, one row per frame.
torch::Tensor extract_embeddings(FrameModel& model, const std::vector<cv::Mat>& frames);
EmbeddingSequence extract_embeddings(FrameModel& model, const extraction::FrameSet& frames);

/// Softmax of the classification head applied to embeddings (float64).
torch::Tensor apply_head(FrameModel& model, const torch::Tensor& embeddings);

/// Crops of one video from an index, in timestamp order.
extraction::FrameSet frames_for_video(const extraction::FrameIndex& index, const std::string& video_id);

}  // namespace decay_bench::frame
