#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "decay_bench/checkpoint.hpp"
#include "decay_bench/extraction.hpp"
#include "decay_bench/frame_model.hpp"

namespace decay_bench::frame {

inline constexpr const char* kEmbedderArchitecture = "identity_embedder";

/// Compact face-identity CNN: four conv/BN/ReLU/pool stages, global average
/// pooling and a linear projection to an L2-normalised embedding. An identity
/// classification head is used only during training.
struct IdentityEmbedderImpl : torch::nn::Module {
    IdentityEmbedderImpl(int embedding_dim, int num_identities);

    torch::Tensor embed(torch::Tensor x);
    torch::Tensor forward(torch::Tensor x) { return classifier(embed(std::move(x))); }

    torch::nn::Sequential trunk{nullptr};
    torch::nn::Linear projection{nullptr};
    torch::nn::Linear classifier{nullptr};
};
TORCH_MODULE(IdentityEmbedder);

struct IdentityEmbedderConfig {
    int input_size = 64;
    int embedding_dim = 128;
    int epochs = 10;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double weight_decay = 1e-5;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static IdentityEmbedderConfig from_json(const nlohmann::json& j);
};

/// Trains the embedder by identity classification on real frames only; fake
/// frames in the index are ignored. Throws EmptyDataset when fewer than two
/// identities have real frames.
ModelCheckpoint train_identity_embedder(const extraction::FrameIndex& index, const IdentityEmbedderConfig& config);

/// Identity-only embedding extractor loaded from a packaged asset: either a
/// checkpoint of the native embedder or a TorchScript module taking
/// N x 3 x S x S images standardised as (x - 127.5) / 128.
class BaselineExtractor {
public:
    /// Throws AssetMissing when `asset` does not exist or cannot be loaded.
    static BaselineExtractor load(const std::filesystem::path& asset, int torchscript_input_size = 160);

    torch::Tensor embed(const std::vector<cv::Mat>& frames);
    EmbeddingSequence embed(const extraction::FrameSet& frames);

    std::int64_t dim() const { return dim_; }
    /// Content-derived identifier of the loaded model.
    const std::string& fingerprint() const { return fingerprint_; }

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    std::int64_t dim_ = 0;
    std::string fingerprint_;
};

/// Default location of the baseline asset: `<assets>/baseline/identity_embedder.ckpt`.
std::filesystem::path default_baseline_asset();

}  // namespace decay_bench::frame
