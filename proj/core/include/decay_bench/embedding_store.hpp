#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "decay_bench/frame_model.hpp"

namespace decay_bench::frame {

/// Writes a 2-D float32 tensor as a NumPy .npy (format 1.0, little endian, C order).
void write_npy(const std::filesystem::path& path, const torch::Tensor& matrix);
/// Reads a 2-D '<f4' or '<f8' .npy file into a float32 tensor. Throws ParseError.
torch::Tensor read_npy(const std::filesystem::path& path);

/// Embedding cache: `<cache_root>/emb/<extractor_fingerprint>/<video_id>.npy`
/// plus `<video_id>.json` holding dimension, row order, timestamps and labels.
class EmbeddingStore {
public:
    EmbeddingStore(std::filesystem::path cache_root, std::string extractor_fingerprint);

    std::filesystem::path dir() const { return dir_; }
    std::filesystem::path matrix_path(const std::string& video_id) const;
    std::filesystem::path meta_path(const std::string& video_id) const;

    bool contains(const std::string& video_id) const;
    void save(const EmbeddingSequence& seq) const;
    /// Throws MissingEmbeddings when the video has no stored sequence.
    EmbeddingSequence load(const std::string& video_id) const;

    const std::string& fingerprint() const { return fingerprint_; }

private:
    std::filesystem::path dir_;
    std::string fingerprint_;
};

}  // namespace decay_bench::frame
