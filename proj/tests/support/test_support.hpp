#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <vector>

#include <opencv2/core.hpp>

#include "decay_bench/extraction.hpp"
#include "decay_bench/manifest.hpp"
#include "decay_bench/rng.hpp"

namespace decay_bench::testkit {

std::filesystem::path data_dir();

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "decay_bench_test");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

struct RandomManifestShape {
    int min_identities = 1;
    int max_identities = 40;
    int max_videos_per_identity = 6;
    double test_fraction = 0.3;  ///< chance an identity lands in the test split
};

/// A valid manifest with random identities, videos, labels and splits.
manifest::DatasetManifest random_manifest(Rng& rng, const RandomManifestShape& shape = {});

/// Lossless FFV1 video of the given BGR frames.
void write_video(const std::filesystem::path& path, const std::vector<cv::Mat>& frames, double fps);

/// Small generation-A synthetic corpus (cached on disk per directory).
manifest::DatasetManifest small_corpus(const std::filesystem::path& dir, int identities = 6, int frames = 8,
                                       std::uint64_t seed = 5);

/// Frames of `videos` videos per identity written as PNGs; odd videos are
/// fake and carry a bright square. No real video files exist behind it.
extraction::FrameIndex marker_index(const std::filesystem::path& dir, const std::vector<std::string>& identities,
                                    int videos, int frames, std::uint64_t seed);

/// Manifest matching a marker index; identities in `test_ids` go to the test split.
manifest::DatasetManifest manifest_for(const extraction::FrameIndex& index, const manifest::IdentitySet& test_ids,
                                       const std::string& version = "marker");

/// Extraction settings used by tests: 64 px crops.
extraction::ExtractionConfig small_extraction();

}  // namespace decay_bench::testkit
