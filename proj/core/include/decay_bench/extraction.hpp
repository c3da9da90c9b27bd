#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "decay_bench/manifest.hpp"
#include "decay_bench/mtcnn.hpp"

namespace decay_bench::extraction {

struct ExtractionConfig {
    int box_side = 320;
    int margin = 16;
    double target_fps = 5.0;
    int max_frames = 50;
    std::string detector = "mtcnn";
    MtcnnOptions mtcnn;

    /// Throws ConfigError on an invalid field.
    void validate() const;
    /// Hash over every field that changes the produced crops.
    std::string fingerprint() const;

    nlohmann::json to_json() const;
    static ExtractionConfig from_json(const nlohmann::json& j);
};

struct Frame {
    double timestamp = 0.0;
    cv::Mat image;  ///< box_side x box_side, 8-bit BGR
};

struct FrameSet {
    std::string video_id;
    std::vector<Frame> frames;
    double source_duration = 0.0;
    std::string config_fingerprint;

    std::size_t size() const { return frames.size(); }
    bool empty() const { return frames.empty(); }
};

/// n = min(floor(duration * fps), max_frames) (at least 1) timestamps at a
/// constant stride of duration / n starting at 0.
std::vector<double> sample_frame_times(double duration, double target_fps, int max_frames);

/// A decoded video's duration plus its frames nearest to the requested times
/// (an empty Mat where nothing was decodable).
struct DecodedSamples {
    double duration = 0.0;
    std::vector<double> times;
    std::vector<cv::Mat> frames;
};

/// Opens the video, samples timestamps, and decodes the nearest frame for each.
/// Throws DecodeError when the file cannot be opened or has no frames.
DecodedSamples decode_samples(const std::filesystem::path& path, double target_fps, int max_frames);

/// Crop around a detection: the box is widened by `margin` pixels measured in
/// the output scale, clipped to the image, then resized to side x side.
cv::Mat crop_face(const cv::Mat& image, const FaceBox& box, int side, int margin);

/// Detects the highest-confidence face in every sampled frame and crops it.
/// Frames without a face are skipped. Throws DecodeError / NoFacesError.
FrameSet extract_faces(const manifest::VideoRecord& record, const ExtractionConfig& config, const Mtcnn& detector);

/// On-disk frame cache:
/// `<root>/<config_fingerprint>/<video_id>/frame_<k>.png` plus `meta.json`.
/// Entries are published by renaming a fully written temp directory.
class FrameCache {
public:
    explicit FrameCache(std::filesystem::path root) : root_(std::move(root)) {}

    std::filesystem::path entry_dir(const std::string& fingerprint, const std::string& video_id) const;
    std::filesystem::path frame_path(const std::string& fingerprint, const std::string& video_id, std::size_t k) const;
    bool contains(const std::string& fingerprint, const std::string& video_id) const;
    std::optional<FrameSet> load(const std::string& fingerprint, const std::string& video_id) const;
    /// Returns false if another writer published the entry first.
    bool store(const FrameSet& frames) const;

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
};

/// One extracted face crop, with the labels of its source video.
struct FrameEntry {
    std::string video_id;
    std::size_t frame = 0;
    double timestamp = 0.0;
    std::filesystem::path image_path;
    manifest::Label label = manifest::Label::real;
    manifest::Technique technique = manifest::Technique::real;
    std::string identity_id;

    int class_id(manifest::ClassScheme scheme) const;
};

struct SkippedVideo {
    std::string video_id;
    std::string error_kind;
    std::string message;
};

struct FrameIndex {
    std::string config_fingerprint;
    std::vector<FrameEntry> entries;
    std::vector<SkippedVideo> skipped;
    std::size_t cache_hits = 0;
    std::size_t extracted = 0;

    /// Distinct video ids in entry order.
    std::vector<std::string> video_ids() const;
    /// Entries whose identity is in `ids`.
    FrameIndex restrict_to(const manifest::IdentitySet& ids) const;
    manifest::IdentitySet identities() const;

    /// Serialisation excludes the run-dependent hit/extract counters so a
    /// cached re-run produces identical bytes.
    nlohmann::json to_json() const;
    static FrameIndex from_json(const nlohmann::json& j);
    nlohmann::json skip_report() const;
    /// SHA-256 over the fingerprint, entry metadata and skipped ids. Image
    /// paths are left out so the same frames in another cache hash equal.
    std::string content_hash() const;
};

struct BuildOptions {
    std::filesystem::path cache_root;
    int workers = 1;
    std::filesystem::path weights_dir = default_mtcnn_weights_dir();
};

/// Extracts (or loads from cache) every video of the manifest. Per-video
/// failures are logged and listed in `skipped`, never fatal.
FrameIndex build_frame_dataset(const manifest::DatasetManifest& manifest, const ExtractionConfig& config,
                               const BuildOptions& options);

/// Reads a cached FrameSet for an index's video (frames in timestamp order).
FrameSet load_frame_set(const FrameCache& cache, const std::string& fingerprint, const std::string& video_id);

}  // namespace decay_bench::extraction
