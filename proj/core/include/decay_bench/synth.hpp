#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "decay_bench/manifest.hpp"

namespace decay_bench::synth {

/// Two generations of a synthetic "deepfake" corpus. Real videos show plain
/// cartoon faces. Generation A fakes carry a mouth checkerboard (a1), some of
/// them with a colour cast (a2); generation B fakes carry face stripes (b1),
/// eye-band quantisation (b2), or both plus a half-strength a2.
enum class Generation { a, b };
std::string_view to_string(Generation g);
Generation parse_generation(std::string_view s);

struct Artifacts {
    bool mouth_checker = false;  ///< a1
    bool colour_cast = false;    ///< a2
    bool face_stripes = false;   ///< b1
    bool eye_quantise = false;   ///< b2
    double cast_strength = 1.0;
};

struct SynthConfig {
    int identities = 40;
    int real_per_identity = 3;
    int fake_per_identity = 3;
    int frame_size = 128;
    int frames_per_video = 16;
    double fps = 10.0;
    double test_fraction = 0.25;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& j);
};

/// Fixed appearance of one synthetic person.
struct Persona {
    cv::Scalar background;
    cv::Scalar skin;
    cv::Scalar hair;
    int axis_x = 30;
    int axis_y = 38;
};

Persona make_persona(std::uint64_t seed);

/// Artifacts of fake video `k` (0-based among the identity's fakes).
Artifacts fake_artifacts(Generation g, int k);
manifest::Technique fake_technique(int k);

/// Renders frame `frame` of a video; per-frame motion comes from `motion_seed`.
cv::Mat render_frame(const Persona& persona, const Artifacts& artifacts, std::uint64_t motion_seed, int frame,
                     int size);

/// Writes a lossless (FFV1 / Matroska) video corpus plus `manifest.csv` under
/// `root` and returns the manifest. Identities are split into train and test
/// at the identity level.
manifest::DatasetManifest generate_corpus(const std::filesystem::path& root, Generation generation,
                                          const SynthConfig& config);

}  // namespace decay_bench::synth
