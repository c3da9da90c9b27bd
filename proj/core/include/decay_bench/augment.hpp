#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "decay_bench/rng.hpp"

namespace decay_bench::frame {

/// Training-time image augmentation. Each transform fires independently with
/// its probability; magnitudes are drawn uniformly from the given ranges.
struct AugmentationPolicy {
    bool enabled = true;

    double flip_p = 0.5;

    double rotation_p = 0.5;
    double rotation_deg = 15.0;  ///< angle in [-deg, deg]

    /// Rescale by a factor in [scale_min, scale_max], then centre-crop or
    /// reflect-pad back to the original size at a random offset.
    double scale_p = 0.5;
    double scale_min = 0.8;
    double scale_max = 1.2;

    double color_p = 0.8;
    double brightness = 0.2;  ///< factor in [1-b, 1+b]
    double contrast = 0.2;
    double saturation = 0.2;

    double blur_p = 0.3;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;

    std::uint64_t seed = 0;

    /// Throws ConfigError on probabilities outside [0,1] or inverted ranges.
    void validate() const;

    nlohmann::json to_json() const;
    static AugmentationPolicy from_json(const nlohmann::json& j);

    /// A policy that applies nothing.
    static AugmentationPolicy none();
};

/// Augments an 8-bit BGR image. Output has the same size and type.
cv::Mat augment_image(const cv::Mat& bgr, const AugmentationPolicy& policy, Rng& rng);

}  // namespace decay_bench::frame
