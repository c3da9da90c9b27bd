#include "decay_bench/augment.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "decay_bench/errors.hpp"

namespace decay_bench::frame {

namespace {

void check_probability(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augmentation: ") + name + " must be in [0,1]");
}

void check_range(double lo, double hi, const char* name) {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
        throw ConfigError(std::string("augmentation: invalid range for ") + name);
    }
}

cv::Mat rescale_back(const cv::Mat& img, double factor, Rng& rng) {
    const int w = img.cols, h = img.rows;
    const int sw = std::max(1, static_cast<int>(std::lround(w * factor)));
    const int sh = std::max(1, static_cast<int>(std::lround(h * factor)));
    cv::Mat scaled;
    cv::resize(img, scaled, {sw, sh}, 0, 0, factor < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
    if (sw >= w && sh >= h) {
        const int x = static_cast<int>(rng.uniform_int(0, sw - w));
        const int y = static_cast<int>(rng.uniform_int(0, sh - h));
        return scaled(cv::Rect(x, y, w, h)).clone();
    }
    // Shrunk: pad back out with reflected border at a random placement.
    const int px = std::max(0, w - sw), py = std::max(0, h - sh);
    const int left = static_cast<int>(rng.uniform_int(0, px));
    const int top = static_cast<int>(rng.uniform_int(0, py));
    cv::Mat padded;
    cv::copyMakeBorder(scaled, padded, top, py - top, left, px - left, cv::BORDER_REFLECT_101);
    return padded(cv::Rect(0, 0, w, h)).clone();
}

cv::Mat jitter_color(const cv::Mat& img, const AugmentationPolicy& p, Rng& rng) {
    const double b = rng.uniform(1.0 - p.brightness, 1.0 + p.brightness);
    const double c = rng.uniform(1.0 - p.contrast, 1.0 + p.contrast);
    const double s = rng.uniform(1.0 - p.saturation, 1.0 + p.saturation);

    cv::Mat f;
    img.convertTo(f, CV_32FC3);
    f *= b;

    cv::Mat gray;
    cv::cvtColor(f, gray, cv::COLOR_BGR2GRAY);
    const double mean = cv::mean(gray)[0];
    f = (f - cv::Scalar::all(mean)) * c + cv::Scalar::all(mean);

    cv::cvtColor(f, gray, cv::COLOR_BGR2GRAY);
    cv::Mat gray3;
    cv::cvtColor(gray, gray3, cv::COLOR_GRAY2BGR);
    f = gray3 + (f - gray3) * s;

    cv::Mat out;
    f.convertTo(out, CV_8UC3);  // saturating
    return out;
}

}  // namespace

void AugmentationPolicy::validate() const {
    check_probability(flip_p, "flip_p");
    check_probability(rotation_p, "rotation_p");
    check_probability(scale_p, "scale_p");
    check_probability(color_p, "color_p");
    check_probability(blur_p, "blur_p");
    check_range(0.0, rotation_deg, "rotation_deg");
    check_range(scale_min, scale_max, "scale");
    if (scale_min <= 0.0) throw ConfigError("augmentation: scale_min must be positive");
    check_range(0.0, brightness, "brightness");
    check_range(0.0, contrast, "contrast");
    check_range(0.0, saturation, "saturation");
    if (brightness > 1.0 || contrast > 1.0 || saturation > 1.0) {
        throw ConfigError("augmentation: colour jitter magnitudes must be <= 1");
    }
    check_range(blur_sigma_min, blur_sigma_max, "blur_sigma");
    if (blur_sigma_min <= 0.0) throw ConfigError("augmentation: blur_sigma_min must be positive");
}

nlohmann::json AugmentationPolicy::to_json() const {
    return {{"enabled", enabled},
            {"flip_p", flip_p},
            {"rotation_p", rotation_p},
            {"rotation_deg", rotation_deg},
            {"scale_p", scale_p},
            {"scale_min", scale_min},
            {"scale_max", scale_max},
            {"color_p", color_p},
            {"brightness", brightness},
            {"contrast", contrast},
            {"saturation", saturation},
            {"blur_p", blur_p},
            {"blur_sigma_min", blur_sigma_min},
            {"blur_sigma_max", blur_sigma_max},
            {"seed", seed}};
}

AugmentationPolicy AugmentationPolicy::from_json(const nlohmann::json& j) {
    AugmentationPolicy p;
    p.enabled = j.value("enabled", p.enabled);
    p.flip_p = j.value("flip_p", p.flip_p);
    p.rotation_p = j.value("rotation_p", p.rotation_p);
    p.rotation_deg = j.value("rotation_deg", p.rotation_deg);
    p.scale_p = j.value("scale_p", p.scale_p);
    p.scale_min = j.value("scale_min", p.scale_min);
    p.scale_max = j.value("scale_max", p.scale_max);
    p.color_p = j.value("color_p", p.color_p);
    p.brightness = j.value("brightness", p.brightness);
    p.contrast = j.value("contrast", p.contrast);
    p.saturation = j.value("saturation", p.saturation);
    p.blur_p = j.value("blur_p", p.blur_p);
    p.blur_sigma_min = j.value("blur_sigma_min", p.blur_sigma_min);
    p.blur_sigma_max = j.value("blur_sigma_max", p.blur_sigma_max);
    p.seed = j.value("seed", p.seed);
    p.validate();
    return p;
}

AugmentationPolicy AugmentationPolicy::none() {
    AugmentationPolicy p;
    p.enabled = false;
    p.flip_p = p.rotation_p = p.scale_p = p.color_p = p.blur_p = 0.0;
    return p;
}

cv::Mat augment_image(const cv::Mat& bgr, const AugmentationPolicy& policy, Rng& rng) {
    if (!policy.enabled) return bgr.clone();
    cv::Mat img = bgr.clone();

    if (rng.bernoulli(policy.flip_p)) cv::flip(img, img, 1);

    if (rng.bernoulli(policy.rotation_p)) {
        const double angle = rng.uniform(-policy.rotation_deg, policy.rotation_deg);
        const cv::Point2f centre((img.cols - 1) / 2.0f, (img.rows - 1) / 2.0f);
        const cv::Mat m = cv::getRotationMatrix2D(centre, angle, 1.0);
        cv::warpAffine(img, img, m, img.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
    }

    if (rng.bernoulli(policy.scale_p)) {
        img = rescale_back(img, rng.uniform(policy.scale_min, policy.scale_max), rng);
    }

    if (rng.bernoulli(policy.color_p)) img = jitter_color(img, policy, rng);

    if (rng.bernoulli(policy.blur_p)) {
        const double sigma = rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max);
        int k = static_cast<int>(std::ceil(sigma * 3.0)) * 2 + 1;
        k = std::min(k, (std::min(img.cols, img.rows) - 1) | 1);
        cv::GaussianBlur(img, img, {k, k}, sigma, sigma, cv::BORDER_REFLECT_101);
    }
    return img;
}

}  // namespace decay_bench::frame
