#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <vector>

#include <opencv2/core.hpp>

namespace decay_bench::extraction {

struct FaceBox {
    float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    float score = 0;
    std::array<cv::Point2f, 5> landmarks{};
};

struct MtcnnOptions {
    int min_face_size = 20;
    std::array<float, 3> thresholds = {0.6f, 0.7f, 0.7f};
    float scale_factor = 0.709f;
};

/// Multi-task cascaded CNN face detector (P-Net -> R-Net -> O-Net) with the
/// image pyramid, bounding-box regression and NMS schedule of the
/// facenet-pytorch implementation. Weights are `pnet.pt`, `rnet.pt`,
/// `onet.pt` state dicts under `weights_dir`.
class Mtcnn {
public:
    Mtcnn(const std::filesystem::path& weights_dir, MtcnnOptions options = {});
    ~Mtcnn();
    Mtcnn(Mtcnn&&) noexcept;
    Mtcnn& operator=(Mtcnn&&) noexcept;

    /// Faces in an 8-bit BGR image, highest score first.
    std::vector<FaceBox> detect(const cv::Mat& bgr) const;

    const MtcnnOptions& options() const { return options_; }

private:
    struct Nets;
    std::unique_ptr<Nets> nets_;
    MtcnnOptions options_;
};

/// Directory holding the bundled MTCNN weights. Honours DECAY_BENCH_ASSETS.
std::filesystem::path default_mtcnn_weights_dir();

}  // namespace decay_bench::extraction
