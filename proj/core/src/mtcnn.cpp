#include "decay_bench/mtcnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "decay_bench/checkpoint.hpp"
#include "decay_bench/errors.hpp"

namespace decay_bench::extraction {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

torch::Tensor max_pool_ceil(const torch::Tensor& x, int kernel, int stride) {
    return F::max_pool2d(x, F::MaxPool2dFuncOptions(kernel).stride(stride).ceil_mode(true));
}

struct PNetImpl : nn::Module {
    nn::Conv2d conv1{nn::Conv2dOptions(3, 10, 3)};
    nn::PReLU prelu1{nn::PReLUOptions().num_parameters(10)};
    nn::Conv2d conv2{nn::Conv2dOptions(10, 16, 3)};
    nn::PReLU prelu2{nn::PReLUOptions().num_parameters(16)};
    nn::Conv2d conv3{nn::Conv2dOptions(16, 32, 3)};
    nn::PReLU prelu3{nn::PReLUOptions().num_parameters(32)};
    nn::Conv2d conv4_1{nn::Conv2dOptions(32, 2, 1)};
    nn::Conv2d conv4_2{nn::Conv2dOptions(32, 4, 1)};

    PNetImpl() {
        register_module("conv1", conv1);
        register_module("prelu1", prelu1);
        register_module("conv2", conv2);
        register_module("prelu2", prelu2);
        register_module("conv3", conv3);
        register_module("prelu3", prelu3);
        register_module("conv4_1", conv4_1);
        register_module("conv4_2", conv4_2);
    }

    // Returns (box regression, face probability).
    std::pair<torch::Tensor, torch::Tensor> forward(torch::Tensor x) {
        x = max_pool_ceil(prelu1(conv1(x)), 2, 2);
        x = prelu2(conv2(x));
        x = prelu3(conv3(x));
        return {conv4_2(x), torch::softmax(conv4_1(x), 1)};
    }
};
TORCH_MODULE(PNet);

struct RNetImpl : nn::Module {
    nn::Conv2d conv1{nn::Conv2dOptions(3, 28, 3)};
    nn::PReLU prelu1{nn::PReLUOptions().num_parameters(28)};
    nn::Conv2d conv2{nn::Conv2dOptions(28, 48, 3)};
    nn::PReLU prelu2{nn::PReLUOptions().num_parameters(48)};
    nn::Conv2d conv3{nn::Conv2dOptions(48, 64, 2)};
    nn::PReLU prelu3{nn::PReLUOptions().num_parameters(64)};
    nn::Linear dense4{576, 128};
    nn::PReLU prelu4{nn::PReLUOptions().num_parameters(128)};
    nn::Linear dense5_1{128, 2};
    nn::Linear dense5_2{128, 4};

    RNetImpl() {
        register_module("conv1", conv1);
        register_module("prelu1", prelu1);
        register_module("conv2", conv2);
        register_module("prelu2", prelu2);
        register_module("conv3", conv3);
        register_module("prelu3", prelu3);
        register_module("dense4", dense4);
        register_module("prelu4", prelu4);
        register_module("dense5_1", dense5_1);
        register_module("dense5_2", dense5_2);
    }

    std::pair<torch::Tensor, torch::Tensor> forward(torch::Tensor x) {
        x = max_pool_ceil(prelu1(conv1(x)), 3, 2);
        x = max_pool_ceil(prelu2(conv2(x)), 3, 2);
        x = prelu3(conv3(x));
        // The original Caffe weights flatten in (W, H, C) order.
        x = x.permute({0, 3, 2, 1}).contiguous().view({x.size(0), -1});
        x = prelu4(dense4(x));
        return {dense5_2(x), torch::softmax(dense5_1(x), 1)};
    }
};
TORCH_MODULE(RNet);

struct ONetImpl : nn::Module {
    nn::Conv2d conv1{nn::Conv2dOptions(3, 32, 3)};
    nn::PReLU prelu1{nn::PReLUOptions().num_parameters(32)};
    nn::Conv2d conv2{nn::Conv2dOptions(32, 64, 3)};
    nn::PReLU prelu2{nn::PReLUOptions().num_parameters(64)};
    nn::Conv2d conv3{nn::Conv2dOptions(64, 64, 3)};
    nn::PReLU prelu3{nn::PReLUOptions().num_parameters(64)};
    nn::Conv2d conv4{nn::Conv2dOptions(64, 128, 2)};
    nn::PReLU prelu4{nn::PReLUOptions().num_parameters(128)};
    nn::Linear dense5{1152, 256};
    nn::PReLU prelu5{nn::PReLUOptions().num_parameters(256)};
    nn::Linear dense6_1{256, 2};
    nn::Linear dense6_2{256, 4};
    nn::Linear dense6_3{256, 10};

    ONetImpl() {
        register_module("conv1", conv1);
        register_module("prelu1", prelu1);
        register_module("conv2", conv2);
        register_module("prelu2", prelu2);
        register_module("conv3", conv3);
        register_module("prelu3", prelu3);
        register_module("conv4", conv4);
        register_module("prelu4", prelu4);
        register_module("dense5", dense5);
        register_module("prelu5", prelu5);
        register_module("dense6_1", dense6_1);
        register_module("dense6_2", dense6_2);
        register_module("dense6_3", dense6_3);
    }

    // Returns (box regression, landmarks, face probability).
    std::tuple<torch::Tensor, torch::Tensor, torch::Tensor> forward(torch::Tensor x) {
        x = max_pool_ceil(prelu1(conv1(x)), 3, 2);
        x = max_pool_ceil(prelu2(conv2(x)), 3, 2);
        x = max_pool_ceil(prelu3(conv3(x)), 2, 2);
        x = prelu4(conv4(x));
        x = x.permute({0, 3, 2, 1}).contiguous().view({x.size(0), -1});
        x = prelu5(dense5(x));
        return {dense6_2(x), dense6_3(x), torch::softmax(dense6_1(x), 1)};
    }
};
TORCH_MODULE(ONet);

void load_state(nn::Module& module, const std::filesystem::path& file) {
    const auto dict = load_pickled_state_dict(file);
    torch::NoGradGuard guard;
    for (auto& item : module.named_parameters()) {
        const auto it = dict.find(item.key());
        if (it == dict.end()) throw AssetMissing(file.string() + " lacks tensor '" + item.key() + "'");
        if (it->second.sizes() != item.value().sizes()) {
            throw AssetMissing(file.string() + ": shape mismatch for '" + item.key() + "'");
        }
        item.value().copy_(it->second);
    }
}

// Box layout used throughout: x1, y1, x2, y2, score.
struct Candidate {
    float box[5];
    float reg[4];
    std::array<cv::Point2f, 5> points{};
};

// IoU-based NMS. `plus_one` selects the inclusive-pixel area convention of
// the original MATLAB/numpy code; `min_overlap` divides by the smaller area.
std::vector<std::size_t> nms(const std::vector<Candidate>& c, float threshold, bool plus_one, bool min_overlap) {
    std::vector<std::size_t> order(c.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return c[a].box[4] > c[b].box[4]; });
    const float add = plus_one ? 1.0f : 0.0f;
    auto area = [&](std::size_t i) {
        return (c[i].box[2] - c[i].box[0] + add) * (c[i].box[3] - c[i].box[1] + add);
    };
    std::vector<bool> removed(c.size(), false);
    std::vector<std::size_t> keep;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const auto i = order[oi];
        if (removed[i]) continue;
        keep.push_back(i);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const auto j = order[oj];
            if (removed[j]) continue;
            const float w = std::max(0.0f, std::min(c[i].box[2], c[j].box[2]) - std::max(c[i].box[0], c[j].box[0]) + add);
            const float h = std::max(0.0f, std::min(c[i].box[3], c[j].box[3]) - std::max(c[i].box[1], c[j].box[1]) + add);
            const float inter = w * h;
            const float o = min_overlap ? inter / std::min(area(i), area(j)) : inter / (area(i) + area(j) - inter);
            if (o > threshold) removed[j] = true;
        }
    }
    return keep;
}

std::vector<Candidate> select(const std::vector<Candidate>& c, const std::vector<std::size_t>& idx) {
    std::vector<Candidate> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(c[i]);
    return out;
}

void square_up(Candidate& c) {
    const float h = c.box[3] - c.box[1];
    const float w = c.box[2] - c.box[0];
    const float l = std::max(w, h);
    c.box[0] = c.box[0] + w * 0.5f - l * 0.5f;
    c.box[1] = c.box[1] + h * 0.5f - l * 0.5f;
    c.box[2] = c.box[0] + l;
    c.box[3] = c.box[1] + l;
}

void apply_regression(Candidate& c, const float* reg) {
    const float w = c.box[2] - c.box[0] + 1;
    const float h = c.box[3] - c.box[1] + 1;
    c.box[0] += reg[0] * w;
    c.box[1] += reg[1] * h;
    c.box[2] += reg[2] * w;
    c.box[3] += reg[3] * h;
}

// Integer crop window in 1-based inclusive coordinates, clipped to the image.
struct Window {
    int x, y, ex, ey;
    bool valid() const { return ey > y - 1 && ex > x - 1; }
};

Window clip_window(const Candidate& c, int w, int h) {
    Window win{static_cast<int>(std::trunc(c.box[0])), static_cast<int>(std::trunc(c.box[1])),
               static_cast<int>(std::trunc(c.box[2])), static_cast<int>(std::trunc(c.box[3]))};
    win.x = std::max(win.x, 1);
    win.y = std::max(win.y, 1);
    win.ex = std::min(win.ex, w);
    win.ey = std::min(win.ey, h);
    return win;
}

torch::Tensor normalise(const torch::Tensor& x) { return (x - 127.5) * 0.0078125; }

// Crops every valid candidate window and area-resamples it to `side`;
// candidates with empty windows are dropped.
torch::Tensor crop_batch(const torch::Tensor& image, std::vector<Candidate>& cands, int side) {
    const int h = static_cast<int>(image.size(2));
    const int w = static_cast<int>(image.size(3));
    std::vector<torch::Tensor> crops;
    std::vector<Candidate> kept;
    for (auto& c : cands) {
        const auto win = clip_window(c, w, h);
        if (!win.valid()) continue;
        auto patch = image.index({torch::indexing::Slice(), torch::indexing::Slice(),
                                  torch::indexing::Slice(win.y - 1, win.ey), torch::indexing::Slice(win.x - 1, win.ex)});
        crops.push_back(F::adaptive_avg_pool2d(patch, F::AdaptiveAvgPool2dFuncOptions({side, side})));
        kept.push_back(c);
    }
    cands = std::move(kept);
    if (crops.empty()) return {};
    return normalise(torch::cat(crops, 0));
}

}  // namespace

struct Mtcnn::Nets {
    PNet pnet;
    RNet rnet;
    ONet onet;
};

Mtcnn::Mtcnn(const std::filesystem::path& weights_dir, MtcnnOptions options)
    : nets_(std::make_unique<Nets>()), options_(options) {
    load_state(*nets_->pnet, weights_dir / "pnet.pt");
    load_state(*nets_->rnet, weights_dir / "rnet.pt");
    load_state(*nets_->onet, weights_dir / "onet.pt");
    nets_->pnet->eval();
    nets_->rnet->eval();
    nets_->onet->eval();
}

Mtcnn::~Mtcnn() = default;
Mtcnn::Mtcnn(Mtcnn&&) noexcept = default;
Mtcnn& Mtcnn::operator=(Mtcnn&&) noexcept = default;

std::vector<FaceBox> Mtcnn::detect(const cv::Mat& bgr) const {
    if (bgr.empty() || bgr.type() != CV_8UC3) throw PreconditionError("Mtcnn::detect expects a non-empty 8-bit BGR image");
    torch::NoGradGuard no_grad;

    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    const int h = rgb.rows;
    const int w = rgb.cols;
    auto image = torch::from_blob(rgb.data, {h, w, 3}, torch::kUInt8)
                     .permute({2, 0, 1})
                     .unsqueeze(0)
                     .to(torch::kFloat32)
                     .contiguous();

    // Image pyramid so the 12x12 P-Net window covers faces >= min_face_size.
    const double m = 12.0 / options_.min_face_size;
    double minl = std::min(h, w) * m;
    double scale = m;
    std::vector<double> scales;
    while (minl >= 12.0) {
        scales.push_back(scale);
        scale *= options_.scale_factor;
        minl *= options_.scale_factor;
    }

    // Stage 1: proposal network over the pyramid.
    std::vector<Candidate> cands;
    for (double s : scales) {
        const int sh = static_cast<int>(h * s + 1);
        const int sw = static_cast<int>(w * s + 1);
        auto scaled = normalise(F::adaptive_avg_pool2d(image, F::AdaptiveAvgPool2dFuncOptions({sh, sw})));
        auto [reg, prob] = nets_->pnet->forward(scaled);
        auto p = prob[0][1].contiguous();
        auto r = reg[0].contiguous();
        const auto ph = p.size(0);
        const auto pw = p.size(1);
        auto pa = p.accessor<float, 2>();
        auto ra = r.accessor<float, 3>();
        std::vector<Candidate> at_scale;
        const auto fs = static_cast<float>(s);
        for (int64_t y = 0; y < ph; ++y) {
            for (int64_t x = 0; x < pw; ++x) {
                if (pa[y][x] < options_.thresholds[0]) continue;
                Candidate c;
                c.box[0] = std::floor((2.0f * static_cast<float>(x) + 1.0f) / fs);
                c.box[1] = std::floor((2.0f * static_cast<float>(y) + 1.0f) / fs);
                c.box[2] = std::floor((2.0f * static_cast<float>(x) + 12.0f) / fs);
                c.box[3] = std::floor((2.0f * static_cast<float>(y) + 12.0f) / fs);
                c.box[4] = pa[y][x];
                for (int k = 0; k < 4; ++k) c.reg[k] = ra[k][y][x];
                at_scale.push_back(c);
            }
        }
        auto picked = select(at_scale, nms(at_scale, 0.5f, false, false));
        cands.insert(cands.end(), picked.begin(), picked.end());
    }
    cands = select(cands, nms(cands, 0.7f, false, false));
    for (auto& c : cands) {
        const float rw = c.box[2] - c.box[0];
        const float rh = c.box[3] - c.box[1];
        c.box[0] += c.reg[0] * rw;
        c.box[1] += c.reg[1] * rh;
        c.box[2] += c.reg[2] * rw;
        c.box[3] += c.reg[3] * rh;
        square_up(c);
    }

    // Stage 2: refinement network on 24x24 crops.
    if (!cands.empty()) {
        auto batch = crop_batch(image, cands, 24);
        if (!cands.empty()) {
            auto [reg, prob] = nets_->rnet->forward(batch);
            auto pa = prob.accessor<float, 2>();
            auto ra = reg.accessor<float, 2>();
            std::vector<Candidate> passed;
            for (std::size_t i = 0; i < cands.size(); ++i) {
                const auto ii = static_cast<int64_t>(i);
                if (pa[ii][1] <= options_.thresholds[1]) continue;
                Candidate c = cands[i];
                c.box[4] = pa[ii][1];
                for (int k = 0; k < 4; ++k) c.reg[k] = ra[ii][k];
                passed.push_back(c);
            }
            cands = select(passed, nms(passed, 0.7f, false, false));
            for (auto& c : cands) {
                apply_regression(c, c.reg);
                square_up(c);
            }
        }
    }

    // Stage 3: output network on 48x48 crops, with landmarks.
    if (!cands.empty()) {
        auto batch = crop_batch(image, cands, 48);
        if (!cands.empty()) {
            auto [reg, pts, prob] = nets_->onet->forward(batch);
            auto pa = prob.accessor<float, 2>();
            auto ra = reg.accessor<float, 2>();
            auto la = pts.accessor<float, 2>();
            std::vector<Candidate> passed;
            for (std::size_t i = 0; i < cands.size(); ++i) {
                const auto ii = static_cast<int64_t>(i);
                if (pa[ii][1] <= options_.thresholds[2]) continue;
                Candidate c = cands[i];
                c.box[4] = pa[ii][1];
                const float bw = c.box[2] - c.box[0] + 1;
                const float bh = c.box[3] - c.box[1] + 1;
                for (int k = 0; k < 5; ++k) {
                    c.points[k] = {bw * la[ii][k] + c.box[0] - 1, bh * la[ii][k + 5] + c.box[1] - 1};
                }
                for (int k = 0; k < 4; ++k) c.reg[k] = ra[ii][k];
                apply_regression(c, c.reg);
                passed.push_back(c);
            }
            cands = select(passed, nms(passed, 0.7f, true, true));
        }
    }

    std::vector<FaceBox> faces;
    faces.reserve(cands.size());
    for (const auto& c : cands) {
        faces.push_back({c.box[0], c.box[1], c.box[2], c.box[3], c.box[4], c.points});
    }
    std::stable_sort(faces.begin(), faces.end(), [](const FaceBox& a, const FaceBox& b) { return a.score > b.score; });
    return faces;
}

std::filesystem::path default_mtcnn_weights_dir() {
    return asset_root() / "mtcnn";
}

}  // namespace decay_bench::extraction
