#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace decay_bench::frame {

struct BottleneckImpl : torch::nn::Module {
    static constexpr int kExpansion = 4;

    BottleneckImpl(int in_planes, int planes, int stride, bool downsample);
    torch::Tensor forward(torch::Tensor x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
    torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

/// ResNet-50 with torchvision parameter names (conv1, bn1, layer1..layer4,
/// fc), so torchvision ImageNet state dicts load by name. "Block i" in
/// configuration refers to `layer<i>`.
struct ResNet50Impl : torch::nn::Module {
    static constexpr int kFeatureDim = 2048;

    explicit ResNet50Impl(int num_classes);

    /// Pooled penultimate activations, N x 2048.
    torch::Tensor features(torch::Tensor x);
    /// Classification logits, N x num_classes.
    torch::Tensor forward(torch::Tensor x);
    torch::Tensor head(const torch::Tensor& features) { return fc(features); }

    /// Modules making up block i (1..4); block 1 also owns the stem.
    std::vector<std::shared_ptr<torch::nn::Module>> block_modules(int block);
    /// Parameter-name prefixes belonging to block i (1..4) or the head (0).
    static std::vector<std::string> block_prefixes(int block);
    /// 1..4 for backbone parameters, 0 for the head.
    static int block_of(const std::string& parameter_name);

    void reset_head(int num_classes);
    int num_classes() const { return num_classes_; }

    torch::nn::Conv2d conv1{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr};
    torch::nn::Sequential layer1{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr};
    torch::nn::Linear fc{nullptr};

private:
    int num_classes_;
};
TORCH_MODULE(ResNet50);

}  // namespace decay_bench::frame
