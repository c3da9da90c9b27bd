#include "decay_bench/resnet.hpp"

#include <cmath>

namespace decay_bench::frame {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

nn::Sequential make_layer(int& in_planes, int planes, int blocks, int stride) {
    nn::Sequential layer;
    const bool needs_projection = stride != 1 || in_planes != planes * BottleneckImpl::kExpansion;
    layer->push_back(Bottleneck(in_planes, planes, stride, needs_projection));
    in_planes = planes * BottleneckImpl::kExpansion;
    for (int i = 1; i < blocks; ++i) layer->push_back(Bottleneck(in_planes, planes, 1, false));
    return layer;
}

}  // namespace

BottleneckImpl::BottleneckImpl(int in_planes, int planes, int stride, bool project) {
    conv1 = register_module("conv1", conv(in_planes, planes, 1, 1, 0));
    bn1 = register_module("bn1", nn::BatchNorm2d(planes));
    conv2 = register_module("conv2", conv(planes, planes, 3, stride, 1));
    bn2 = register_module("bn2", nn::BatchNorm2d(planes));
    conv3 = register_module("conv3", conv(planes, planes * kExpansion, 1, 1, 0));
    bn3 = register_module("bn3", nn::BatchNorm2d(planes * kExpansion));
    if (project) {
        downsample = register_module(
            "downsample", nn::Sequential(conv(in_planes, planes * kExpansion, 1, stride, 0),
                                         nn::BatchNorm2d(planes * kExpansion)));
    }
}

torch::Tensor BottleneckImpl::forward(torch::Tensor x) {
    auto identity = x;
    auto out = torch::relu(bn1(conv1(x)));
    out = torch::relu(bn2(conv2(out)));
    out = bn3(conv3(out));
    if (downsample) identity = downsample->forward(x);
    return torch::relu(out + identity);
}

ResNet50Impl::ResNet50Impl(int num_classes) : num_classes_(num_classes) {
    conv1 = register_module("conv1", conv(3, 64, 7, 2, 3));
    bn1 = register_module("bn1", nn::BatchNorm2d(64));
    int in_planes = 64;
    layer1 = register_module("layer1", make_layer(in_planes, 64, 3, 1));
    layer2 = register_module("layer2", make_layer(in_planes, 128, 4, 2));
    layer3 = register_module("layer3", make_layer(in_planes, 256, 6, 2));
    layer4 = register_module("layer4", make_layer(in_planes, 512, 3, 2));
    fc = register_module("fc", nn::Linear(kFeatureDim, num_classes));

    // torchvision initialisation: Kaiming-normal (fan_out) convolutions, unit BN.
    for (auto& m : modules(/*include_self=*/false)) {
        if (auto* c = m->as<nn::Conv2d>()) {
            nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
        } else if (auto* b = m->as<nn::BatchNorm2d>()) {
            nn::init::ones_(b->weight);
            nn::init::zeros_(b->bias);
        }
    }
}

torch::Tensor ResNet50Impl::features(torch::Tensor x) {
    x = torch::relu(bn1(conv1(x)));
    x = torch::max_pool2d(x, 3, 2, 1);
    x = layer1->forward(x);
    x = layer2->forward(x);
    x = layer3->forward(x);
    x = layer4->forward(x);
    return torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
}

torch::Tensor ResNet50Impl::forward(torch::Tensor x) { return fc(features(std::move(x))); }

std::vector<std::shared_ptr<nn::Module>> ResNet50Impl::block_modules(int block) {
    switch (block) {
        case 1: return {conv1.ptr(), bn1.ptr(), layer1.ptr()};
        case 2: return {layer2.ptr()};
        case 3: return {layer3.ptr()};
        case 4: return {layer4.ptr()};
        default: return {fc.ptr()};
    }
}

std::vector<std::string> ResNet50Impl::block_prefixes(int block) {
    switch (block) {
        case 1: return {"conv1.", "bn1.", "layer1."};
        case 2: return {"layer2."};
        case 3: return {"layer3."};
        case 4: return {"layer4."};
        default: return {"fc."};
    }
}

int ResNet50Impl::block_of(const std::string& name) {
    for (int b = 1; b <= 4; ++b) {
        for (const auto& prefix : block_prefixes(b)) {
            if (name.starts_with(prefix)) return b;
        }
    }
    return 0;
}

void ResNet50Impl::reset_head(int num_classes) {
    num_classes_ = num_classes;
    fc = replace_module("fc", nn::Linear(kFeatureDim, num_classes));
}

}  // namespace decay_bench::frame
