#include "decay_bench/baseline.hpp"

#include <numeric>

#include <opencv2/imgproc.hpp>
#include <torch/script.h>

#include "decay_bench/errors.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/util.hpp"

namespace decay_bench::frame {

namespace nn = torch::nn;

namespace {

void add_conv_stage(nn::Sequential& seq, int in, int out) {
    seq->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(false)));
    seq->push_back(nn::BatchNorm2d(out));
    seq->push_back(nn::ReLU());
    seq->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
}

// FaceNet-style standardisation, (x - 127.5) / 128 on RGB.
torch::Tensor standardise(const cv::Mat& bgr, int size) {
    cv::Mat img = resize_to_input(bgr, size);
    cv::Mat rgb;
    cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 128.0, -127.5 / 128.0);
    return torch::from_blob(f.data, {size, size, 3}, torch::kFloat32).clone().permute({2, 0, 1}).contiguous();
}

torch::Tensor standardise_batch(const std::vector<cv::Mat>& frames, int size) {
    std::vector<torch::Tensor> items;
    for (const auto& f : frames) items.push_back(standardise(f, size));
    return torch::stack(items);
}

}  // namespace

IdentityEmbedderImpl::IdentityEmbedderImpl(int embedding_dim, int num_identities) {
    nn::Sequential seq;
    add_conv_stage(seq, 3, 32);
    add_conv_stage(seq, 32, 64);
    add_conv_stage(seq, 64, 128);
    add_conv_stage(seq, 128, 256);
    trunk = register_module("trunk", seq);
    projection = register_module("projection", nn::Linear(256, embedding_dim));
    classifier = register_module("classifier", nn::Linear(embedding_dim, num_identities));
}

torch::Tensor IdentityEmbedderImpl::embed(torch::Tensor x) {
    x = trunk->forward(x);
    x = torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
    return torch::nn::functional::normalize(projection(x), torch::nn::functional::NormalizeFuncOptions().dim(1));
}

void IdentityEmbedderConfig::validate() const {
    if (input_size < 16) throw ConfigError("embedder input_size must be >= 16");
    if (embedding_dim < 1) throw ConfigError("embedder embedding_dim must be >= 1");
    if (epochs < 0) throw ConfigError("embedder epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("embedder batch_size must be >= 2");
    if (!(learning_rate > 0.0)) throw ConfigError("embedder learning_rate must be > 0");
}

nlohmann::json IdentityEmbedderConfig::to_json() const {
    return {{"input_size", input_size},       {"embedding_dim", embedding_dim}, {"epochs", epochs},
            {"batch_size", batch_size},       {"learning_rate", learning_rate}, {"weight_decay", weight_decay},
            {"seed", seed}};
}

IdentityEmbedderConfig IdentityEmbedderConfig::from_json(const nlohmann::json& j) {
    IdentityEmbedderConfig c;
    c.input_size = j.value("input_size", c.input_size);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

ModelCheckpoint train_identity_embedder(const extraction::FrameIndex& index, const IdentityEmbedderConfig& config) {
    config.validate();
    std::vector<const extraction::FrameEntry*> real;
    std::map<std::string, std::int64_t> identity_class;
    for (const auto& e : index.entries) {
        if (e.label != manifest::Label::real) continue;
        real.push_back(&e);
        identity_class.emplace(e.identity_id, 0);
    }
    if (identity_class.size() < 2) throw EmptyDataset("identity embedder needs real frames of at least two identities");
    std::int64_t next = 0;
    for (auto& [id, cls] : identity_class) cls = next++;

    torch::manual_seed(derive_seed(config.seed, {"identity_embedder_init"}));
    IdentityEmbedder net(config.embedding_dim, static_cast<int>(identity_class.size()));
    torch::optim::Adam optimizer(net->parameters(),
                                 torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));
    FrameImageLoader loader(config.input_size);
    auto policy = AugmentationPolicy();
    policy.rotation_p = policy.scale_p = policy.blur_p = 0.0;

    std::vector<double> history;
    const auto n = real.size();
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng order_rng(derive_seed(config.seed, {"embedder_order", std::to_string(epoch)}));
        Rng aug_rng(derive_seed(config.seed, {"embedder_augment", std::to_string(epoch)}));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        order_rng.shuffle(order);
        net->train();
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const auto end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
            if (end - start < 2) break;  // BatchNorm needs more than one sample
            std::vector<cv::Mat> imgs;
            std::vector<std::int64_t> labels;
            for (auto i = start; i < end; ++i) {
                imgs.push_back(augment_image(loader.load(real[order[i]]->image_path), policy, aug_rng));
                labels.push_back(identity_class.at(real[order[i]]->identity_id));
            }
            optimizer.zero_grad();
            // Scaled cosine logits: embeddings are unit-norm.
            const auto logits = net->forward(standardise_batch(imgs, config.input_size)) * 16.0;
            const auto loss = torch::nn::functional::cross_entropy(logits, torch::tensor(labels, torch::kInt64));
            if (!std::isfinite(loss.item<double>())) throw TrainingDiverged("identity embedder loss is not finite");
            loss.backward();
            optimizer.step();
            loss_sum += loss.item<double>() * static_cast<double>(end - start);
        }
        history.push_back(loss_sum / static_cast<double>(n));
        log::info("embedder_train.epoch", {{"epoch", epoch}, {"train_loss", history.back()}});
    }
    net->eval();

    ModelCheckpoint ckpt;
    ckpt.architecture = kEmbedderArchitecture;
    ckpt.config = config.to_json();
    ckpt.config["num_identities"] = identity_class.size();
    ckpt.state = snapshot_state(*net);
    for (const auto& p : net->named_parameters()) ckpt.freeze_map[p.key()] = false;
    ckpt.train_manifest_hash = index.content_hash();
    ckpt.epochs_trained = config.epochs;
    ckpt.provenance = {{"train_loss", history}, {"real_frames", n}, {"identities", identity_class.size()}};
    return ckpt;
}

struct BaselineExtractor::Impl {
    IdentityEmbedder native{nullptr};
    std::optional<torch::jit::script::Module> script;
    int input_size = 64;
};

std::filesystem::path default_baseline_asset() { return asset_root() / "baseline" / "identity_embedder.ckpt"; }

BaselineExtractor BaselineExtractor::load(const std::filesystem::path& asset, int torchscript_input_size) {
    if (asset.empty() || !std::filesystem::exists(asset)) {
        throw AssetMissing("baseline identity-embedding asset not found: " + asset.string());
    }
    BaselineExtractor ex;
    ex.impl_ = std::make_shared<Impl>();
    ex.fingerprint_ = short_hash(sha256_file(asset));

    std::optional<ModelCheckpoint> ckpt;
    try {
        ckpt = ModelCheckpoint::load(asset);
    } catch (const IncompatibleCheckpoint&) {
    }
    if (ckpt) {
        if (ckpt->architecture != kEmbedderArchitecture) {
            throw AssetMissing(asset.string() + " holds a '" + ckpt->architecture + "' model, not an identity embedder");
        }
        const auto cfg = IdentityEmbedderConfig::from_json(ckpt->config);
        ex.impl_->native = IdentityEmbedder(cfg.embedding_dim, ckpt->config.at("num_identities").get<int>());
        restore_state(*ex.impl_->native, ckpt->state);
        ex.impl_->native->eval();
        ex.impl_->input_size = cfg.input_size;
        ex.dim_ = cfg.embedding_dim;
        return ex;
    }
    try {
        ex.impl_->script = torch::jit::load(asset.string());
    } catch (const c10::Error& e) {
        throw AssetMissing("cannot load baseline asset " + asset.string() + ": " + e.what_without_backtrace());
    }
    ex.impl_->script->eval();
    ex.impl_->input_size = torchscript_input_size;
    torch::NoGradGuard guard;
    const auto probe = ex.impl_->script->forward({torch::zeros({1, 3, torchscript_input_size, torchscript_input_size})});
    ex.dim_ = probe.toTensor().size(1);
    return ex;
}

torch::Tensor BaselineExtractor::embed(const std::vector<cv::Mat>& frames) {
    if (frames.empty()) throw PreconditionError("baseline embedding needs at least one frame");
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> parts;
    constexpr std::size_t kBatch = 64;
    for (std::size_t start = 0; start < frames.size(); start += kBatch) {
        const auto end = std::min(frames.size(), start + kBatch);
        const std::vector<cv::Mat> chunk(frames.begin() + start, frames.begin() + end);
        const auto x = standardise_batch(chunk, impl_->input_size);
        if (impl_->native) {
            parts.push_back(impl_->native->embed(x));
        } else {
            parts.push_back(impl_->script->forward({x}).toTensor().to(torch::kFloat32));
        }
    }
    return torch::cat(parts).contiguous();
}

EmbeddingSequence BaselineExtractor::embed(const extraction::FrameSet& frames) {
    EmbeddingSequence seq;
    seq.video_id = frames.video_id;
    std::vector<cv::Mat> images;
    for (const auto& f : frames.frames) {
        images.push_back(f.image);
        seq.timestamps.push_back(f.timestamp);
    }
    seq.embeddings = embed(images);
    return seq;
}

}  // namespace decay_bench::frame
