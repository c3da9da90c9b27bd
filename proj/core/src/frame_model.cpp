#include "decay_bench/frame_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "decay_bench/errors.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/util.hpp"

namespace decay_bench::frame {

namespace {

constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};

torch::Tensor stack_inputs(const std::vector<cv::Mat>& resized) {
    std::vector<torch::Tensor> items;
    items.reserve(resized.size());
    for (const auto& m : resized) items.push_back(to_input_tensor(m, m.cols));
    return torch::stack(items);
}

std::string join_ids(const manifest::IdentitySet& ids) {
    std::string out;
    for (const auto& id : ids) out += (out.empty() ? "" : ",") + id;
    return out;
}

void require_disjoint(const extraction::FrameIndex& train, const extraction::FrameIndex& val) {
    manifest::IdentitySet shared;
    const auto val_ids = val.identities();
    for (const auto& id : train.identities()) {
        if (val_ids.count(id)) shared.insert(id);
    }
    if (!shared.empty()) throw IdentityLeakError("identities in both train and validation frames: " + join_ids(shared));
}

// Mean cross-entropy and accuracy over an index, in eval mode.
std::pair<double, double> evaluate_loss(FrameModel& model, const extraction::FrameIndex& index,
                                        FrameImageLoader& loader, manifest::ClassScheme scheme, int batch_size) {
    model.set_training(false);
    torch::NoGradGuard guard;
    double total = 0.0;
    std::size_t correct = 0;
    const auto n = index.entries.size();
    for (std::size_t start = 0; start < n; start += batch_size) {
        const auto end = std::min(n, start + static_cast<std::size_t>(batch_size));
        std::vector<cv::Mat> imgs;
        std::vector<std::int64_t> labels;
        for (auto i = start; i < end; ++i) {
            imgs.push_back(loader.load(index.entries[i].image_path));
            labels.push_back(index.entries[i].class_id(scheme));
        }
        const auto y = torch::tensor(labels, torch::kInt64);
        const auto logits = model.net()->forward(stack_inputs(imgs));
        total += torch::nn::functional::cross_entropy(
                     logits, y, torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kSum))
                     .item<double>();
        correct += logits.argmax(1).eq(y).sum().item<std::int64_t>();
    }
    return {total / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

}  // namespace

std::string_view to_string(InitKind kind) {
    switch (kind) {
        case InitKind::imagenet_pretrained: return "imagenet_pretrained";
        case InitKind::checkpoint: return "checkpoint";
        case InitKind::random: return "random";
    }
    return "?";
}

InitKind parse_init_kind(std::string_view s) {
    if (s == "imagenet_pretrained" || s == "imagenet") return InitKind::imagenet_pretrained;
    if (s == "checkpoint") return InitKind::checkpoint;
    if (s == "random") return InitKind::random;
    throw ConfigError("unknown init kind '" + std::string(s) + "'");
}

void FrameModelConfig::validate() const {
    if (backbone != "resnet50") throw ConfigError("unsupported backbone '" + backbone + "'");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    for (int b : frozen_blocks) {
        if (b < 1 || b > 4) throw ConfigError("frozen_blocks must be a subset of {1,2,3,4}");
    }
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (input_size < 32) throw ConfigError("input_size must be >= 32");
    if (init == InitKind::checkpoint && init_checkpoint.empty()) {
        throw ConfigError("init=checkpoint requires init_checkpoint");
    }
}

nlohmann::json FrameModelConfig::to_json() const {
    return {{"backbone", backbone},
            {"init", to_string(init)},
            {"init_checkpoint", init_checkpoint.string()},
            {"pretrained_weights", pretrained_weights.string()},
            {"frozen_blocks", std::vector<int>(frozen_blocks.begin(), frozen_blocks.end())},
            {"num_classes", num_classes},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"early_stop_patience", early_stop_patience},
            {"max_epochs", max_epochs},
            {"batch_size", batch_size},
            {"input_size", input_size},
            {"seed", seed}};
}

FrameModelConfig FrameModelConfig::from_json(const nlohmann::json& j) {
    FrameModelConfig c;
    c.backbone = j.value("backbone", c.backbone);
    if (j.contains("init")) c.init = parse_init_kind(j.at("init").get<std::string>());
    c.init_checkpoint = j.value("init_checkpoint", std::string());
    c.pretrained_weights = j.value("pretrained_weights", std::string());
    if (j.contains("frozen_blocks")) {
        c.frozen_blocks.clear();
        for (const auto& b : j.at("frozen_blocks")) c.frozen_blocks.insert(b.get<int>());
    }
    c.num_classes = j.value("num_classes", c.num_classes);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.input_size = j.value("input_size", c.input_size);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

std::filesystem::path default_imagenet_weights_path() { return asset_root() / "resnet50" / "imagenet.pt"; }

cv::Mat resize_to_input(const cv::Mat& bgr, int input_size) {
    if (bgr.empty()) throw PreconditionError("empty frame image");
    if (bgr.cols == input_size && bgr.rows == input_size) return bgr;
    cv::Mat out;
    const bool shrink = bgr.cols > input_size || bgr.rows > input_size;
    cv::resize(bgr, out, {input_size, input_size}, 0, 0, shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
    return out;
}

torch::Tensor to_input_tensor(const cv::Mat& bgr, int input_size) {
    cv::Mat img = resize_to_input(bgr, input_size);
    if (img.type() != CV_8UC3) throw PreconditionError("frames must be 8-bit 3-channel images");
    cv::Mat rgb;
    cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    auto t = torch::from_blob(f.data, {input_size, input_size, 3}, torch::kFloat32).clone().permute({2, 0, 1});
    const auto mean = torch::tensor({kMean[0], kMean[1], kMean[2]}).view({3, 1, 1});
    const auto std = torch::tensor({kStd[0], kStd[1], kStd[2]}).view({3, 1, 1});
    return ((t - mean) / std).contiguous();
}

FrameModel::FrameModel(FrameModelConfig config, ResNet50 net) : config_(std::move(config)), net_(std::move(net)) {
    apply_freeze();
}

bool FrameModel::is_frozen(const std::string& name) const {
    const int block = ResNet50Impl::block_of(name);
    return block != 0 && config_.frozen_blocks.count(block) > 0;
}

std::map<std::string, bool> FrameModel::freeze_map() const {
    std::map<std::string, bool> out;
    for (const auto& p : net_->named_parameters()) out[p.key()] = is_frozen(p.key());
    return out;
}

void FrameModel::apply_freeze() {
    for (auto& p : net_->named_parameters()) p.value().set_requires_grad(!is_frozen(p.key()));
}

void FrameModel::set_training(bool training) {
    net_->train(training);
    if (!training) return;
    for (int b : config_.frozen_blocks) {
        for (auto& m : net_->block_modules(b)) m->eval();
    }
}

ModelCheckpoint FrameModel::to_checkpoint() const {
    ModelCheckpoint ckpt;
    ckpt.architecture = kFrameArchitecture;
    ckpt.config = config_.to_json();
    ckpt.state = snapshot_state(*net_);
    ckpt.freeze_map = freeze_map();
    return ckpt;
}

FrameModel FrameModel::from_checkpoint(const ModelCheckpoint& ckpt) {
    if (ckpt.architecture != kFrameArchitecture) {
        throw IncompatibleCheckpoint("expected a " + std::string(kFrameArchitecture) + " checkpoint, got '" +
                                     ckpt.architecture + "'");
    }
    auto config = FrameModelConfig::from_json(ckpt.config);
    ResNet50 net(config.num_classes);
    restore_state(*net, ckpt.state);
    return FrameModel(std::move(config), std::move(net));
}

FrameModel build_frame_model(const FrameModelConfig& config) {
    config.validate();
    torch::manual_seed(derive_seed(config.seed, {"frame_model_init"}));
    ResNet50 net(config.num_classes);
    std::vector<std::string> warnings;

    if (config.init == InitKind::imagenet_pretrained) {
        const auto path = config.pretrained_weights.empty() ? default_imagenet_weights_path() : config.pretrained_weights;
        const auto dict = load_pickled_state_dict(path);
        std::vector<std::string> skip;
        const auto fc = dict.find("fc.weight");
        if (fc == dict.end() || fc->second.size(0) != config.num_classes) skip.push_back("fc.");
        try {
            restore_state(*net, dict, skip);
        } catch (const IncompatibleCheckpoint& e) {
            throw IncompatibleCheckpoint(path.string() + " is not a ResNet-50 state dict: " + e.what());
        }
    } else if (config.init == InitKind::checkpoint) {
        const auto ckpt = ModelCheckpoint::load(config.init_checkpoint);
        if (ckpt.architecture != kFrameArchitecture) {
            throw IncompatibleCheckpoint(config.init_checkpoint.string() + " holds a '" + ckpt.architecture +
                                         "' model, expected " + kFrameArchitecture);
        }
        const int source_classes = ckpt.config.value("num_classes", 0);
        std::vector<std::string> skip;
        if (source_classes != config.num_classes) {
            skip.push_back("fc.");
            warnings.push_back("head reinitialised: checkpoint has " + std::to_string(source_classes) +
                               " classes, requested " + std::to_string(config.num_classes));
            log::warn("frame_model.head_swap", {{"checkpoint", config.init_checkpoint.string()},
                                                {"from_classes", source_classes},
                                                {"to_classes", config.num_classes}});
        }
        restore_state(*net, ckpt.state, skip);
    }

    FrameModel model(config, std::move(net));
    for (auto& w : warnings) model.add_warning(std::move(w));
    return model;
}

FrameImageLoader::FrameImageLoader(int input_size, std::size_t cache_budget_bytes)
    : input_size_(input_size), budget_(cache_budget_bytes) {}

cv::Mat FrameImageLoader::load(const std::filesystem::path& path) {
    const auto key = path.string();
    if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
    const cv::Mat raw = cv::imread(key, cv::IMREAD_COLOR);
    if (raw.empty()) throw DecodeError("cannot read frame image " + key);
    cv::Mat img = resize_to_input(raw, input_size_).clone();
    const auto bytes = img.total() * img.elemSize();
    if (used_ + bytes <= budget_) {
        cache_.emplace(key, img);
        used_ += bytes;
    }
    return img;
}

TrainResult fit_frame_model(FrameModel& model, const extraction::FrameIndex& train_index,
                            const extraction::FrameIndex& val_index, const AugmentationPolicy& augmentation,
                            const TrainOptions& options) {
    const auto& config = model.config();
    augmentation.validate();

    require_disjoint(train_index, val_index);
    if (train_index.entries.empty()) throw EmptyDataset("training frame index is empty");
    if (val_index.entries.empty()) throw EmptyDataset("validation frame index is empty");

    const int expected_classes = manifest::num_classes(options.scheme);
    if (expected_classes != config.num_classes) {
        throw ConfigError("model has " + std::to_string(config.num_classes) + " classes but scheme needs " +
                          std::to_string(expected_classes));
    }

    model.apply_freeze();
    std::vector<torch::Tensor> trainable;
    for (auto& p : model.net()->parameters()) {
        if (p.requires_grad()) trainable.push_back(p);
    }
    torch::optim::Adam optimizer(trainable,
                                 torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));

    FrameImageLoader loader(config.input_size, options.image_cache_bytes);
    TrainResult result;
    result.warnings = model.warnings();

    auto best_state = snapshot_state(*model.net());
    double best_loss = std::numeric_limits<double>::quiet_NaN();
    int since_best = 0;

    const auto n = train_index.entries.size();
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto tag = std::to_string(epoch);
        Rng order_rng(derive_seed(config.seed, {"frame_order", tag}));
        Rng aug_rng(derive_seed(augmentation.seed, {"frame_augment", std::to_string(config.seed), tag}));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        order_rng.shuffle(order);

        model.set_training(true);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const auto end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
            std::vector<cv::Mat> imgs;
            std::vector<std::int64_t> labels;
            for (auto i = start; i < end; ++i) {
                const auto& e = train_index.entries[order[i]];
                imgs.push_back(augment_image(loader.load(e.image_path), augmentation, aug_rng));
                labels.push_back(e.class_id(options.scheme));
            }
            optimizer.zero_grad();
            const auto logits = model.net()->forward(stack_inputs(imgs));
            const auto loss = torch::nn::functional::cross_entropy(logits, torch::tensor(labels, torch::kInt64));
            const double value = loss.item<double>();
            if (!std::isfinite(value)) {
                throw TrainingDiverged("non-finite training loss at epoch " + tag);
            }
            loss.backward();
            optimizer.step();
            loss_sum += value * static_cast<double>(end - start);
        }

        const auto [val_loss, val_acc] = evaluate_loss(model, val_index, loader, options.scheme, config.batch_size);
        if (!std::isfinite(val_loss)) throw TrainingDiverged("non-finite validation loss at epoch " + tag);
        EpochRecord record{epoch, loss_sum / static_cast<double>(n), val_loss, val_acc};
        result.history.push_back(record);
        log::info("frame_train.epoch", {{"epoch", epoch},
                                        {"train_loss", record.train_loss},
                                        {"val_loss", val_loss},
                                        {"val_accuracy", val_acc}});
        if (options.on_epoch) options.on_epoch(record);

        if (std::isnan(best_loss) || val_loss < best_loss) {
            best_loss = val_loss;
            best_state = snapshot_state(*model.net());
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.early_stop_patience) {
            log::info("frame_train.early_stop", {{"epoch", epoch}, {"best_epoch", result.best_epoch}});
            break;
        }
    }

    restore_state(*model.net(), best_state);
    model.set_training(false);

    result.checkpoint = model.to_checkpoint();
    result.checkpoint.epochs_trained = result.best_epoch;
    result.checkpoint.best_val_loss = best_loss;
    result.checkpoint.train_manifest_hash = train_index.content_hash();
    nlohmann::json history = nlohmann::json::array();
    for (const auto& r : result.history) {
        history.push_back({{"epoch", r.epoch},
                           {"train_loss", r.train_loss},
                           {"val_loss", r.val_loss},
                           {"val_accuracy", r.val_accuracy}});
    }
    result.checkpoint.provenance = {{"augmentation", augmentation.to_json()},
                                    {"class_scheme", manifest::to_string(options.scheme)},
                                    {"history", history},
                                    {"epochs_run", static_cast<int>(result.history.size())},
                                    {"val_index_hash", val_index.content_hash()},
                                    {"train_frames", train_index.entries.size()},
                                    {"val_frames", val_index.entries.size()},
                                    {"warnings", result.warnings}};
    return result;
}

TrainResult train_frame_model(const extraction::FrameIndex& train_index, const extraction::FrameIndex& val_index,
                              const FrameModelConfig& config, const AugmentationPolicy& augmentation,
                              const TrainOptions& options) {
    // Leak and emptiness checks come before the (possibly expensive) build.
    require_disjoint(train_index, val_index);
    auto model = build_frame_model(config);
    return fit_frame_model(model, train_index, val_index, augmentation, options);
}

torch::Tensor predict_frames(FrameModel& model, const std::vector<cv::Mat>& frames) {
    if (frames.empty()) throw PreconditionError("predict_frames needs at least one frame");
    model.set_training(false);
    torch::NoGradGuard guard;
    const int size = model.config().input_size;
    const auto n = frames.size();
    std::vector<torch::Tensor> parts;
    for (std::size_t start = 0; start < n; start += model.config().batch_size) {
        const auto end = std::min(n, start + static_cast<std::size_t>(model.config().batch_size));
        std::vector<torch::Tensor> items;
        for (auto i = start; i < end; ++i) items.push_back(to_input_tensor(frames[i], size));
        parts.push_back(torch::softmax(model.net()->forward(torch::stack(items)).to(torch::kFloat64), 1));
    }
    return torch::cat(parts);
}

torch::Tensor predict_frames(FrameModel& model, const extraction::FrameSet& frames) {
    std::vector<cv::Mat> images;
    for (const auto& f : frames.frames) images.push_back(f.image);
    return predict_frames(model, images);
}

std::vector<double> aggregate_video(const torch::Tensor& frame_probs) {
    if (!frame_probs.defined() || frame_probs.dim() != 2 || frame_probs.size(0) == 0) {
        throw EmptyInput("aggregate_video needs a non-empty T x C matrix");
    }
    const auto p = frame_probs.to(torch::kFloat64).contiguous();
    const auto t = p.size(0), c = p.size(1);
    const auto* data = p.data_ptr<double>();
    std::vector<double> out(c, 0.0);
    for (std::int64_t i = 0; i < t; ++i) {
        for (std::int64_t j = 0; j < c; ++j) out[j] += data[i * c + j];
    }
    for (auto& v : out) v /= static_cast<double>(t);
    return out;
}

torch::Tensor extract_embeddings(FrameModel& model, const std::vector<cv::Mat>& frames) {
    if (frames.empty()) throw PreconditionError("extract_embeddings needs at least one frame");
    model.set_training(false);
    torch::NoGradGuard guard;
    const int size = model.config().input_size;
    const auto n = frames.size();
    std::vector<torch::Tensor> parts;
    for (std::size_t start = 0; start < n; start += model.config().batch_size) {
        const auto end = std::min(n, start + static_cast<std::size_t>(model.config().batch_size));
        std::vector<torch::Tensor> items;
        for (auto i = start; i < end; ++i) items.push_back(to_input_tensor(frames[i], size));
        parts.push_back(model.net()->features(torch::stack(items)));
    }
    return torch::cat(parts).contiguous();
}

EmbeddingSequence extract_embeddings(FrameModel& model, const extraction::FrameSet& frames) {
    std::vector<cv::Mat> images;
    EmbeddingSequence seq;
    seq.video_id = frames.video_id;
    for (const auto& f : frames.frames) {
        images.push_back(f.image);
        seq.timestamps.push_back(f.timestamp);
    }
    seq.embeddings = extract_embeddings(model, images);
    return seq;
}

torch::Tensor apply_head(FrameModel& model, const torch::Tensor& embeddings) {
    model.set_training(false);
    torch::NoGradGuard guard;
    return torch::softmax(model.net()->head(embeddings).to(torch::kFloat64), 1);
}

extraction::FrameSet frames_for_video(const extraction::FrameIndex& index, const std::string& video_id) {
    std::vector<const extraction::FrameEntry*> entries;
    for (const auto& e : index.entries) {
        if (e.video_id == video_id) entries.push_back(&e);
    }
    std::sort(entries.begin(), entries.end(), [](auto* a, auto* b) { return a->frame < b->frame; });
    extraction::FrameSet set;
    set.video_id = video_id;
    set.config_fingerprint = index.config_fingerprint;
    for (const auto* e : entries) {
        cv::Mat img = cv::imread(e->image_path.string(), cv::IMREAD_COLOR);
        if (img.empty()) throw DecodeError("cannot read frame image " + e->image_path.string());
        set.frames.push_back({e->timestamp, std::move(img)});
    }
    return set;
}

}  // namespace decay_bench::frame
