#include "decay_bench/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "decay_bench/errors.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/util.hpp"

namespace decay_bench::temporal {

namespace nn = torch::nn;

namespace {

nlohmann::json ids_json(const manifest::IdentitySet& ids) { return std::vector<std::string>(ids.begin(), ids.end()); }

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Population standard deviation.
double std_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

struct Batch {
    torch::Tensor x;
    torch::Tensor y;
};

Batch eval_batch(const std::vector<LabelledSequence>& seqs, std::size_t start, std::size_t end, int target) {
    std::vector<torch::Tensor> xs;
    std::vector<std::int64_t> ys;
    for (auto i = start; i < end; ++i) {
        xs.push_back(standardize_length(seqs[i].embeddings, target, Mode::eval, 0));
        ys.push_back(seqs[i].label);
    }
    return {torch::stack(xs), torch::tensor(ys, torch::kInt64)};
}

std::pair<double, double> evaluate(TemporalModel& model, const std::vector<LabelledSequence>& seqs,
                                   const torch::Tensor& weights) {
    model.net()->eval();
    torch::NoGradGuard guard;
    double loss = 0.0;
    std::int64_t correct = 0;
    const auto bs = static_cast<std::size_t>(model.config().batch_size);
    for (std::size_t start = 0; start < seqs.size(); start += bs) {
        const auto end = std::min(seqs.size(), start + bs);
        const auto b = eval_batch(seqs, start, end, model.config().target_length);
        const auto logits = model.net()->forward(b.x);
        auto opts = nn::functional::CrossEntropyFuncOptions().reduction(torch::kSum);
        if (weights.defined()) opts = opts.weight(weights);
        loss += nn::functional::cross_entropy(logits, b.y, opts).item<double>();
        correct += logits.argmax(1).eq(b.y).sum().item<std::int64_t>();
    }
    const auto n = static_cast<double>(seqs.size());
    return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

void TemporalModelConfig::validate() const {
    if (gru_layers < 1) throw ConfigError("gru_layers must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (fc_layers < 1) throw ConfigError("fc_layers must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
    if (target_length < 1) throw ConfigError("target_length must be >= 1");
    if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) throw ConfigError("mask_fraction must be in [0,1)");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (lr_plateau_epochs < 1) throw ConfigError("lr_plateau_epochs must be >= 1");
}

nlohmann::json TemporalModelConfig::to_json() const {
    return {{"gru_layers", gru_layers},
            {"bidirectional", bidirectional},
            {"hidden_dim", hidden_dim},
            {"fc_layers", fc_layers},
            {"dropout", dropout},
            {"target_length", target_length},
            {"mask_fraction", mask_fraction},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"early_stop_patience", early_stop_patience},
            {"max_epochs", max_epochs},
            {"batch_size", batch_size},
            {"num_classes", num_classes},
            {"folds", folds},
            {"class_weighted_loss", class_weighted_loss},
            {"lr_schedule", lr_schedule},
            {"lr_plateau_epochs", lr_plateau_epochs},
            {"seed", seed}};
}

TemporalModelConfig TemporalModelConfig::from_json(const nlohmann::json& j) {
    TemporalModelConfig c;
    c.gru_layers = j.value("gru_layers", c.gru_layers);
    c.bidirectional = j.value("bidirectional", c.bidirectional);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.fc_layers = j.value("fc_layers", c.fc_layers);
    c.dropout = j.value("dropout", c.dropout);
    c.target_length = j.value("target_length", c.target_length);
    c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.folds = j.value("folds", c.folds);
    c.class_weighted_loss = j.value("class_weighted_loss", c.class_weighted_loss);
    c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
    c.lr_plateau_epochs = j.value("lr_plateau_epochs", c.lr_plateau_epochs);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

std::vector<int> TemporalModelConfig::fc_widths(int in) const {
    std::vector<int> widths;
    for (int i = 1; i < fc_layers; ++i) {
        const int shift = 2 * i - 1;
        const int w = shift < 31 ? (in >> shift) : 0;
        widths.push_back(std::max(w, num_classes));
    }
    widths.push_back(num_classes);
    return widths;
}

torch::Tensor standardize_length(const torch::Tensor& seq, int target, Mode mode, std::uint64_t seed) {
    if (!seq.defined() || seq.dim() != 2 || seq.size(0) < 1) {
        throw PreconditionError("standardize_length needs a T x D sequence with T >= 1");
    }
    const auto t = seq.size(0);
    if (t == target) return seq;
    Rng rng(seed);
    if (t > target) {
        const std::int64_t offset = mode == Mode::eval ? 0 : rng.uniform_int(0, t - target);
        return seq.slice(0, offset, offset + target);
    }
    const std::int64_t deficit = target - t;
    const std::int64_t front = mode == Mode::eval ? 0 : rng.uniform_int(0, deficit);
    std::vector<torch::Tensor> parts;
    if (front > 0) parts.push_back(seq.slice(0, 0, 1).expand({front, seq.size(1)}));
    parts.push_back(seq);
    if (deficit - front > 0) parts.push_back(seq.slice(0, t - 1, t).expand({deficit - front, seq.size(1)}));
    return torch::cat(parts);
}

std::vector<std::int64_t> mask_columns(std::int64_t dim, double fraction, std::uint64_t seed,
                                       const std::string& video_id, int epoch) {
    const auto n = rounded_count(fraction, static_cast<std::size_t>(dim), 0, static_cast<std::size_t>(dim));
    if (n == 0) return {};
    Rng rng(derive_seed(seed, {"feature_mask", video_id, std::to_string(epoch)}));
    const auto picks = rng.sample_without_replacement(static_cast<std::size_t>(dim), n);
    std::vector<std::int64_t> cols(picks.begin(), picks.end());
    std::sort(cols.begin(), cols.end());
    return cols;
}

torch::Tensor mask_features(const torch::Tensor& seq, double fraction, std::uint64_t seed, const std::string& video_id,
                            int epoch) {
    const auto cols = mask_columns(seq.size(1), fraction, seed, video_id, epoch);
    if (cols.empty()) return seq;
    auto out = seq.clone();
    out.index_fill_(1, torch::tensor(cols, torch::kInt64), 0.0);
    return out;
}

TemporalNetImpl::TemporalNetImpl(const TemporalModelConfig& config, std::int64_t input_dim)
    : dropout(config.dropout), bidirectional(config.bidirectional) {
    gru = register_module("gru", nn::GRU(nn::GRUOptions(input_dim, config.hidden_dim)
                                             .num_layers(config.gru_layers)
                                             .batch_first(true)
                                             .bidirectional(config.bidirectional)
                                             .dropout(config.gru_layers > 1 ? config.dropout : 0.0)));
    fc = register_module("fc", nn::ModuleList());
    int in = config.hidden_dim * (config.bidirectional ? 2 : 1);
    for (int w : config.fc_widths(in)) {
        fc->push_back(nn::Linear(in, w));
        in = w;
    }
}

torch::Tensor TemporalNetImpl::forward(torch::Tensor x) {
    auto [out, h_n] = gru->forward(x);
    // Final hidden state of the top layer in each direction.
    torch::Tensor h = bidirectional ? torch::cat({h_n[-2], h_n[-1]}, 1) : h_n[-1];
    const auto n = fc->size();
    for (std::size_t i = 0; i < n; ++i) {
        h = fc->ptr<nn::LinearImpl>(i)->forward(h);
        if (i + 1 < n) {
            h = torch::relu(h);
            h = nn::functional::dropout(h, nn::functional::DropoutFuncOptions().p(dropout).training(is_training()));
        }
    }
    return h;
}

TemporalModel::TemporalModel(TemporalModelConfig config, std::int64_t input_dim)
    : config_(std::move(config)), input_dim_(input_dim), net_(config_, input_dim) {
    if (input_dim < 1) throw PreconditionError("temporal model input_dim must be >= 1");
}

ModelCheckpoint TemporalModel::to_checkpoint() const {
    ModelCheckpoint ckpt;
    ckpt.architecture = kTemporalArchitecture;
    ckpt.config = config_.to_json();
    ckpt.config["input_dim"] = input_dim_;
    ckpt.state = snapshot_state(*net_);
    for (const auto& p : net_->named_parameters()) ckpt.freeze_map[p.key()] = false;
    return ckpt;
}

TemporalModel TemporalModel::from_checkpoint(const ModelCheckpoint& ckpt) {
    if (ckpt.architecture != kTemporalArchitecture) {
        throw IncompatibleCheckpoint("expected a temporal checkpoint, got '" + ckpt.architecture + "'");
    }
    TemporalModel model(TemporalModelConfig::from_json(ckpt.config), ckpt.config.at("input_dim").get<std::int64_t>());
    restore_state(*model.net_, ckpt.state);
    model.net_->eval();
    return model;
}

TemporalModel build_temporal_model(const TemporalModelConfig& config, std::int64_t input_dim) {
    config.validate();
    torch::manual_seed(derive_seed(config.seed, {"temporal_init"}));
    return TemporalModel(config, input_dim);
}

nlohmann::json FoldReport::to_json() const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& e : history) {
        h.push_back({{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"val_loss", e.val_loss},
                     {"val_accuracy", e.val_accuracy},
                     {"learning_rate", e.learning_rate}});
    }
    return {{"fold", fold},
            {"train_identities", ids_json(train_identities)},
            {"held_identities", ids_json(held_identities)},
            {"best_epoch", best_epoch},
            {"best_val_loss", best_val_loss},
            {"val_accuracy", val_accuracy},
            {"history", h}};
}

FoldResult train_temporal_fold(const std::vector<LabelledSequence>& train, const std::vector<LabelledSequence>& val,
                               const TemporalModelConfig& config, int fold) {
    config.validate();
    if (train.empty() || val.empty()) throw EmptyDataset("temporal fold needs training and validation sequences");
    FoldReport report;
    report.fold = fold;
    for (const auto& s : train) report.train_identities.insert(s.identity_id);
    for (const auto& s : val) report.held_identities.insert(s.identity_id);
    for (const auto& id : report.held_identities) {
        if (report.train_identities.count(id)) {
            throw IdentityLeakError("identity '" + id + "' in both temporal train and validation sets");
        }
    }
    const auto dim = train.front().embeddings.size(1);
    for (const auto* set : {&train, &val}) {
        for (const auto& s : *set) {
            if (s.embeddings.dim() != 2 || s.embeddings.size(1) != dim || s.embeddings.size(0) < 1) {
                throw PreconditionError("embedding sequence '" + s.video_id + "' has an inconsistent shape");
            }
            if (s.label < 0 || s.label >= config.num_classes) {
                throw PreconditionError("label of '" + s.video_id + "' outside [0, num_classes)");
            }
        }
    }

    auto fold_config = config;
    fold_config.seed = derive_seed(config.seed, {"fold", std::to_string(fold)});
    auto model = build_temporal_model(fold_config, dim);

    torch::Tensor weights;
    if (config.class_weighted_loss) {
        std::vector<double> counts(config.num_classes, 0.0);
        for (const auto& s : train) counts[s.label] += 1.0;
        std::vector<float> w(config.num_classes);
        for (int c = 0; c < config.num_classes; ++c) {
            w[c] = counts[c] > 0 ? static_cast<float>(train.size() / (config.num_classes * counts[c])) : 0.0f;
        }
        weights = torch::tensor(w);
    }

    torch::optim::Adam optimizer(model.net()->parameters(),
                                 torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));
    double lr = config.learning_rate;

    auto best_state = snapshot_state(*model.net());
    double best_loss = std::numeric_limits<double>::quiet_NaN();
    int since_best = 0;
    const auto n = train.size();
    const auto bs = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto tag = std::to_string(epoch);
        Rng order_rng(derive_seed(fold_config.seed, {"order", tag}));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        order_rng.shuffle(order);

        model.net()->train();
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const auto end = std::min(n, start + bs);
            std::vector<torch::Tensor> xs;
            std::vector<std::int64_t> ys;
            for (auto i = start; i < end; ++i) {
                const auto& s = train[order[i]];
                const auto crop_seed = derive_seed(fold_config.seed, {"crop", s.video_id, tag});
                auto x = standardize_length(s.embeddings, config.target_length, Mode::train, crop_seed);
                xs.push_back(mask_features(x, config.mask_fraction, fold_config.seed, s.video_id, epoch));
                ys.push_back(s.label);
            }
            optimizer.zero_grad();
            const auto logits = model.net()->forward(torch::stack(xs));
            auto opts = nn::functional::CrossEntropyFuncOptions();
            if (weights.defined()) opts = opts.weight(weights);
            const auto loss = nn::functional::cross_entropy(logits, torch::tensor(ys, torch::kInt64), opts);
            const double value = loss.item<double>();
            if (!std::isfinite(value)) throw TrainingDiverged("non-finite temporal loss at epoch " + tag);
            loss.backward();
            optimizer.step();
            loss_sum += value * static_cast<double>(end - start);
        }

        const auto [val_loss, val_acc] = evaluate(model, val, weights);
        if (!std::isfinite(val_loss)) throw TrainingDiverged("non-finite temporal validation loss at epoch " + tag);
        report.history.push_back({epoch, loss_sum / static_cast<double>(n), val_loss, val_acc, lr});
        log::info("temporal_train.epoch", {{"fold", fold},
                                           {"epoch", epoch},
                                           {"train_loss", report.history.back().train_loss},
                                           {"val_loss", val_loss},
                                           {"val_accuracy", val_acc}});

        if (std::isnan(best_loss) || val_loss < best_loss) {
            best_loss = val_loss;
            best_state = snapshot_state(*model.net());
            report.best_epoch = epoch;
            report.val_accuracy = val_acc;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= config.early_stop_patience) break;
            if (config.lr_schedule && since_best % config.lr_plateau_epochs == 0) {
                lr *= 0.5;
                for (auto& group : optimizer.param_groups()) {
                    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
                }
            }
        }
    }

    restore_state(*model.net(), best_state);
    model.net()->eval();
    if (std::isnan(best_loss)) {
        const auto [loss0, acc0] = evaluate(model, val, weights);
        best_loss = loss0;
        report.val_accuracy = acc0;
    }
    report.best_val_loss = best_loss;

    FoldResult result{model.to_checkpoint(), std::move(report)};
    result.checkpoint.epochs_trained = result.report.best_epoch;
    result.checkpoint.best_val_loss = best_loss;
    result.checkpoint.provenance = result.report.to_json();
    return result;
}

std::vector<LabelledSequence> load_sequences(const frame::EmbeddingStore& store,
                                             const manifest::DatasetManifest& manifest) {
    std::vector<std::string> missing;
    for (const auto& r : manifest.records()) {
        if (!store.contains(r.video_id)) missing.push_back(r.video_id);
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
        throw MissingEmbeddings("no embeddings for " + std::to_string(missing.size()) + " video(s): " + list);
    }
    std::vector<LabelledSequence> out;
    out.reserve(manifest.size());
    for (const auto& r : manifest.records()) {
        auto seq = store.load(r.video_id);
        out.push_back({r.video_id, r.identity_id, seq.embeddings, r.class_id(manifest.class_scheme())});
    }
    return out;
}

std::vector<FoldResult> train_temporal_cv(const frame::EmbeddingStore& store, const manifest::DatasetManifest& manifest,
                                          const TemporalModelConfig& config) {
    config.validate();
    const auto train_part = manifest.partition(manifest::Split::train);
    if (manifest::num_classes(manifest.class_scheme()) != config.num_classes) {
        throw ConfigError("temporal num_classes does not match the manifest class scheme");
    }
    const auto sequences = load_sequences(store, train_part);
    const auto folds = manifest::kfold_identity_splits(train_part, config.folds, config.seed);

    std::vector<FoldResult> results;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<LabelledSequence> tr, va;
        for (const auto& s : sequences) {
            (folds[f].held_identities.count(s.identity_id) ? va : tr).push_back(s);
        }
        results.push_back(train_temporal_fold(tr, va, config, static_cast<int>(f)));
        results.back().checkpoint.train_manifest_hash = train_part.hash();
    }
    return results;
}

nlohmann::json aggregate_fold_reports(const std::vector<FoldReport>& reports) {
    std::vector<double> losses, accs, epochs;
    for (const auto& r : reports) {
        losses.push_back(r.best_val_loss);
        accs.push_back(r.val_accuracy);
        epochs.push_back(r.best_epoch);
    }
    return {{"folds", reports.size()},
            {"std_basis", "population standard deviation over fold models"},
            {"val_loss", {{"mean", mean_of(losses)}, {"std", std_of(losses)}}},
            {"val_accuracy", {{"mean", mean_of(accs)}, {"std", std_of(accs)}}},
            {"best_epoch", {{"mean", mean_of(epochs)}, {"std", std_of(epochs)}}}};
}

std::vector<double> predict_video_temporal(TemporalModel& model, const torch::Tensor& embeddings) {
    if (!embeddings.defined() || embeddings.dim() != 2 || embeddings.size(0) < 1) {
        throw PreconditionError("predict_video_temporal needs a non-empty T x D sequence");
    }
    if (embeddings.size(1) != model.input_dim()) {
        throw PreconditionError("embedding dimension " + std::to_string(embeddings.size(1)) + " does not match model " +
                                std::to_string(model.input_dim()));
    }
    model.net()->eval();
    torch::NoGradGuard guard;
    const auto x = standardize_length(embeddings.to(torch::kFloat32), model.config().target_length, Mode::eval, 0);
    const auto p = torch::softmax(model.net()->forward(x.unsqueeze(0)).to(torch::kFloat64), 1).squeeze(0).contiguous();
    return std::vector<double>(p.data_ptr<double>(), p.data_ptr<double>() + p.numel());
}

std::vector<double> predict_video_temporal(TemporalModel& model, const frame::EmbeddingSequence& seq) {
    return predict_video_temporal(model, seq.embeddings);
}

}  // namespace decay_bench::temporal
