#include "decay_bench/finetune.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "decay_bench/errors.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/util.hpp"

namespace decay_bench::finetune {

namespace {

std::string fraction_tag(double f) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << f;
    return os.str();
}

// Evaluates a model on the evaluation manifest with binary labels.
eval::EvaluationReport evaluate_binary(frame::FrameModel& model, const extraction::FrameIndex& frames,
                                       const manifest::DatasetManifest& eval_manifest, const std::filesystem::path& dir) {
    const auto preds = eval::predict_frame_model(model, frames, eval_manifest);
    atomic_write_json(dir / "predictions.json", preds.to_json());
    return eval::evaluate_predictions(eval::to_binary(preds));
}

const BaseInit& pick_zero_shot(const FinetunePlan& plan, const std::string& name) {
    if (!name.empty()) {
        for (const auto& b : plan.inits) {
            if (b.name == name) return b;
        }
        throw ConfigError("zero-shot init '" + name + "' is not one of the plan's inits");
    }
    for (const auto& b : plan.inits) {
        if (b.kind == frame::InitKind::checkpoint) return b;
    }
    return plan.inits.front();
}

}  // namespace

std::string_view to_string(TrainableScope) { return "block4_and_head"; }

TrainableScope parse_trainable_scope(std::string_view s) {
    if (s == "block4_and_head") return TrainableScope::block4_and_head;
    throw ConfigError("unknown trainable_scope '" + std::string(s) + "'");
}

std::set<int> frozen_blocks(TrainableScope) { return {1, 2, 3}; }

nlohmann::json BaseInit::to_json() const {
    return {{"name", name},
            {"kind", frame::to_string(kind)},
            {"checkpoint", checkpoint.string()},
            {"pretrained_weights", pretrained_weights.string()}};
}

BaseInit BaseInit::from_json(const nlohmann::json& j) {
    BaseInit b;
    b.kind = frame::parse_init_kind(j.at("kind").get<std::string>());
    b.name = j.value("name", std::string(frame::to_string(b.kind)));
    b.checkpoint = j.value("checkpoint", "");
    b.pretrained_weights = j.value("pretrained_weights", "");
    return b;
}

void FinetunePlan::validate() const {
    if (inits.empty()) throw ConfigError("finetune plan needs at least one base init");
    std::set<std::string> names;
    for (const auto& b : inits) {
        if (b.name.empty()) throw ConfigError("finetune base init needs a name");
        if (!names.insert(b.name).second) throw ConfigError("duplicate finetune init name '" + b.name + "'");
        if (b.kind == frame::InitKind::checkpoint && b.checkpoint.empty()) {
            throw ConfigError("finetune init '" + b.name + "' needs a checkpoint path");
        }
    }
    if (!(learning_rate > 0.0)) throw ConfigError("finetune learning_rate must be > 0");
    if (identity_fractions.empty()) throw ConfigError("finetune needs at least one identity fraction");
    for (std::size_t i = 0; i < identity_fractions.size(); ++i) {
        const double f = identity_fractions[i];
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("identity fractions must lie in (0, 1]");
        if (i > 0 && !(f > identity_fractions[i - 1])) throw ConfigError("identity fractions must be sorted ascending");
    }
    if (seeds.empty()) throw ConfigError("finetune needs at least one seed");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("finetune val_fraction must lie in (0, 1)");
    recipe.validate();
    augmentation.validate();
}

nlohmann::json FinetunePlan::to_json() const {
    nlohmann::json i = nlohmann::json::array();
    for (const auto& b : inits) i.push_back(b.to_json());
    return {{"inits", i},
            {"trainable_scope", to_string(trainable_scope)},
            {"learning_rate", learning_rate},
            {"identity_fractions", identity_fractions},
            {"seeds", seeds},
            {"val_fraction", val_fraction},
            {"class_scheme", manifest::to_string(class_scheme)},
            {"recipe", recipe.to_json()},
            {"augmentation", augmentation.to_json()}};
}

FinetunePlan FinetunePlan::from_json(const nlohmann::json& j) {
    FinetunePlan p;
    if (j.contains("inits")) {
        for (const auto& b : j.at("inits")) p.inits.push_back(BaseInit::from_json(b));
    }
    p.trainable_scope = parse_trainable_scope(j.value("trainable_scope", "block4_and_head"));
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.identity_fractions = j.value("identity_fractions", p.identity_fractions);
    p.seeds = j.value("seeds", p.seeds);
    p.val_fraction = j.value("val_fraction", p.val_fraction);
    p.class_scheme = manifest::parse_class_scheme(j.value("class_scheme", "binary"));
    if (j.contains("recipe")) p.recipe = frame::FrameModelConfig::from_json(j.at("recipe"));
    if (j.contains("augmentation")) p.augmentation = frame::AugmentationPolicy::from_json(j.at("augmentation"));
    p.validate();
    return p;
}

frame::FrameModelConfig finetune_config(const FinetunePlan& plan, const BaseInit& base, std::uint64_t seed) {
    auto c = plan.recipe;
    c.init = base.kind;
    c.init_checkpoint = base.checkpoint;
    if (!base.pretrained_weights.empty()) c.pretrained_weights = base.pretrained_weights;
    c.frozen_blocks = frozen_blocks(plan.trainable_scope);
    c.learning_rate = plan.learning_rate;
    c.num_classes = manifest::num_classes(plan.class_scheme);
    c.seed = seed;
    return c;
}

frame::TrainResult finetune_frame_model(const BaseInit& base, const extraction::FrameIndex& frames,
                                        const manifest::DatasetManifest& subset, const FinetunePlan& plan,
                                        std::uint64_t seed, const manifest::DatasetManifest* eval_manifest) {
    if (eval_manifest) manifest::require_identity_disjoint(subset, *eval_manifest, "finetune subset vs evaluation");
    const auto split = manifest::split_identities(subset, plan.val_fraction, derive_seed(seed, {"finetune_val"}));
    const auto train = frames.restrict_to(split.train_identities);
    const auto val = frames.restrict_to(split.held_identities);
    auto aug = plan.augmentation;
    aug.seed = derive_seed(seed, {"finetune_augment"});
    frame::TrainOptions opts;
    opts.scheme = plan.class_scheme;
    return frame::train_frame_model(train, val, finetune_config(plan, base, seed), aug, opts);
}

std::string CellResult::cell_name() const {
    return init + "_f" + fraction_tag(fraction) + "_s" + std::to_string(seed);
}

nlohmann::json CellResult::to_json() const {
    return {{"cell", cell_name()},
            {"init", init},
            {"fraction", fraction},
            {"seed", seed},
            {"status", ok ? "ok" : "failed"},
            {"error", ok ? nlohmann::json() : nlohmann::json{{"kind", error_kind}, {"message", error_message}}},
            {"identity_count", identities.size()},
            {"identities", identities},
            {"checkpoint", checkpoint_path.string()},
            {"checkpoint_hash", checkpoint_hash},
            {"best_epoch", best_epoch},
            {"report", report ? report->to_json() : nlohmann::json()}};
}

nlohmann::json SweepResult::to_json() const {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& cell : cells) c.push_back(cell.to_json());
    return {{"target_identities", target_identities},
            {"zero_shot", zero_shot.to_json()},
            {"cells", c},
            {"failed_cells", failed()}};
}

std::size_t SweepResult::failed() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return !c.ok; }));
}

SweepResult run_decay_sweep(const FinetunePlan& plan, const manifest::DatasetManifest& target,
                            const extraction::FrameIndex& frames, const manifest::DatasetManifest& eval_manifest,
                            const SweepOptions& options) {
    plan.validate();
    const auto pool = target.partition(manifest::Split::train);
    manifest::require_identity_disjoint(pool, eval_manifest, "finetune pool vs evaluation");
    std::filesystem::create_directories(options.output_dir);

    // Provenance names the base by content so it survives moving the run.
    const auto base_identity = [](const BaseInit& b) {
        nlohmann::json j{{"name", b.name}, {"kind", frame::to_string(b.kind)}};
        for (const auto& [key, path] : {std::pair{"checkpoint_sha256", b.checkpoint},
                                        std::pair{"pretrained_weights_sha256", b.pretrained_weights}}) {
            if (!path.empty() && std::filesystem::is_regular_file(path)) j[key] = sha256_file(path);
        }
        return j;
    };

    SweepResult result;
    result.target_identities = pool.identities().size();

    // Zero-shot: the base as built, no training.
    {
        const auto& base = pick_zero_shot(plan, options.zero_shot_init);
        auto& z = result.zero_shot;
        z.init = base.name;
        z.fraction = 0.0;
        const auto dir = options.output_dir / "zero_shot";
        std::filesystem::create_directories(dir);
        try {
            auto model = frame::build_frame_model(finetune_config(plan, base, plan.seeds.front()));
            z.report = evaluate_binary(model, frames, eval_manifest, dir);
            z.report->provenance["base"] = base_identity(base);
            z.report->provenance["warnings"] = model.warnings();
            z.ok = true;
        } catch (const Error& e) {
            z.error_kind = e.kind();
            z.error_message = e.what();
        }
        atomic_write_json(dir / "cell.json", z.to_json());
        log::info("finetune.zero_shot", {{"init", base.name}, {"ok", z.ok}});
    }

    for (const auto& base : plan.inits) {
        for (double f : plan.identity_fractions) {
            for (auto seed : plan.seeds) {
                CellResult cell;
                cell.init = base.name;
                cell.fraction = f;
                cell.seed = seed;
                const auto dir = options.output_dir / "cells" / cell.cell_name();
                std::filesystem::create_directories(dir);
                try {
                    // Same subset for every init at a given (fraction, seed).
                    const auto subset = manifest::subset_by_identity_fraction(pool, f, derive_seed(seed, {"subset"}));
                    const auto ids = subset.identities();
                    cell.identities.assign(ids.begin(), ids.end());
                    atomic_write_json(dir / "identities.json", cell.identities);
                    auto trained = finetune_frame_model(base, frames, subset, plan, seed, &eval_manifest);
                    cell.checkpoint_path = std::filesystem::path("cells") / cell.cell_name() / "model.ckpt";
                    trained.checkpoint.provenance["finetune"] = {{"init", base_identity(base)},
                                                                 {"fraction", f},
                                                                 {"seed", seed},
                                                                 {"subset_manifest_hash", subset.hash()}};
                    trained.checkpoint.save(dir / "model.ckpt");
                    cell.checkpoint_hash = trained.checkpoint.content_hash();
                    cell.best_epoch = trained.best_epoch;
                    auto model = frame::FrameModel::from_checkpoint(trained.checkpoint);
                    cell.report = evaluate_binary(model, frames, eval_manifest, dir);
                    cell.report->provenance["checkpoint_hash"] = cell.checkpoint_hash;
                    cell.ok = true;
                } catch (const Error& e) {
                    cell.error_kind = e.kind();
                    cell.error_message = e.what();
                    log::error("finetune.cell_failed",
                               {{"cell", cell.cell_name()}, {"error", e.kind()}, {"message", e.what()}});
                }
                atomic_write_json(dir / "cell.json", cell.to_json());
                log::info("finetune.cell", {{"cell", cell.cell_name()},
                                            {"ok", cell.ok},
                                            {"identities", cell.identities.size()}});
                result.cells.push_back(std::move(cell));
            }
        }
    }
    atomic_write_json(options.output_dir / "sweep_summary.json", result.to_json());
    return result;
}

}  // namespace decay_bench::finetune
