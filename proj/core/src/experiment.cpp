#include "decay_bench/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "decay_bench/baseline.hpp"
#include "decay_bench/embedding_store.hpp"
#include "decay_bench/errors.hpp"
#include "decay_bench/evaluation.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/util.hpp"

namespace decay_bench::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFrameRef = "@frame";

fs::path resolve(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute()) return p;
    return (base / p).lexically_normal();
}

// Keeps explicitly given keys of a section and fills in the rest.
json section(const json& j, const char* name) { return j.contains(name) ? j.at(name) : json::object(); }

std::map<std::string, extraction::FrameIndex> group_by_video(const extraction::FrameIndex& index) {
    std::map<std::string, extraction::FrameIndex> out;
    for (const auto& e : index.entries) {
        auto& sub = out[e.video_id];
        sub.config_fingerprint = index.config_fingerprint;
        sub.entries.push_back(e);
    }
    return out;
}

manifest::DatasetManifest keep_videos(const manifest::DatasetManifest& m, const std::set<std::string>& ids) {
    std::vector<manifest::VideoRecord> kept;
    for (const auto& r : m.records()) {
        if (ids.count(r.video_id)) kept.push_back(r);
    }
    return manifest::DatasetManifest(std::move(kept), m.version(), m.class_scheme());
}

std::map<std::string, std::string> hash_outputs(const fs::path& dir) {
    std::map<std::string, std::string> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), dir).generic_string();
        if (rel == "stage.json") continue;
        out[rel] = sha256_file(e.path());
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

std::string mean_pm(const json& ms) {
    if (ms.is_null() || ms.at("mean").is_null()) return "n/a";
    const auto n = ms.contains("values") ? ms.at("values").size() : 1;
    if (n < 2) return fmt(ms.at("mean").get<double>());
    return fmt(ms.at("mean").get<double>()) + " ± " + fmt(ms.at("std").get<double>());
}

double class_metric(const json& report, const std::string& cls, const std::string& metric) {
    for (const auto& c : report.at("confusion").at("per_class")) {
        if (c.at("name") == cls) return c.at(metric).get<double>();
    }
    return std::numeric_limits<double>::quiet_NaN();
}

json mean_std_json(const std::vector<double>& v) {
    if (v.empty()) return nullptr;
    double m = 0;
    for (double x : v) m += x / static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m) / static_cast<double>(v.size());
    return {{"mean", m}, {"std", std::sqrt(s)}, {"values", v}};
}

std::vector<eval::CurvePoint> curve_from_json(const json& report) {
    std::vector<eval::CurvePoint> pts;
    for (const auto& p : report.at("pr_curve").at("points")) {
        pts.push_back({p[0].is_null() ? 0.0 : p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    }
    return pts;
}

}  // namespace

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::extract: return "extract";
        case Stage::train_frame: return "train-frame";
        case Stage::embed: return "embed";
        case Stage::train_temporal: return "train-temporal";
        case Stage::finetune: return "finetune";
        case Stage::evaluate: return "evaluate";
        case Stage::report: return "report";
    }
    return "?";
}

Stage parse_stage(std::string_view s) {
    std::string norm(s);
    std::replace(norm.begin(), norm.end(), '_', '-');
    for (auto st : all_stages()) {
        if (to_string(st) == norm) return st;
    }
    throw ConfigError("unknown stage '" + std::string(s) + "'");
}

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages{Stage::extract,        Stage::train_frame, Stage::embed,
                                           Stage::train_temporal, Stage::finetune,    Stage::evaluate,
                                           Stage::report};
    return stages;
}

ExperimentConfig ExperimentConfig::load(const fs::path& file, std::optional<std::uint64_t> seed,
                                        std::optional<int> workers) {
    if (!fs::exists(file)) throw ConfigError("config file not found: " + file.string());
    json j;
    try {
        j = read_json(file);
    } catch (const ParseError& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (seed) j["seed"] = *seed;
    if (workers) j["workers"] = *workers;
    auto c = from_json(j, fs::absolute(file).parent_path());
    if (const char* env = std::getenv("DECAY_BENCH_CACHE"); env && *env) c.cache_root = fs::absolute(env);
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known{"seed",      "output_dir", "cache_root",    "workers",      "class_scheme",
                                             "datasets",  "train_dataset", "eval_datasets", "extraction", "frame",
                                             "frame_val_fraction", "augmentation", "embedding", "temporal",
                                             "finetune",  "report"};
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
    ExperimentConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.output_dir = resolve(base, j.value("output_dir", c.output_dir.string()));
        c.cache_root = resolve(base, j.value("cache_root", c.cache_root.string()));
        c.workers = j.value("workers", c.workers);
        c.class_scheme = manifest::parse_class_scheme(j.value("class_scheme", "binary"));
        if (!j.contains("datasets") || !j.at("datasets").is_object()) {
            throw ConfigError("config needs a 'datasets' object mapping names to manifest paths");
        }
        for (const auto& [name, v] : j.at("datasets").items()) {
            const auto path = v.is_string() ? v.get<std::string>() : v.at("manifest").get<std::string>();
            c.datasets.push_back({name, resolve(base, path)});
        }
        c.train_dataset = j.value("train_dataset", c.datasets.empty() ? "" : c.datasets.front().name);
        c.eval_datasets = j.value("eval_datasets", std::vector<std::string>{});

        auto ex = section(j, "extraction");
        c.extraction = extraction::ExtractionConfig::from_json(ex);

        auto fr = section(j, "frame");
        fr["seed"] = c.seed;
        fr["num_classes"] = manifest::num_classes(c.class_scheme);
        c.frame = frame::FrameModelConfig::from_json(fr);
        c.frame.init_checkpoint = resolve(base, c.frame.init_checkpoint);
        c.frame.pretrained_weights = resolve(base, c.frame.pretrained_weights);
        c.frame_val_fraction = j.value("frame_val_fraction", c.frame_val_fraction);

        auto au = section(j, "augmentation");
        au["seed"] = c.seed;
        c.augmentation = frame::AugmentationPolicy::from_json(au);

        const auto em = section(j, "embedding");
        c.embedding.extractor = em.value("extractor", c.embedding.extractor);
        c.embedding.baseline_asset = resolve(base, em.value("baseline_asset", ""));
        c.embedding.baseline_input_size = em.value("baseline_input_size", c.embedding.baseline_input_size);

        auto te = section(j, "temporal");
        te["seed"] = c.seed;
        te["num_classes"] = manifest::num_classes(c.class_scheme);
        c.temporal = temporal::TemporalModelConfig::from_json(te);

        auto ft = section(j, "finetune");
        c.finetune.enabled = ft.value("enabled", c.finetune.enabled);
        c.finetune.zero_shot_init = ft.value("zero_shot_init", "");
        std::string default_target;
        for (const auto& d : c.datasets) {
            if (d.name != c.train_dataset) {
                default_target = d.name;
                break;
            }
        }
        c.finetune.target_dataset = ft.value("target_dataset", default_target);
        json plan = ft;
        for (const char* k : {"enabled", "zero_shot_init", "target_dataset"}) plan.erase(k);
        if (!plan.contains("inits")) {
            plan["inits"] = json::array({{{"name", "prior"}, {"kind", "checkpoint"}, {"checkpoint", kFrameRef}},
                                         {{"name", "imagenet"}, {"kind", "imagenet_pretrained"}}});
        }
        for (auto& b : plan["inits"]) {
            const auto cp = b.value("checkpoint", "");
            if (!cp.empty() && cp != kFrameRef) b["checkpoint"] = resolve(base, cp).string();
            const auto pw = b.value("pretrained_weights", "");
            if (!pw.empty()) b["pretrained_weights"] = resolve(base, pw).string();
        }
        // Recipe and augmentation default to the frame-training ones.
        json recipe = c.frame.to_json();
        if (plan.contains("recipe")) recipe.update(plan.at("recipe"));
        plan["recipe"] = recipe;
        json aug = c.augmentation.to_json();
        if (plan.contains("augmentation")) aug.update(plan.at("augmentation"));
        plan["augmentation"] = aug;
        plan["class_scheme"] = plan.value("class_scheme", "binary");
        c.finetune.plan = finetune::FinetunePlan::from_json(plan);

        const auto rp = section(j, "report");
        c.report.pca_max_points = rp.value("pca_max_points", c.report.pca_max_points);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    return c;
}

void ExperimentConfig::validate() const {
    if (datasets.empty()) throw ConfigError("config lists no datasets");
    std::set<std::string> names;
    for (const auto& d : datasets) {
        if (!names.insert(d.name).second) throw ConfigError("duplicate dataset name '" + d.name + "'");
        if (!fs::exists(d.manifest)) {
            throw ConfigError("manifest of dataset '" + d.name + "' not found: " + d.manifest.string());
        }
    }
    if (!names.count(train_dataset)) throw ConfigError("train_dataset '" + train_dataset + "' is not a dataset");
    for (const auto& e : eval_datasets) {
        if (!names.count(e)) throw ConfigError("eval dataset '" + e + "' is not a dataset");
    }
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (!(frame_val_fraction > 0.0 && frame_val_fraction < 1.0)) {
        throw ConfigError("frame_val_fraction must lie in (0, 1)");
    }
    if (frame.init == frame::InitKind::checkpoint && !fs::exists(frame.init_checkpoint)) {
        throw ConfigError("frame init checkpoint not found: " + frame.init_checkpoint.string());
    }
    if (frame.init == frame::InitKind::imagenet_pretrained) {
        const auto w = frame.pretrained_weights.empty() ? frame::default_imagenet_weights_path() : frame.pretrained_weights;
        if (!fs::exists(w)) throw AssetMissing("ImageNet ResNet-50 weights not found: " + w.string());
    }
    if (embedding.extractor != "frame_model" && embedding.extractor != "baseline") {
        throw ConfigError("embedding.extractor must be 'frame_model' or 'baseline'");
    }
    if (embedding.extractor == "baseline") {
        const auto a = embedding.baseline_asset.empty() ? frame::default_baseline_asset() : embedding.baseline_asset;
        if (!fs::exists(a)) throw AssetMissing("baseline embedding asset not found: " + a.string());
    }
    if (finetune.enabled) {
        if (!names.count(finetune.target_dataset)) {
            throw ConfigError("finetune.target_dataset '" + finetune.target_dataset + "' is not a dataset");
        }
        for (const auto& b : finetune.plan.inits) {
            if (b.kind == frame::InitKind::checkpoint && b.checkpoint != kFrameRef && !fs::exists(b.checkpoint)) {
                throw ConfigError("finetune init checkpoint not found: " + b.checkpoint.string());
            }
            if (b.kind == frame::InitKind::imagenet_pretrained) {
                const auto w = b.pretrained_weights.empty() ? frame::default_imagenet_weights_path() : b.pretrained_weights;
                if (!fs::exists(w)) throw AssetMissing("ImageNet ResNet-50 weights not found: " + w.string());
            }
        }
    }
    if (report.pca_max_points < 3) throw ConfigError("report.pca_max_points must be >= 3");
}

json ExperimentConfig::resolved_json() const {
    json ds = json::object();
    for (const auto& d : datasets) ds[d.name] = {{"manifest", d.manifest.string()}};
    auto ft = finetune.plan.to_json();
    ft["enabled"] = finetune.enabled;
    ft["target_dataset"] = finetune.target_dataset;
    ft["zero_shot_init"] = finetune.zero_shot_init;
    return {{"seed", seed},
            {"output_dir", output_dir.string()},
            {"cache_root", cache_root.string()},
            {"class_scheme", manifest::to_string(class_scheme)},
            {"datasets", ds},
            {"train_dataset", train_dataset},
            {"eval_datasets", evaluation_datasets()},
            {"extraction", extraction.to_json()},
            {"frame", frame.to_json()},
            {"frame_val_fraction", frame_val_fraction},
            {"augmentation", augmentation.to_json()},
            {"embedding",
             {{"extractor", embedding.extractor},
              {"baseline_asset", embedding.baseline_asset.string()},
              {"baseline_input_size", embedding.baseline_input_size}}},
            {"temporal", temporal.to_json()},
            {"finetune", ft},
            {"report", {{"pca_max_points", report.pca_max_points}}}};
}

std::string ExperimentConfig::hash() const {
    // Content, not location: manifests enter by their bytes, output and
    // cache locations are left out.
    auto basis = resolved_json();
    basis.erase("output_dir");
    basis.erase("cache_root");
    for (auto& [name, d] : basis["datasets"].items()) {
        d = {{"manifest_sha256", sha256_file(d.at("manifest").get<std::string>())}};
    }
    return short_hash(json_hash(basis));
}

fs::path ExperimentConfig::run_dir() const { return output_dir / hash(); }

const DatasetRef& ExperimentConfig::dataset(const std::string& name) const {
    for (const auto& d : datasets) {
        if (d.name == name) return d;
    }
    throw ConfigError("unknown dataset '" + name + "'");
}

std::vector<std::string> ExperimentConfig::evaluation_datasets() const {
    if (!eval_datasets.empty()) return eval_datasets;
    std::vector<std::string> all;
    for (const auto& d : datasets) all.push_back(d.name);
    return all;
}

json StageRecord::to_json() const {
    return {{"format", "decay_bench.stage.v1"},
            {"stage", experiment::to_string(stage)},
            {"fingerprint", fingerprint},
            {"config_hash", config_hash},
            {"upstream", upstream},
            {"outputs", outputs},
            {"details", details}};
}

StageRecord StageRecord::from_json(const json& j) {
    StageRecord r;
    r.stage = parse_stage(j.at("stage").get<std::string>());
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.upstream = j.at("upstream").get<std::map<std::string, std::string>>();
    r.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    r.details = j.value("details", json::object());
    return r;
}

Pipeline::Pipeline(ExperimentConfig config) : config_(std::move(config)) {}

fs::path Pipeline::stage_dir(Stage s) const { return config_.run_dir() / std::string(to_string(s)); }

std::optional<StageRecord> Pipeline::record(Stage s) const {
    const auto p = stage_dir(s) / "stage.json";
    if (!fs::exists(p)) return std::nullopt;
    try {
        return StageRecord::from_json(read_json(p));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::vector<Stage> Pipeline::upstream(Stage s) const {
    switch (s) {
        case Stage::extract: return {};
        case Stage::train_frame: return {Stage::extract};
        case Stage::embed:
            if (config_.embedding.extractor == "baseline") return {Stage::extract};
            return {Stage::extract, Stage::train_frame};
        case Stage::train_temporal: return {Stage::embed};
        case Stage::finetune: {
            std::vector<Stage> up{Stage::extract};
            for (const auto& b : config_.finetune.plan.inits) {
                if (b.checkpoint == kFrameRef) {
                    up.push_back(Stage::train_frame);
                    break;
                }
            }
            return up;
        }
        case Stage::evaluate: return {Stage::extract, Stage::train_frame, Stage::embed, Stage::train_temporal};
        case Stage::report: {
            std::vector<Stage> up{Stage::embed, Stage::evaluate};
            if (config_.finetune.enabled) up.push_back(Stage::finetune);
            return up;
        }
    }
    return {};
}

std::string Pipeline::fingerprint(Stage s, const std::map<std::string, std::string>& up) const {
    return short_hash(json_hash({{"stage", to_string(s)}, {"config_hash", config_.hash()}, {"upstream", up}}));
}

StageRecord Pipeline::require(Stage s) const {
    auto r = record(s);
    if (!r) {
        throw MissingUpstream("stage '" + std::string(to_string(s)) + "' has no completed output under " +
                              stage_dir(s).string() + "; run it first");
    }
    return *r;
}

StageOutcome Pipeline::run(Stage s) {
    if (s == Stage::finetune && !config_.finetune.enabled) {
        throw ConfigError("finetune is disabled in this config");
    }
    std::map<std::string, std::string> up;
    for (auto u : upstream(s)) {
        const auto r = require(u);
        // An upstream record is only usable if it is current for this config.
        std::map<std::string, std::string> uu;
        for (auto uu_stage : upstream(u)) {
            const auto urec = record(uu_stage);
            uu[std::string(to_string(uu_stage))] = urec ? urec->fingerprint : "";
        }
        if (r.fingerprint != fingerprint(u, uu)) {
            throw MissingUpstream("stage '" + std::string(to_string(u)) + "' output is stale (fingerprint " +
                                  r.fingerprint + "); re-run it first");
        }
        up[std::string(to_string(u))] = r.fingerprint;
    }
    const auto fp = fingerprint(s, up);
    const auto dir = stage_dir(s);
    if (auto existing = record(s); existing && existing->fingerprint == fp && hash_outputs(dir) == existing->outputs) {
        log::info("stage.cache_hit", {{"stage", to_string(s)}, {"fingerprint", fp}});
        return {s, true, *existing};
    }

    const auto t0 = std::chrono::steady_clock::now();
    log::info("stage.start", {{"stage", to_string(s)}, {"fingerprint", fp}, {"run_dir", config_.run_dir().string()}});
    fs::remove_all(dir);
    fs::create_directories(dir);
    atomic_write_json(config_.run_dir() / "config.resolved.json", config_.resolved_json());

    json details;
    switch (s) {
        case Stage::extract: details = do_extract(dir); break;
        case Stage::train_frame: details = do_train_frame(dir); break;
        case Stage::embed: details = do_embed(dir); break;
        case Stage::train_temporal: details = do_train_temporal(dir); break;
        case Stage::finetune: details = do_finetune(dir); break;
        case Stage::evaluate: details = do_evaluate(dir); break;
        case Stage::report: details = do_report(dir); break;
    }

    StageRecord rec;
    rec.stage = s;
    rec.fingerprint = fp;
    rec.config_hash = config_.hash();
    rec.upstream = up;
    rec.outputs = hash_outputs(dir);
    rec.details = details;
    atomic_write_json(dir / "stage.json", rec.to_json());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log::info("stage.done", {{"stage", to_string(s)}, {"fingerprint", fp}, {"seconds", secs}});
    return {s, false, rec};
}

std::vector<StageOutcome> Pipeline::run_all() {
    std::vector<StageOutcome> out;
    for (auto s : all_stages()) {
        if (s == Stage::finetune && !config_.finetune.enabled) continue;
        out.push_back(run(s));
    }
    return out;
}

manifest::DatasetManifest Pipeline::load_dataset(const std::string& name) const {
    return manifest::load_manifest(config_.dataset(name).manifest, config_.class_scheme);
}

extraction::FrameIndex Pipeline::load_index(const std::string& name) const {
    const auto p = stage_dir(Stage::extract) / name / "index.json";
    if (!fs::exists(p)) throw MissingUpstream("no frame index for dataset '" + name + "'");
    return extraction::FrameIndex::from_json(read_json(p));
}

json Pipeline::do_extract(const fs::path& dir) {
    json details = json::object();
    extraction::BuildOptions opts;
    opts.cache_root = config_.cache_root / "frames";
    opts.workers = config_.workers;
    for (const auto& d : config_.datasets) {
        const auto m = load_dataset(d.name);
        const auto idx = extraction::build_frame_dataset(m, config_.extraction, opts);
        fs::create_directories(dir / d.name);
        atomic_write_json(dir / d.name / "index.json", idx.to_json());
        atomic_write_json(dir / d.name / "skips.json", idx.skip_report());
        atomic_write_json(dir / d.name / "manifest.json", m.to_json());
        details[d.name] = {{"manifest_hash", m.hash()},
                           {"version", m.version()},
                           {"extraction_fingerprint", idx.config_fingerprint},
                           {"videos", m.size()},
                           {"frames", idx.entries.size()},
                           {"skipped", idx.skipped.size()}};
    }
    return details;
}

json Pipeline::do_train_frame(const fs::path& dir) {
    const auto m = load_dataset(config_.train_dataset);
    const auto train_part = m.partition(manifest::Split::train);
    const auto split = manifest::split_identities(train_part, config_.frame_val_fraction,
                                                  derive_seed(config_.seed, {"frame_val_split"}));
    const auto idx = load_index(config_.train_dataset);
    const auto tr = idx.restrict_to(split.train_identities);
    const auto va = idx.restrict_to(split.held_identities);
    frame::TrainOptions opts;
    opts.scheme = config_.class_scheme;
    auto res = frame::train_frame_model(tr, va, config_.frame, config_.augmentation, opts);
    res.checkpoint.provenance["dataset"] = config_.train_dataset;
    res.checkpoint.provenance["dataset_version"] = m.version();
    res.checkpoint.provenance["manifest_hash"] = m.hash();
    res.checkpoint.provenance["extraction_fingerprint"] = idx.config_fingerprint;
    res.checkpoint.provenance["val_identities"] =
        std::vector<std::string>(split.held_identities.begin(), split.held_identities.end());
    res.checkpoint.save(dir / "model.ckpt");
    json hist = json::array();
    for (const auto& h : res.history) {
        hist.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_loss", h.val_loss},
                        {"val_accuracy", h.val_accuracy}});
    }
    atomic_write_json(dir / "history.json", {{"best_epoch", res.best_epoch}, {"history", hist},
                                             {"warnings", res.warnings}});
    return {{"checkpoint_hash", res.checkpoint.content_hash()},
            {"best_epoch", res.best_epoch},
            {"train_manifest_hash", res.checkpoint.train_manifest_hash},
            {"manifest_hash", m.hash()}};
}

json Pipeline::do_embed(const fs::path& dir) {
    std::optional<frame::FrameModel> model;
    std::optional<frame::BaselineExtractor> baseline;
    std::string source;
    if (config_.embedding.extractor == "baseline") {
        const auto asset = config_.embedding.baseline_asset.empty() ? frame::default_baseline_asset()
                                                                     : config_.embedding.baseline_asset;
        baseline = frame::BaselineExtractor::load(asset, config_.embedding.baseline_input_size);
        source = "baseline:" + baseline->fingerprint();
    } else {
        const auto ckpt = ModelCheckpoint::load(stage_dir(Stage::train_frame) / "model.ckpt");
        model = frame::FrameModel::from_checkpoint(ckpt);
        source = "frame_model:" + ckpt.content_hash();
    }
    const auto extraction_fp = config_.extraction.fingerprint();
    const auto fp = short_hash(json_hash({{"source", source}, {"extraction", extraction_fp}}));
    frame::EmbeddingStore store(config_.cache_root, fp);

    json datasets = json::object();
    std::size_t computed = 0, reused = 0;
    for (const auto& d : config_.datasets) {
        const auto m = load_dataset(d.name);
        const auto grouped = group_by_video(load_index(d.name));
        json files = json::object();
        for (const auto& [vid, sub] : grouped) {
            if (!store.contains(vid)) {
                const auto frames = frame::frames_for_video(sub, vid);
                auto seq = model ? frame::extract_embeddings(*model, frames) : baseline->embed(frames);
                const auto* r = m.find(vid);
                if (!r) throw IntegrityError("frame index video '" + vid + "' missing from manifest " + d.name);
                seq.label = r->class_id(config_.class_scheme);
                seq.identity_id = r->identity_id;
                seq.binary_label = r->label;
                seq.technique = r->technique;
                store.save(seq);
                ++computed;
            } else {
                ++reused;
            }
            files[vid] = sha256_file(store.matrix_path(vid));
        }
        datasets[d.name] = {{"videos", grouped.size()}, {"files", files}};
    }
    atomic_write_json(dir / "embeddings.json",
                      {{"store_fingerprint", fp}, {"source", source}, {"store_dir", store.dir().string()},
                       {"datasets", datasets}});
    log::info("embed.summary", {{"computed", computed}, {"reused", reused}, {"store", store.dir().string()}});
    return {{"store_fingerprint", fp}, {"source", source}};
}

json Pipeline::do_train_temporal(const fs::path& dir) {
    const auto emb = read_json(stage_dir(Stage::embed) / "embeddings.json");
    frame::EmbeddingStore store(config_.cache_root, emb.at("store_fingerprint").get<std::string>());
    const auto m = load_dataset(config_.train_dataset);
    std::set<std::string> have;
    for (const auto& [vid, h] : emb.at("datasets").at(config_.train_dataset).at("files").items()) have.insert(vid);
    const auto usable = keep_videos(m, have);
    if (usable.size() < m.size()) {
        log::warn("train_temporal.videos_without_frames", {{"dropped", m.size() - usable.size()}});
    }
    const auto folds = temporal::train_temporal_cv(store, usable, config_.temporal);
    std::vector<temporal::FoldReport> reports;
    json hashes = json::array();
    for (const auto& f : folds) {
        auto ck = f.checkpoint;
        ck.provenance["embedding_store"] = emb.at("store_fingerprint");
        ck.provenance["manifest_hash"] = m.hash();
        const auto name = "fold_" + std::to_string(f.report.fold);
        ck.save(dir / (name + ".ckpt"));
        atomic_write_json(dir / (name + ".json"), f.report.to_json());
        reports.push_back(f.report);
        hashes.push_back(ck.content_hash());
    }
    atomic_write_json(dir / "aggregate.json", temporal::aggregate_fold_reports(reports));
    return {{"folds", folds.size()}, {"checkpoint_hashes", hashes}};
}

json Pipeline::do_finetune(const fs::path& dir) {
    auto plan = config_.finetune.plan;
    for (auto& b : plan.inits) {
        if (b.checkpoint == kFrameRef) b.checkpoint = stage_dir(Stage::train_frame) / "model.ckpt";
    }
    const auto target = load_dataset(config_.finetune.target_dataset);
    const auto frames = load_index(config_.finetune.target_dataset);
    finetune::SweepOptions opts;
    opts.output_dir = dir;
    opts.zero_shot_init = config_.finetune.zero_shot_init;
    const auto res = finetune::run_decay_sweep(plan, target, frames, target.partition(manifest::Split::test), opts);
    return {{"cells", res.cells.size()}, {"failed", res.failed()}, {"target_identities", res.target_identities}};
}

json Pipeline::do_evaluate(const fs::path& dir) {
    const auto train_version = load_dataset(config_.train_dataset).version();
    const auto emb = read_json(stage_dir(Stage::embed) / "embeddings.json");
    frame::EmbeddingStore store(config_.cache_root, emb.at("store_fingerprint").get<std::string>());

    auto frame_model = frame::FrameModel::from_checkpoint(ModelCheckpoint::load(stage_dir(Stage::train_frame) / "model.ckpt"));
    std::vector<temporal::TemporalModel> folds;
    for (int k = 0; k < config_.temporal.folds; ++k) {
        const auto p = stage_dir(Stage::train_temporal) / ("fold_" + std::to_string(k) + ".ckpt");
        folds.push_back(temporal::TemporalModel::from_checkpoint(ModelCheckpoint::load(p)));
    }

    json out = json::object();
    for (const auto& name : config_.evaluation_datasets()) {
        const auto test = load_dataset(name).partition(manifest::Split::test);
        const auto idx = load_index(name);
        fs::create_directories(dir / name);

        const auto fp = eval::predict_frame_model(frame_model, idx, test);
        atomic_write_json(dir / name / "frame_predictions.json", fp.to_json());
        auto frame_agg = eval::cross_evaluate({fp}, test.version(), {train_version});

        std::vector<eval::PredictionSet> tps;
        for (std::size_t k = 0; k < folds.size(); ++k) {
            tps.push_back(eval::predict_temporal_model(folds[k], store, test));
            atomic_write_json(dir / name / ("temporal_predictions_fold_" + std::to_string(k) + ".json"),
                              tps.back().to_json());
        }
        auto temporal_agg = eval::cross_evaluate(tps, test.version(), {train_version});

        json entry{{"version", test.version()},
                   {"same_version", test.version() == train_version},
                   {"test_videos", test.size()},
                   {"frame_model", frame_agg.to_json()},
                   {"temporal", temporal_agg.to_json()}};
        if (config_.class_scheme == manifest::ClassScheme::multiclass) {
            std::vector<eval::EvaluationReport> native;
            for (const auto& s : tps) native.push_back(eval::evaluate_predictions(s));
            entry["temporal_multiclass"] = eval::aggregate_reports(native, "cross-validation fold models").to_json();
            entry["frame_model_multiclass"] =
                eval::aggregate_reports({eval::evaluate_predictions(fp)}, "single model").to_json();
        }
        out[name] = entry;
    }
    atomic_write_json(dir / "evaluation.json", {{"train_dataset", config_.train_dataset},
                                                {"train_version", train_version},
                                                {"datasets", out}});
    return {{"datasets", config_.evaluation_datasets()}};
}

json Pipeline::do_report(const fs::path& dir) {
    const auto ev = read_json(stage_dir(Stage::evaluate) / "evaluation.json");
    const auto emb = read_json(stage_dir(Stage::embed) / "embeddings.json");
    json report{{"config_hash", config_.hash()}, {"train_dataset", ev.at("train_dataset")},
                {"train_version", ev.at("train_version")}};

    json prov = {{"config_hash", config_.hash()}, {"stages", json::object()}};
    for (auto s : all_stages()) {
        if (s == Stage::report) continue;
        if (const auto r = record(s)) prov["stages"][std::string(to_string(s))] = {{"fingerprint", r->fingerprint},
                                                                                    {"details", r->details}};
    }
    report["provenance"] = prov;

    std::ostringstream md;
    md << "# Experiment report\n\nConfig hash `" << config_.hash() << "`. Trained on `"
       << ev.at("train_version").get<std::string>() << "`.\n\n";
    md << "Binary real/fake evaluation on each dataset's test identities. Frame model = ResNet-50 with mean-softmax "
          "aggregation; temporal = "
       << (config_.embedding.extractor == "baseline" ? "identity-embedder" : "ResNet-50")
       << " embeddings + GRU, mean ± std over the cross-validation fold models.\n\n";
    md << "| Model | Train/Test | Accuracy (%) | AUROC (%) | real P | real R | real F1 | fake P | fake R | fake F1 |\n";
    md << "|---|---|---|---|---|---|---|---|---|---|\n";
    json scalars = json::object();
    for (const auto& [name, entry] : ev.at("datasets").items()) {
        for (const char* model : {"frame_model", "temporal"}) {
            const auto& s = entry.at(model).at("scalars");
            scalars[model][name] = s;
            md << "| " << model << " | " << ev.at("train_version").get<std::string>() << " / "
               << entry.at("version").get<std::string>() << " | " << mean_pm(s.value("accuracy", json())) << " | "
               << mean_pm(s.value("auroc", json()));
            for (const char* c : {"real", "fake"}) {
                for (const char* k : {"precision", "recall", "f1"}) md << " | " << mean_pm(s.value(std::string(c) + "." + k, json()));
            }
            md << " |\n";
        }
    }
    report["scalars"] = scalars;

    if (config_.class_scheme == manifest::ClassScheme::multiclass) {
        md << "\n## Multiclass (temporal)\n\n";
        const auto names = manifest::class_names(manifest::ClassScheme::multiclass);
        md << "| Test | Accuracy (%) | AUROC (%) |";
        for (const auto& c : names) md << " " << c << " P | " << c << " R | " << c << " F1 |";
        md << "\n|---|---|---|";
        for (std::size_t i = 0; i < names.size(); ++i) md << "---|---|---|";
        md << "\n";
        for (const auto& [name, entry] : ev.at("datasets").items()) {
            const auto& s = entry.at("temporal_multiclass").at("scalars");
            report["multiclass"][name] = s;
            md << "| " << entry.at("version").get<std::string>() << " | " << mean_pm(s.value("accuracy", json()))
               << " | " << mean_pm(s.value("auroc", json())) << " |";
            for (const auto& c : names) {
                for (const char* k : {"precision", "recall", "f1"}) md << " " << mean_pm(s.value(c + "." + k, json())) << " |";
            }
            md << "\n";
        }
    }

    if (config_.finetune.enabled) {
        const auto sweep = read_json(stage_dir(Stage::finetune) / "sweep_summary.json");
        md << "\n## Fine-tuning on `" << config_.finetune.target_dataset << "`\n\n";
        md << "Fake-class metrics on the target test identities, mean ± std over seeds.\n\n";
        md << "| Init | Identity fraction | Identities | Cells ok | AUROC (%) | fake P | fake R | fake F1 |\n";
        md << "|---|---|---|---|---|---|---|---|\n";
        const auto& z = sweep.at("zero_shot");
        if (z.at("status") == "ok") {
            const auto& r = z.at("report");
            md << "| " << z.at("init").get<std::string>() << " (no fine-tuning) | 0 | 0 | 1 | "
               << fmt(r.at("auroc").is_null() ? NAN : r.at("auroc").get<double>()) << " | "
               << fmt(class_metric(r, "fake", "precision")) << " | " << fmt(class_metric(r, "fake", "recall")) << " | "
               << fmt(class_metric(r, "fake", "f1")) << " |\n";
        }
        std::map<std::pair<std::string, double>, std::vector<const json*>> groups;
        for (const auto& c : sweep.at("cells")) groups[{c.at("init").get<std::string>(), c.at("fraction").get<double>()}].push_back(&c);
        json ft = json::array();
        std::map<std::string, std::vector<eval::NamedCurve>> curves;
        for (const auto& [key, cells] : groups) {
            std::vector<double> au, p, r, f;
            std::size_t ok = 0, ids = 0;
            for (const auto* c : cells) {
                if (c->at("status") != "ok") continue;
                ++ok;
                ids = c->at("identity_count").get<std::size_t>();
                const auto& rep = c->at("report");
                if (!rep.at("auroc").is_null()) au.push_back(rep.at("auroc").get<double>());
                p.push_back(class_metric(rep, "fake", "precision"));
                r.push_back(class_metric(rep, "fake", "recall"));
                f.push_back(class_metric(rep, "fake", "f1"));
                if (curves[key.first].size() < groups.size() && !rep.at("pr_curve").at("points").empty() &&
                    c == cells.front()) {
                    curves[key.first].push_back({"f=" + fmt(key.second) + " s=" + std::to_string(c->at("seed").get<std::uint64_t>()),
                                                 curve_from_json(rep), false});
                }
            }
            json row{{"init", key.first},      {"fraction", key.second},       {"identities", ids},
                     {"cells", cells.size()},  {"cells_ok", ok},               {"auroc", mean_std_json(au)},
                     {"fake_precision", mean_std_json(p)}, {"fake_recall", mean_std_json(r)},
                     {"fake_f1", mean_std_json(f)}};
            ft.push_back(row);
            md << "| " << key.first << " | " << fmt(key.second) << " | " << ids << " | " << ok << "/" << cells.size()
               << " | " << mean_pm(row["auroc"]) << " | " << mean_pm(row["fake_precision"]) << " | "
               << mean_pm(row["fake_recall"]) << " | " << mean_pm(row["fake_f1"]) << " |\n";
        }
        report["finetune"] = {{"target_dataset", config_.finetune.target_dataset}, {"groups", ft},
                              {"zero_shot", z.value("report", json())}};
        for (auto& [init, cs] : curves) {
            if (z.at("status") == "ok" && !z.at("report").at("pr_curve").at("points").empty()) {
                cs.push_back({"no fine-tuning (" + z.at("init").get<std::string>() + ")", curve_from_json(z.at("report")), true});
            }
            const auto file = "pr_" + init + ".svg";
            atomic_write(dir / file, eval::pr_curves_svg(cs, "Fine-tuned from " + init + " on " + config_.finetune.target_dataset));
            md << "\n![PR curves, init " << init << "](" << file << ")\n";
        }
    }

    // Feature-space PCA of test videos, coloured by technique.
    frame::EmbeddingStore store(config_.cache_root, emb.at("store_fingerprint").get<std::string>());
    md << "\n## Feature space\n\n";
    for (const auto& [name, entry] : ev.at("datasets").items()) {
        const auto test = load_dataset(name).partition(manifest::Split::test);
        std::vector<torch::Tensor> rows;
        std::vector<std::string> groups, ids;
        for (const auto& r : test.records()) {
            if (static_cast<int>(rows.size()) >= config_.report.pca_max_points) break;
            if (!store.contains(r.video_id)) continue;
            rows.push_back(store.load(r.video_id).embeddings.to(torch::kFloat64).mean(0));
            groups.emplace_back(manifest::to_string(r.technique));
            ids.push_back(r.video_id);
        }
        try {
            if (rows.empty()) throw DegenerateInput("no embedded test videos");
            const auto pca = eval::pca_features(torch::stack(rows), 2);
            json pts = json::array();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                pts.push_back({{"video_id", ids[i]}, {"technique", groups[i]},
                               {"pc1", pca.projection[i][0].item<double>()}, {"pc2", pca.projection[i][1].item<double>()}});
            }
            atomic_write_json(dir / ("pca_" + name + ".json"),
                              {{"explained_variance_ratio", pca.explained_variance_ratio}, {"points", pts}});
            atomic_write(dir / ("pca_" + name + ".svg"),
                         eval::pca_scatter_svg(pca.projection, groups, "PCA of video embeddings: " + name));
            md << "![PCA " << name << "](pca_" << name << ".svg)\n";
            report["pca"][name] = {{"explained_variance_ratio", pca.explained_variance_ratio}, {"points", ids.size()}};
        } catch (const DegenerateInput& e) {
            log::warn("report.pca_skipped", {{"dataset", name}, {"reason", e.what()}});
            report["pca"][name] = {{"skipped", e.what()}};
        }
    }

    atomic_write_json(dir / "report.json", report);
    atomic_write(dir / "report.md", md.str());
    return {{"report", (dir / "report.json").string()}};
}

std::vector<std::string> verify_provenance(const fs::path& run_dir) {
    std::vector<std::string> problems;
    std::map<std::string, StageRecord> records;
    for (auto s : all_stages()) {
        const auto p = run_dir / std::string(to_string(s)) / "stage.json";
        if (!fs::exists(p)) continue;
        try {
            records[std::string(to_string(s))] = StageRecord::from_json(read_json(p));
        } catch (const std::exception& e) {
            problems.push_back(p.string() + ": unreadable (" + e.what() + ")");
        }
    }
    if (records.empty()) problems.push_back("no stage records under " + run_dir.string());
    const auto config_hash = run_dir.filename().string();
    for (const auto& [name, r] : records) {
        if (r.config_hash != config_hash) problems.push_back(name + ": config hash " + r.config_hash + " != run dir");
        for (const auto& [rel, sha] : r.outputs) {
            const auto p = run_dir / name / rel;
            if (!fs::exists(p)) {
                problems.push_back(name + ": missing output " + rel);
            } else if (sha256_file(p) != sha) {
                problems.push_back(name + ": output " + rel + " does not match its recorded hash");
            }
        }
        for (const auto& [up, fp] : r.upstream) {
            const auto it = records.find(up);
            if (it == records.end()) {
                problems.push_back(name + ": upstream stage " + up + " has no record");
            } else if (it->second.fingerprint != fp) {
                problems.push_back(name + ": upstream " + up + " fingerprint " + fp + " != " + it->second.fingerprint);
            }
        }
    }
    return problems;
}

}  // namespace decay_bench::experiment
