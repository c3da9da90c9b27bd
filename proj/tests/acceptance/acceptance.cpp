// Acceptance runner: one PASS/FAIL line per criterion on stdout.
//   acceptance [A1 ... A8] [--work DIR]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "decay_bench/errors.hpp"
#include "decay_bench/evaluation.hpp"
#include "decay_bench/experiment.hpp"
#include "decay_bench/extraction.hpp"
#include "decay_bench/finetune.hpp"
#include "decay_bench/frame_model.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/manifest.hpp"
#include "decay_bench/resnet.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/synth.hpp"
#include "decay_bench/temporal.hpp"
#include "decay_bench/util.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace decay_bench;
namespace ex = decay_bench::experiment;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;     // shown on the result line
    std::vector<std::string> failures;  // first few shown

    void require(bool ok, const std::string& what) {
        if (ok) return;
        pass = false;
        if (failures.size() < 5) failures.push_back(what);
    }
    void note(const std::string& s) { notes.push_back(s); }
};

std::string num(double v, int digits = 2) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_work;

// ---------------------------------------------------------------- A1

Outcome a1_metric_oracles() {
    Outcome o;
    Rng rng(101);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = rng.uniform_int(2, 200);
        const auto grid = rng.uniform_int(1, 50);  // coarse grids force ties
        std::vector<double> s;
        std::vector<int> y;
        for (std::int64_t i = 0; i < n; ++i) {
            s.push_back(static_cast<double>(rng.uniform_int(0, grid)) / static_cast<double>(grid));
            y.push_back(static_cast<int>(rng.uniform_int(0, 1)));
        }
        y[0] = 1;
        y[1] = 0;
        const double got = eval::auroc(s, y), want = testkit::brute_auroc(s, y);
        o.require(std::abs(got - want) <= 1e-9, "auroc trial " + std::to_string(trial) + ": " + num(got, 12) +
                                                     " vs " + num(want, 12));

        const auto pr = eval::pr_curve(s, y);
        const double prevalence = std::count(y.begin(), y.end(), 1) / static_cast<double>(n);
        o.require(!pr.empty() && pr.back().x == 1.0, "pr_curve does not end at recall 1");
        o.require(!pr.empty() && std::abs(pr.back().y - prevalence) <= 1e-9, "pr_curve end precision != prevalence");
        // Every point against a direct count at its threshold.
        for (const auto& pt : pr) {
            long tp = 0, fp = 0, pos = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                pos += y[i];
                if (s[i] >= pt.threshold) (y[i] ? tp : fp)++;
            }
            o.require(std::abs(pt.x - static_cast<double>(tp) / pos) <= 1e-9 &&
                          std::abs(pt.y - static_cast<double>(tp) / (tp + fp)) <= 1e-9,
                      "pr_curve point at threshold " + num(pt.threshold, 4));
        }
    }
    for (int trial = 0; trial < 500; ++trial) {
        const int classes = rng.bernoulli(0.5) ? 2 : 4;
        const auto n = rng.uniform_int(1, 200);
        eval::PredictionSet set;
        set.scheme = classes == 2 ? manifest::ClassScheme::binary : manifest::ClassScheme::multiclass;
        std::vector<std::pair<int, int>> pairs;
        for (std::int64_t i = 0; i < n; ++i) {
            eval::Prediction p;
            p.video_id = "v" + std::to_string(i);
            p.true_class = static_cast<int>(rng.uniform_int(0, classes - 1));
            p.predicted_class = static_cast<int>(rng.uniform_int(0, classes - 1));
            p.probabilities.assign(classes, 0.0);
            p.probabilities[p.predicted_class] = 1.0;
            pairs.emplace_back(p.true_class, p.predicted_class);
            set.items.push_back(p);
        }
        const auto got = eval::confusion_metrics(set);
        const auto want = testkit::naive_confusion(pairs, classes);
        bool same = std::abs(got.accuracy - want.accuracy) <= 1e-9;
        for (int t = 0; t < classes; ++t) {
            for (int q = 0; q < classes; ++q) same = same && got.matrix[t][q] == want.matrix[t][q];
            same = same && std::abs(got.per_class[t].precision - want.precision[t]) <= 1e-9 &&
                   std::abs(got.per_class[t].recall - want.recall[t]) <= 1e-9 &&
                   std::abs(got.per_class[t].f1 - want.f1[t]) <= 1e-9;
        }
        o.require(same, "confusion trial " + std::to_string(trial));
    }
    o.note("1000 auroc/pr instances, 500 confusion instances");
    return o;
}

// ---------------------------------------------------------------- A2

std::int64_t round_clamp(double f, std::int64_t n, std::int64_t lo, std::int64_t hi) {
    return std::clamp(static_cast<std::int64_t>(std::floor(f * static_cast<double>(n) + 0.5)), lo, hi);
}

bool disjoint(const manifest::IdentitySet& a, const manifest::IdentitySet& b) {
    for (const auto& x : a) {
        if (b.count(x)) return false;
    }
    return true;
}

Outcome a2_protocol_invariants() {
    Outcome o;
    Rng rng(202);
    int splits = 0, subsets = 0, kfolds = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const auto m = testkit::random_manifest(rng);
        const auto tag = "manifest " + std::to_string(trial);
        const auto train = m.partition(manifest::Split::train);
        const auto test = m.partition(manifest::Split::test);
        o.require(disjoint(train.identities(), test.identities()), tag + ": train/test share identities");
        const auto ids = train.identities();
        const auto n = static_cast<std::int64_t>(ids.size());

        const double vf = rng.uniform(0.05, 0.5);
        if (n >= 2) {
            const auto s = manifest::split_identities(m, vf, rng.next_u64());
            o.require(disjoint(s.train_identities, s.held_identities), tag + ": split overlaps");
            o.require(static_cast<std::int64_t>(s.held_identities.size()) == round_clamp(vf, n, 1, n - 1),
                      tag + ": held count");
            o.require(s.train_identities.size() + s.held_identities.size() == ids.size(), tag + ": split loses ids");
            ++splits;
        } else {
            bool threw = false;
            try {
                manifest::split_identities(m, vf, 1);
            } catch (const TooFewIdentities&) {
                threw = true;
            }
            o.require(threw, tag + ": split of <2 identities did not throw");
        }

        if (n >= 1) {
            const double f = rng.uniform(0.01, 1.0);
            const auto sub = manifest::subset_by_identity_fraction(train, f, rng.next_u64());
            const auto sid = sub.identities();
            o.require(static_cast<std::int64_t>(sid.size()) == round_clamp(f, n, 1, n), tag + ": subset count");
            o.require(std::includes(ids.begin(), ids.end(), sid.begin(), sid.end()), tag + ": subset not within pool");
            o.require(disjoint(sid, test.identities()), tag + ": subset touches test");
            // All videos of a chosen identity come along.
            o.require(sub.size() == train.restrict_to(sid).size(), tag + ": subset drops videos");
            ++subsets;
        }

        const int k = static_cast<int>(rng.uniform_int(2, 6));
        if (n >= k) {
            const auto folds = manifest::kfold_identity_splits(m, k, rng.next_u64());
            o.require(static_cast<int>(folds.size()) == k, tag + ": fold count");
            manifest::IdentitySet seen;
            std::size_t lo = SIZE_MAX, hi = 0;
            for (const auto& f : folds) {
                o.require(disjoint(f.train_identities, f.held_identities), tag + ": fold overlaps");
                o.require(f.train_identities.size() + f.held_identities.size() == ids.size(), tag + ": fold loses ids");
                o.require(disjoint(seen, f.held_identities), tag + ": held sets intersect");
                seen.insert(f.held_identities.begin(), f.held_identities.end());
                lo = std::min(lo, f.held_identities.size());
                hi = std::max(hi, f.held_identities.size());
            }
            o.require(seen == ids, tag + ": held sets do not cover the identities");
            o.require(hi - lo <= 1, tag + ": fold sizes differ by more than one");
            ++kfolds;
        }
    }
    o.note(std::to_string(splits) + " splits, " + std::to_string(subsets) + " subsets, " + std::to_string(kfolds) +
           " k-fold runs over 500 manifests");
    return o;
}

// ---------------------------------------------------------------- A3 / A8

nlohmann::json synthetic_config(const fs::path& corpus, const fs::path& out) {
    auto j = read_json(fs::path(DECAY_BENCH_SOURCE_DIR) / "configs" / "synthetic.json");
    j["datasets"] = {{"A", (corpus / "A" / "manifest.csv").string()}, {"B", (corpus / "B" / "manifest.csv").string()}};
    j["output_dir"] = (out / "runs").string();
    j["cache_root"] = (out / "cache").string();
    return j;
}

void make_corpus(const fs::path& corpus) {
    if (fs::exists(corpus / "B" / "manifest.csv")) return;
    synth::SynthConfig sc;
    synth::generate_corpus(corpus / "A", synth::Generation::a, sc);
    synth::generate_corpus(corpus / "B", synth::Generation::b, sc);
}

ex::ExperimentConfig load_config(const nlohmann::json& j, const fs::path& base) {
    auto c = ex::ExperimentConfig::from_json(j, base);
    c.validate();
    return c;
}

double scalar(const nlohmann::json& agg, const std::string& key) {
    const auto& v = agg.at("scalars").at(key).at("mean");
    return v.is_null() ? std::nan("") : v.get<double>();
}

double fake_recall(const nlohmann::json& report) {
    for (const auto& c : report.at("confusion").at("per_class")) {
        if (c.at("name") == "fake") return c.at("recall").get<double>();
    }
    return std::nan("");
}

fs::path g_a3_run;

Outcome a3_synthetic_decay() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const auto corpus = g_work / "corpus";
    make_corpus(corpus);
    const auto cfg = load_config(synthetic_config(corpus, g_work / "a3"), g_work);
    ex::Pipeline p(cfg);
    p.run_all();
    g_a3_run = cfg.run_dir();
    const double secs = seconds_since(t0);

    const auto ev = read_json(p.stage_dir(ex::Stage::evaluate) / "evaluation.json");
    const auto& a = ev.at("datasets").at("A");
    const auto& b = ev.at("datasets").at("B");
    const double auroc_a = scalar(a.at("frame_model"), "auroc");
    const double recall_a = scalar(a.at("frame_model"), "fake.recall");
    const double recall_b = scalar(b.at("frame_model"), "fake.recall");
    const auto sweep = read_json(p.stage_dir(ex::Stage::finetune) / "sweep_summary.json");
    double recall_ft = std::nan("");
    for (const auto& c : sweep.at("cells")) {
        if (c.at("status") == "ok" && std::abs(c.at("fraction").get<double>() - 0.25) < 1e-12) {
            recall_ft = fake_recall(c.at("report"));
        }
    }
    const double lost = recall_a - recall_b;
    const double recovered = recall_ft - recall_b;

    o.require(auroc_a >= 95.0, "(i) AUROC on A held identities " + num(auroc_a) + " < 95");
    o.require(lost >= 15.0, "(ii) fake recall drop A->B " + num(lost) + " < 15 points");
    o.require(std::isfinite(recall_ft) && recovered >= 0.5 * lost,
              "(iii) recovered " + num(recovered) + " of " + num(lost) + " lost recall points");
    o.require(secs <= 20 * 60, "runtime " + num(secs, 0) + " s > 20 min");
    o.note("(i) AUROC_A=" + num(auroc_a) + " (ii) recall A=" + num(recall_a) + " B=" + num(recall_b) +
           " drop=" + num(lost) + " (iii) after 25% fine-tune=" + num(recall_ft) + " recovered=" + num(recovered) +
           " temporal AUROC_A=" + num(scalar(a.at("temporal"), "auroc")) + " runtime=" + num(secs, 0) + "s");
    return o;
}

Outcome a8_reproducibility() {
    Outcome o;
    const auto corpus = g_work / "corpus";
    make_corpus(corpus);
    // Two fresh output and cache roots; the first reuses A3's run when it exists.
    std::vector<fs::path> runs;
    std::vector<std::string> hashes;
    for (int r = 0; r < 2; ++r) {
        if (r == 0 && !g_a3_run.empty()) {
            runs.push_back(g_a3_run);
            hashes.push_back(g_a3_run.filename().string());
            continue;
        }
        const auto cfg = load_config(synthetic_config(corpus, g_work / ("a8_run" + std::to_string(r))), g_work);
        ex::Pipeline p(cfg);
        p.run_all();
        runs.push_back(cfg.run_dir());
        hashes.push_back(cfg.hash());
    }
    o.require(hashes[0] == hashes[1], "config hashes differ: " + hashes[0] + " vs " + hashes[1]);
    const auto r0 = read_json(runs[0] / "report" / "report.json");
    const auto r1 = read_json(runs[1] / "report" / "report.json");
    for (const char* key : {"scalars", "finetune", "multiclass"}) {
        o.require(r0.value(key, nlohmann::json()) == r1.value(key, nlohmann::json()),
                  std::string("report ") + key + " differ between runs");
    }
    for (const auto& run : runs) {
        const auto problems = ex::verify_provenance(run);
        for (const auto& pr : problems) o.require(false, run.filename().string() + ": " + pr);
        const auto prov = read_json(run / "report" / "report.json").at("provenance");
        const auto& st = prov.at("stages");
        o.require(st.contains("extract") && st.at("extract").at("details").at("A").contains("manifest_hash") &&
                      st.at("extract").at("details").at("A").contains("extraction_fingerprint"),
                  "report provenance lacks manifest hash or extraction fingerprint");
        o.require(st.contains("train-frame") && st.at("train-frame").at("details").contains("checkpoint_hash"),
                  "report provenance lacks the frame checkpoint hash");
        o.require(st.contains("train-temporal") &&
                      st.at("train-temporal").at("details").at("checkpoint_hashes").size() == 5,
                  "report provenance lacks temporal checkpoint hashes");
        o.require(prov.at("config_hash") == run.filename().string(), "report config hash != run directory");
    }
    o.note("config hash " + hashes[0] + ", report scalars identical, provenance verified for 2 runs");
    return o;
}

// ---------------------------------------------------------------- A4

Outcome a4_standardize_and_mask() {
    Outcome o;
    Rng rng(404);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto t = rng.uniform_int(1, 120);
        const auto target = static_cast<int>(rng.uniform_int(1, 120));
        const auto d = rng.uniform_int(1, 16);
        const auto seq = torch::randn({t, d}, torch::kFloat32);
        const auto tag = "(T=" + std::to_string(t) + ", target=" + std::to_string(target) + ")";

        const auto e1 = temporal::standardize_length(seq, target, temporal::Mode::eval, rng.next_u64());
        const auto e2 = temporal::standardize_length(seq, target, temporal::Mode::eval, rng.next_u64());
        o.require(e1.size(0) == target && e1.size(1) == d, "eval shape " + tag);
        o.require(torch::equal(e1, e2), "eval mode depends on seed " + tag);
        const auto keep = std::min<std::int64_t>(t, target);
        o.require(torch::equal(e1.slice(0, 0, keep), seq.slice(0, 0, keep)), "eval prefix " + tag);
        for (std::int64_t r = keep; r < target; ++r) {
            if (!torch::equal(e1[r], seq[t - 1])) {
                o.require(false, "eval pad row " + std::to_string(r) + " " + tag);
                break;
            }
        }

        const auto seed = rng.next_u64();
        const auto tr = temporal::standardize_length(seq, target, temporal::Mode::train, seed);
        o.require(tr.size(0) == target, "train shape " + tag);
        o.require(torch::equal(tr, temporal::standardize_length(seq, target, temporal::Mode::train, seed)),
                  "train mode not reproducible " + tag);
        if (t >= target) {
            bool window = false;
            for (std::int64_t off = 0; off + target <= t && !window; ++off) {
                window = torch::equal(tr, seq.slice(0, off, off + target));
            }
            o.require(window, "train crop is not a contiguous window " + tag);
        } else {
            bool padded = false;
            for (std::int64_t k = 0; k <= target - t && !padded; ++k) {
                bool ok = true;
                for (std::int64_t r = 0; r < k && ok; ++r) ok = torch::equal(tr[r], seq[0]);
                ok = ok && torch::equal(tr.slice(0, k, k + t), seq);
                for (std::int64_t r = k + t; r < target && ok; ++r) ok = torch::equal(tr[r], seq[t - 1]);
                padded = ok;
            }
            o.require(padded, "train pad pattern " + tag);
        }
    }
    for (int trial = 0; trial < 300; ++trial) {
        const auto d = rng.uniform_int(1, 2048);
        const auto t = rng.uniform_int(1, 30);
        const auto seq = torch::rand({t, d}, torch::kFloat32) + 0.5f;  // no natural zeros
        const auto vid = "vid" + std::to_string(rng.uniform_index(50));
        const int epoch = static_cast<int>(rng.uniform_int(0, 99));
        const auto seed = rng.next_u64();
        const auto m1 = temporal::mask_features(seq, 0.1, seed, vid, epoch);
        const auto m2 = temporal::mask_features(seq, 0.1, seed, vid, epoch);
        o.require(torch::equal(m1, m2), "mask not reproducible for d=" + std::to_string(d));
        const auto want = round_clamp(0.1, d, 0, d);
        std::int64_t zero_cols = 0;
        bool others_intact = true;
        for (std::int64_t c = 0; c < d; ++c) {
            const auto col = m1.select(1, c);
            if (col.eq(0).all().item<bool>()) {
                ++zero_cols;
            } else {
                others_intact = others_intact && torch::equal(col, seq.select(1, c));
            }
        }
        o.require(zero_cols == want, "mask zeroed " + std::to_string(zero_cols) + " of " + std::to_string(d) +
                                         " columns, want " + std::to_string(want));
        o.require(others_intact, "mask altered an unmasked column");
    }
    o.note("1000 (T, target) pairs, 300 masks");
    return o;
}

// ---------------------------------------------------------------- A5 / A6

struct SmallCorpus {
    manifest::DatasetManifest manifest;
    extraction::FrameIndex index;
};

SmallCorpus small_corpus() {
    const auto root = g_work / "small";
    synth::SynthConfig sc;
    sc.identities = 8;
    sc.real_per_identity = 1;
    sc.fake_per_identity = 1;
    sc.frames_per_video = 8;
    sc.seed = 5;
    SmallCorpus c;
    c.manifest = fs::exists(root / "A" / "manifest.csv") ? manifest::load_manifest(root / "A" / "manifest.csv")
                                                          : synth::generate_corpus(root / "A", synth::Generation::a, sc);
    extraction::ExtractionConfig ec;
    ec.box_side = 64;
    ec.margin = 8;
    extraction::BuildOptions bo;
    bo.cache_root = root / "cache";
    c.index = extraction::build_frame_dataset(c.manifest, ec, bo);
    return c;
}

frame::FrameModelConfig small_frame_config() {
    frame::FrameModelConfig fc;
    fc.init = frame::InitKind::random;
    fc.input_size = 64;
    fc.batch_size = 16;
    fc.max_epochs = 2;
    fc.frozen_blocks = {1, 2};
    fc.seed = 9;
    return fc;
}

Outcome a5_freeze_contracts() {
    Outcome o;
    const auto c = small_corpus();
    const auto train = c.manifest.partition(manifest::Split::train);
    const auto split = manifest::split_identities(train, 0.25, 3);
    const auto tr = c.index.restrict_to(split.train_identities);
    const auto va = c.index.restrict_to(split.held_identities);

    const auto fc = small_frame_config();
    const auto init = frame::build_frame_model(fc).to_checkpoint();
    frame::AugmentationPolicy aug;
    const auto res = frame::train_frame_model(tr, va, fc, aug);
    o.require(res.checkpoint.epochs_trained == 2 || !res.history.empty(), "frame training ran no epochs");
    int frozen_same = 0, frozen_total = 0, trainable_changed = 0;
    for (const auto& [name, t] : init.state) {
        const int block = frame::ResNet50Impl::block_of(name);
        const bool same = torch::equal(t, res.checkpoint.state.at(name));
        if (block == 1 || block == 2) {
            ++frozen_total;
            frozen_same += same;
            o.require(same, "frozen tensor changed: " + name);
        } else if (!same) {
            ++trainable_changed;
        }
    }
    o.require(trainable_changed > 0, "no trainable tensor changed after 2 epochs");

    // Fine-tune from the trained model with block4_and_head scope.
    const auto base_path = g_work / "a5_base.ckpt";
    res.checkpoint.save(base_path);
    finetune::FinetunePlan plan;
    plan.learning_rate = 1e-3;
    plan.recipe = fc;
    plan.recipe.max_epochs = 2;
    plan.augmentation = aug;
    finetune::BaseInit base{"prior", frame::InitKind::checkpoint, base_path, {}};
    plan.inits = {base};
    const auto ft = finetune::finetune_frame_model(base, c.index, train, plan, 0);
    int outside_same = 0, outside_total = 0, inside_changed = 0;
    for (const auto& [name, t] : res.checkpoint.state) {
        const int block = frame::ResNet50Impl::block_of(name);
        const bool same = torch::equal(t, ft.checkpoint.state.at(name));
        if (block >= 1 && block <= 3) {
            ++outside_total;
            outside_same += same;
            o.require(same, "fine-tuning changed a tensor outside block 4/head: " + name);
        } else if (!same) {
            ++inside_changed;
        }
    }
    o.require(inside_changed > 0, "fine-tuning changed nothing in block 4/head");
    o.note("training: " + std::to_string(frozen_same) + "/" + std::to_string(frozen_total) +
           " frozen tensors bit-identical, " + std::to_string(trainable_changed) + " trainable changed; fine-tune: " +
           std::to_string(outside_same) + "/" + std::to_string(outside_total) + " outside block 4/head identical, " +
           std::to_string(inside_changed) + " inside changed");
    return o;
}

Outcome a6_aggregation_and_head() {
    Outcome o;
    Rng rng(606);
    for (int trial = 0; trial < 500; ++trial) {
        const auto t = rng.uniform_int(1, 60);
        const auto cls = rng.uniform_int(2, 4);
        const auto p = torch::softmax(torch::randn({t, cls}, torch::kFloat64), 1);
        const auto got = frame::aggregate_video(p);
        auto acc = p.accessor<double, 2>();
        for (std::int64_t j = 0; j < cls; ++j) {
            double s = 0;
            for (std::int64_t i = 0; i < t; ++i) s += acc[i][j];
            o.require(got[j] == s / static_cast<double>(t), "aggregate_video column " + std::to_string(j));
        }
    }
    auto fc = small_frame_config();
    auto model = frame::build_frame_model(fc);
    std::vector<cv::Mat> frames;
    cv::RNG cvrng(606);
    for (int i = 0; i < 100; ++i) {
        cv::Mat m(64, 64, CV_8UC3);
        cvrng.fill(m, cv::RNG::UNIFORM, 0, 256);
        frames.push_back(m);
    }
    const auto direct = frame::predict_frames(model, frames);
    const auto via_head = frame::apply_head(model, frame::extract_embeddings(model, frames));
    const double diff = (direct - via_head).abs().max().item<double>();
    o.require(diff <= 1e-5, "head on embeddings differs from predict_frames by " + num(diff, 9));
    o.note("500 aggregate checks exact; head/predict max diff " + num(diff, 9) + " over 100 frames");
    return o;
}

// ---------------------------------------------------------------- A7

Outcome a7_pca_oracle() {
    Outcome o;
    Rng rng(707);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto x = torch::empty({50, 10}, torch::kFloat64);
        auto acc = x.accessor<double, 2>();
        for (int i = 0; i < 50; ++i)
            for (int j = 0; j < 10; ++j) acc[i][j] = rng.normal() * (1.0 + 0.5 * j);
        const int k = static_cast<int>(rng.uniform_int(1, 5));
        const auto r = eval::pca_features(x, k);
        const auto c = x - x.mean(0);
        const auto cov = torch::mm(c.t(), c);
        std::vector<std::vector<double>> a(10, std::vector<double>(10));
        for (int i = 0; i < 10; ++i)
            for (int j = 0; j < 10; ++j) a[i][j] = cov[i][j].item<double>();
        std::vector<double> vals;
        std::vector<std::vector<double>> vecs;
        testkit::jacobi_eigen(a, vals, vecs);
        std::vector<int> order(10);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int i, int j) { return vals[i] > vals[j]; });
        auto u = torch::empty({10, k}, torch::kFloat64);
        for (int q = 0; q < k; ++q)
            for (int i = 0; i < 10; ++i) u[i][q] = vecs[i][order[q]];
        const auto sv = torch::linalg_svdvals(torch::mm(u.t(), r.components.t()));
        for (int q = 0; q < k; ++q) {
            const double angle = std::acos(std::min(1.0, sv[q].item<double>()));
            worst = std::max(worst, angle);
            o.require(angle < 1e-6, "principal angle " + num(angle, 12) + " in trial " + std::to_string(trial));
        }
        for (std::size_t q = 1; q < r.explained_variance_ratio.size(); ++q) {
            o.require(r.explained_variance_ratio[q] <= r.explained_variance_ratio[q - 1],
                      "explained variance increases in trial " + std::to_string(trial));
        }
        // Projection is the centred data on the components.
        const double pd = (r.projection - torch::mm(c, r.components.t())).abs().max().item<double>();
        o.require(pd < 1e-9, "projection mismatch " + num(pd, 12));
    }
    o.note("200 random 50x10 matrices, worst principal angle " + num(worst, 12));
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    log::set_min_level(log::Level::warn);
    torch::set_num_threads(1);
    std::set<std::string> wanted;
    fs::path keep;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work" && i + 1 < argc) {
            keep = argv[++i];
        } else {
            wanted.insert(a);
        }
    }
    std::optional<testkit::TempDir> tmp;
    if (keep.empty()) {
        tmp.emplace("decay_bench_acceptance");
        g_work = tmp->path();
    } else {
        g_work = fs::absolute(keep);
        fs::create_directories(g_work);
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"A1", a1_metric_oracles},       {"A2", a2_protocol_invariants}, {"A3", a3_synthetic_decay},
        {"A4", a4_standardize_and_mask}, {"A5", a5_freeze_contracts},    {"A6", a6_aggregation_and_head},
        {"A7", a7_pca_oracle},           {"A8", a8_reproducibility}};
    const std::map<std::string, double> budget{{"A1", 30}, {"A2", 30}, {"A4", 10}, {"A5", 300}, {"A7", 10}};

    int failed = 0;
    for (const auto& [id, fn] : criteria) {
        if (!wanted.empty() && !wanted.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const Error& e) {
            o.require(false, e.kind() + ": " + e.what());
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        const double secs = seconds_since(t0);
        if (auto it = budget.find(id); it != budget.end()) {
            o.require(secs <= it->second, "runtime " + num(secs, 1) + " s over the " + num(it->second, 0) + " s budget");
        }
        failed += !o.pass;
        std::cout << id << " " << (o.pass ? "PASS" : "FAIL") << " (" << num(secs, 1) << " s)";
        for (const auto& n : o.notes) std::cout << " " << n;
        for (const auto& f : o.failures) std::cout << " | " << f;
        std::cout << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
