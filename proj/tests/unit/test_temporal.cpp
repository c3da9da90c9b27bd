#include <gtest/gtest.h>

#include <cmath>

#include "decay_bench/embedding_store.hpp"
#include "decay_bench/errors.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/temporal.hpp"
#include "test_support.hpp"

using namespace decay_bench;
using namespace decay_bench::temporal;

namespace {

torch::Tensor ramp(std::int64_t t, std::int64_t d) {
    return torch::arange(t * d, torch::kFloat32).reshape({t, d});
}

bool rows_equal(const torch::Tensor& a, std::int64_t i, const torch::Tensor& b, std::int64_t j) {
    return torch::equal(a[i], b[j]);
}

TemporalModelConfig tiny_config() {
    TemporalModelConfig c;
    c.gru_layers = 2;
    c.hidden_dim = 16;
    c.fc_layers = 2;
    c.target_length = 8;
    c.max_epochs = 30;
    c.early_stop_patience = 30;
    c.batch_size = 8;
    c.learning_rate = 3e-3;
    c.dropout = 0.1;
    return c;
}

}  // namespace

TEST(StandardizeLength, EvalExamples) {
    const auto x = ramp(10, 3);
    EXPECT_TRUE(torch::equal(standardize_length(x, 8, Mode::eval, 1), x.slice(0, 0, 8)));
    const auto y = ramp(6, 3);
    const auto p = standardize_length(y, 8, Mode::eval, 1);
    ASSERT_EQ(p.size(0), 8);
    EXPECT_TRUE(torch::equal(p.slice(0, 0, 6), y));
    EXPECT_TRUE(rows_equal(p, 6, y, 5));
    EXPECT_TRUE(rows_equal(p, 7, y, 5));
    const auto z = ramp(8, 3);
    EXPECT_TRUE(torch::equal(standardize_length(z, 8, Mode::eval, 3), z));
    EXPECT_TRUE(torch::equal(standardize_length(z, 8, Mode::train, 3), z));
}

TEST(StandardizeLength, EmptyThrows) {
    EXPECT_THROW(standardize_length(torch::zeros({0, 3}), 4, Mode::eval, 0), PreconditionError);
}

TEST(StandardizeLength, RandomPairsSatisfyContract) {
    Rng rng(41);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto t = rng.uniform_int(1, 40);
        const auto target = static_cast<int>(rng.uniform_int(1, 40));
        const auto x = ramp(t, 2);
        const auto seed = rng.next_u64();
        const auto e = standardize_length(x, target, Mode::eval, seed);
        ASSERT_EQ(e.size(0), target);
        for (std::int64_t j = 0; j < target; ++j) ASSERT_TRUE(rows_equal(e, j, x, std::min<std::int64_t>(j, t - 1)));
        EXPECT_TRUE(torch::equal(e, standardize_length(x, target, Mode::eval, seed + 1)));

        const auto tr = standardize_length(x, target, Mode::train, seed);
        ASSERT_EQ(tr.size(0), target);
        EXPECT_TRUE(torch::equal(tr, standardize_length(x, target, Mode::train, seed)));
        if (t > target) {
            // Contiguous window: row j == input row offset + j.
            const auto offset = static_cast<std::int64_t>(tr[0][0].template item<float>()) / 2;
            ASSERT_LE(offset + target, t);
            for (std::int64_t j = 0; j < target; ++j) ASSERT_TRUE(rows_equal(tr, j, x, offset + j));
        } else if (t < target) {
            std::int64_t k = 0;
            while (k < target && rows_equal(tr, k, x, 0)) ++k;
            // k copies of row 0 including the original row 0.
            const auto front = k - 1;
            ASSERT_GE(front, 0);
            for (std::int64_t j = 0; j < t; ++j) ASSERT_TRUE(rows_equal(tr, front + j, x, j));
            for (std::int64_t j = front + t; j < target; ++j) ASSERT_TRUE(rows_equal(tr, j, x, t - 1));
        }
    }
}

TEST(MaskFeatures, Examples) {
    const auto x = ramp(5, 10) + 1;
    const auto m = mask_features(x, 0.1, 7, "vid", 1);
    int zero_cols = 0;
    for (int c = 0; c < 10; ++c) {
        if (m.select(1, c).eq(0).all().item<bool>()) {
            ++zero_cols;
        } else {
            EXPECT_TRUE(torch::equal(m.select(1, c), x.select(1, c)));
        }
    }
    EXPECT_EQ(zero_cols, 1);
    EXPECT_TRUE(torch::equal(mask_features(x, 0.0, 7, "vid", 1), x));
}

TEST(MaskFeatures, ReproducibleAndRedrawnPerEpoch) {
    Rng rng(1);
    int differing = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto d = rng.uniform_int(1, 300);
        const std::string vid = "v" + std::to_string(trial);
        const auto seed = rng.next_u64();
        const auto cols = mask_columns(d, 0.1, seed, vid, 3);
        EXPECT_EQ(static_cast<std::int64_t>(cols.size()), (d + 5) / 10);  // round half up of d/10
        EXPECT_EQ(cols, mask_columns(d, 0.1, seed, vid, 3));
        differing += cols != mask_columns(d, 0.1, seed, vid, 4);
    }
    EXPECT_GT(differing, 500);
}

TEST(MaskFeatures, CardinalityAndUntouchedEntries) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const auto d = rng.uniform_int(1, 64);
        const auto t = rng.uniform_int(1, 12);
        const auto x = torch::rand({t, d}) + 0.5;
        const auto m = mask_features(x, 0.1, trial, "v", trial);
        const auto zero = m.eq(0).all(0);
        EXPECT_EQ(zero.sum().item<std::int64_t>(), (d + 5) / 10);
        const auto keep = zero.logical_not();
        EXPECT_TRUE(torch::equal(m.index({torch::indexing::Slice(), keep}), x.index({torch::indexing::Slice(), keep})));
    }
}

TEST(TemporalModel, FcTaper) {
    TemporalModelConfig c;
    EXPECT_EQ(c.fc_widths(1024), (std::vector<int>{512, 128, 32, 2}));
    c.fc_layers = 1;
    EXPECT_EQ(c.fc_widths(1024), (std::vector<int>{2}));
}

TEST(TemporalModel, ShapesForAnyInputDim) {
    TemporalModelConfig c;
    c.gru_layers = 2;
    c.hidden_dim = 32;
    auto m = build_temporal_model(c, 2048);
    m.net()->eval();
    EXPECT_EQ(m.net()->forward(torch::randn({1, 50, 2048})).sizes(), (std::vector<std::int64_t>{1, 2}));
    auto b = build_temporal_model(c, 128);
    b.net()->eval();
    EXPECT_EQ(b.net()->forward(torch::randn({3, 50, 128})).sizes(), (std::vector<std::int64_t>{3, 2}));
}

TEST(TemporalModel, DefaultShapeAtFullSize) {
    auto m = build_temporal_model(TemporalModelConfig{}, 2048);
    m.net()->eval();
    torch::NoGradGuard g;
    EXPECT_EQ(m.net()->forward(torch::randn({1, 50, 2048})).sizes(), (std::vector<std::int64_t>{1, 2}));
}

TEST(TemporalModel, PredictionDeterministicAndNormalised) {
    auto m = build_temporal_model(tiny_config(), 6);
    const auto x = torch::randn({3, 6});  // shorter than target_length
    const auto a = predict_video_temporal(m, x);
    const auto b = predict_video_temporal(m, x);
    EXPECT_EQ(a, b);
    EXPECT_NEAR(a[0] + a[1], 1.0, 1e-6);
}

TEST(TemporalModel, CheckpointRoundTrip) {
    auto m = build_temporal_model(tiny_config(), 6);
    const auto x = torch::randn({10, 6});
    const auto ck = m.to_checkpoint();
    auto r = TemporalModel::from_checkpoint(ck);
    EXPECT_EQ(predict_video_temporal(m, x), predict_video_temporal(r, x));
    ModelCheckpoint other = ck;
    other.architecture = "resnet50";
    EXPECT_THROW(TemporalModel::from_checkpoint(other), IncompatibleCheckpoint);
}

namespace {

// Separable embeddings: fake videos carry a positive offset on column 0.
std::vector<LabelledSequence> separable(int identities, std::uint64_t seed, const std::string& prefix) {
    Rng rng(seed);
    std::vector<LabelledSequence> out;
    for (int i = 0; i < identities; ++i) {
        for (int v = 0; v < 4; ++v) {
            const int label = v % 2;
            const auto t = rng.uniform_int(4, 12);
            auto e = torch::randn({t, 6}) * 0.3;
            e.select(1, 0).add_(label ? 2.0 : -2.0);
            out.push_back({prefix + std::to_string(i) + "_" + std::to_string(v), prefix + std::to_string(i), e, label});
        }
    }
    return out;
}

}  // namespace

TEST(TemporalTraining, SeparableFoldReachesHighAccuracy) {
    torch::manual_seed(0);
    const auto train = separable(8, 1, "t");
    const auto val = separable(3, 2, "h");
    auto c = tiny_config();
    c.mask_fraction = 0.0;  // the signal sits on a single column
    const auto r = train_temporal_fold(train, val, c, 0);
    EXPECT_GT(r.report.val_accuracy, 0.9);
    EXPECT_GE(r.report.best_epoch, 1);
    for (const auto& id : r.report.held_identities) EXPECT_EQ(r.report.train_identities.count(id), 0u);
}

TEST(TemporalTraining, DeterministicUnderFixedSeed) {
    const auto train = separable(4, 1, "t");
    const auto val = separable(2, 2, "h");
    auto c = tiny_config();
    c.max_epochs = 3;
    const auto a = train_temporal_fold(train, val, c, 1);
    const auto b = train_temporal_fold(train, val, c, 1);
    EXPECT_EQ(a.checkpoint.content_hash(), b.checkpoint.content_hash());
    EXPECT_EQ(a.report.best_val_loss, b.report.best_val_loss);
}

TEST(TemporalTraining, LeakAndEmptyRejected) {
    const auto train = separable(2, 1, "t");
    EXPECT_THROW(train_temporal_fold(train, train, tiny_config(), 0), IdentityLeakError);
    EXPECT_THROW(train_temporal_fold(train, {}, tiny_config(), 0), EmptyDataset);
}

TEST(TemporalTraining, FiveFoldCvOverStore) {
    testkit::TempDir dir;
    frame::EmbeddingStore store(dir.path(), "fp");
    std::vector<manifest::VideoRecord> records;
    Rng rng(9);
    for (int i = 0; i < 10; ++i) {
        for (int v = 0; v < 2; ++v) {
            manifest::VideoRecord r;
            r.identity_id = "p" + std::to_string(i);
            r.video_id = r.identity_id + "_" + std::to_string(v);
            r.path = r.video_id + ".mp4";
            r.dataset_version = "x";
            if (v == 1) {
                r.label = manifest::Label::fake;
                r.technique = manifest::Technique::face_swap;
                r.engine = "e";
            }
            records.push_back(r);
            frame::EmbeddingSequence s;
            s.video_id = r.video_id;
            s.embeddings = torch::randn({5, 4});
            s.embeddings.select(1, 0).add_(v ? 2.0 : -2.0);
            for (int k = 0; k < 5; ++k) s.timestamps.push_back(k * 0.2);
            s.label = v;
            s.identity_id = r.identity_id;
            s.binary_label = r.label;
            s.technique = r.technique;
            store.save(s);
        }
    }
    const manifest::DatasetManifest m(records, "x", manifest::ClassScheme::binary);
    auto c = tiny_config();
    c.max_epochs = 2;
    const auto folds = train_temporal_cv(store, m, c);
    ASSERT_EQ(folds.size(), 5u);
    manifest::IdentitySet held_union;
    for (const auto& f : folds) {
        for (const auto& id : f.report.held_identities) {
            EXPECT_EQ(f.report.train_identities.count(id), 0u);
            held_union.insert(id);
        }
        EXPECT_EQ(f.checkpoint.architecture, kTemporalArchitecture);
    }
    EXPECT_EQ(held_union.size(), 10u);
    std::vector<FoldReport> reports;
    for (const auto& f : folds) reports.push_back(f.report);
    const auto agg = aggregate_fold_reports(reports);
    EXPECT_EQ(agg.at("folds").get<int>(), 5);

    std::filesystem::remove(store.matrix_path("p3_0"));
    std::filesystem::remove(store.matrix_path("p7_1"));
    try {
        load_sequences(store, m);
        FAIL() << "expected MissingEmbeddings";
    } catch (const MissingEmbeddings& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("p3_0"), std::string::npos);
        EXPECT_NE(msg.find("p7_1"), std::string::npos);
    }
}
