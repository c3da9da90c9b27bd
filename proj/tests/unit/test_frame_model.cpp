#include <gtest/gtest.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "decay_bench/augment.hpp"
#include "decay_bench/baseline.hpp"
#include "decay_bench/embedding_store.hpp"
#include "decay_bench/errors.hpp"
#include "decay_bench/frame_model.hpp"
#include "decay_bench/resnet.hpp"
#include "decay_bench/util.hpp"
#include "test_support.hpp"

using namespace decay_bench;
using namespace decay_bench::frame;

namespace {

FrameModelConfig tiny_config() {
    FrameModelConfig c;
    c.init = InitKind::random;
    c.input_size = 32;
    c.batch_size = 16;
    c.max_epochs = 3;
    c.seed = 4;
    return c;
}

cv::Mat noise_image(cv::RNG& r, int side = 48) {
    cv::Mat m(side, side, CV_8UC3);
    r.fill(m, cv::RNG::UNIFORM, 60, 120);
    return m;
}

std::vector<cv::Mat> random_frames(int n, std::uint64_t seed) {
    cv::RNG r(seed);
    std::vector<cv::Mat> out;
    for (int i = 0; i < n; ++i) out.push_back(noise_image(r));
    return out;
}

}  // namespace

TEST(BuildFrameModel, FreezeMapExcludesFrozenBlocks) {
    auto m = build_frame_model(tiny_config());
    const auto fm = m.freeze_map();
    int frozen = 0;
    for (const auto& p : m.net()->named_parameters()) {
        const int block = ResNet50Impl::block_of(p.key());
        const bool want = block == 1 || block == 2;
        EXPECT_EQ(fm.at(p.key()), want) << p.key();
        EXPECT_EQ(p.value().requires_grad(), !want) << p.key();
        frozen += want;
    }
    EXPECT_GT(frozen, 0);
    EXPECT_EQ(fm.size(), m.net()->named_parameters().size());
}

TEST(BuildFrameModel, HeadSwapOnClassCountMismatch) {
    testkit::TempDir dir;
    auto base = build_frame_model(tiny_config());
    base.to_checkpoint().save(dir / "b.ckpt");
    auto cfg = tiny_config();
    cfg.init = InitKind::checkpoint;
    cfg.init_checkpoint = dir / "b.ckpt";
    cfg.num_classes = 4;
    auto m = build_frame_model(cfg);
    ASSERT_FALSE(m.warnings().empty());
    const auto a = base.to_checkpoint().state, b = m.to_checkpoint().state;
    EXPECT_TRUE(torch::equal(a.at("layer3.0.conv1.weight"), b.at("layer3.0.conv1.weight")));
    EXPECT_EQ(b.at("fc.weight").size(0), 4);
}

TEST(BuildFrameModel, WrongArchitectureIsIncompatible) {
    testkit::TempDir dir;
    auto ck = build_frame_model(tiny_config()).to_checkpoint();
    ck.architecture = "gru_temporal";
    ck.save(dir / "x.ckpt");
    auto cfg = tiny_config();
    cfg.init = InitKind::checkpoint;
    cfg.init_checkpoint = dir / "x.ckpt";
    EXPECT_THROW(build_frame_model(cfg), IncompatibleCheckpoint);
}

TEST(BuildFrameModel, MissingImagenetWeights) {
    auto cfg = tiny_config();
    cfg.init = InitKind::imagenet_pretrained;
    cfg.pretrained_weights = "/nonexistent/imagenet.pt";
    EXPECT_THROW(build_frame_model(cfg), AssetMissing);
}

TEST(FrameModelConfig, ValidateAndRoundTrip) {
    auto c = tiny_config();
    c.frozen_blocks = {1, 3};
    EXPECT_EQ(FrameModelConfig::from_json(c.to_json()).to_json(), c.to_json());
    c.num_classes = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.frozen_blocks = {5};
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.learning_rate = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
    testkit::TempDir dir;
    auto m = build_frame_model(tiny_config());
    const auto ck = m.to_checkpoint();
    ck.save(dir / "m.ckpt");
    const auto back = ModelCheckpoint::load(dir / "m.ckpt");
    EXPECT_EQ(back.content_hash(), ck.content_hash());
    EXPECT_EQ(back.freeze_map, ck.freeze_map);
    EXPECT_EQ(back.config, ck.config);
    atomic_write(dir / "bad.ckpt", "nope");
    EXPECT_THROW(ModelCheckpoint::load(dir / "bad.ckpt"), IncompatibleCheckpoint);
}

TEST(PredictFrames, RowsAreProbabilitiesAndDeterministic) {
    auto m = build_frame_model(tiny_config());
    auto frames = random_frames(5, 1);
    frames.push_back(frames[2].clone());
    const auto p = predict_frames(m, frames);
    ASSERT_EQ(p.size(0), 6);
    ASSERT_EQ(p.size(1), 2);
    EXPECT_TRUE(p.ge(0).all().item<bool>());
    EXPECT_LT((p.sum(1) - 1).abs().max().item<double>(), 1e-6);
    EXPECT_TRUE(torch::equal(p[2], p[5]));
    EXPECT_TRUE(torch::equal(p, predict_frames(m, frames)));
    EXPECT_THROW(predict_frames(m, std::vector<cv::Mat>{}), PreconditionError);
}

TEST(AggregateVideo, Examples) {
    auto p = torch::tensor({0.2, 0.8, 0.4, 0.6}, torch::kFloat64).reshape({2, 2});
    const auto a = aggregate_video(p);
    EXPECT_NEAR(a[0], 0.3, 1e-15);
    EXPECT_NEAR(a[1], 0.7, 1e-15);
    const auto one = aggregate_video(torch::tensor({0.9, 0.1}, torch::kFloat64).reshape({1, 2}));
    EXPECT_EQ(one[0], 0.9);
    EXPECT_EQ(one[1], 0.1);
    const auto same = aggregate_video(torch::tensor({0.25, 0.75}, torch::kFloat64).repeat({50, 1}));
    EXPECT_EQ(same[0], 0.25);
    EXPECT_EQ(same[1], 0.75);
    EXPECT_THROW(aggregate_video(torch::empty({0, 2}, torch::kFloat64)), EmptyInput);
}

TEST(AggregateVideo, PermutationInvariant) {
    auto p = torch::softmax(torch::randn({7, 3}, torch::kFloat64), 1);
    const auto perm = torch::randperm(7);
    const auto a = aggregate_video(p), b = aggregate_video(p.index_select(0, perm));
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(a[j], b[j], 1e-15);
}

TEST(ExtractEmbeddings, ShapeOrderAndDeterminism) {
    auto m = build_frame_model(tiny_config());
    auto frames = random_frames(20, 2);
    frames[7] = frames[3].clone();
    const auto e = extract_embeddings(m, frames);
    ASSERT_EQ(e.size(0), 20);
    ASSERT_EQ(e.size(1), 2048);
    EXPECT_TRUE(torch::equal(e[3], e[7]));
    std::vector<cv::Mat> rev(frames.rbegin(), frames.rend());
    const auto r = extract_embeddings(m, rev);
    for (int i = 0; i < 20; ++i)
        EXPECT_LT((r[i] - e[19 - i]).abs().max().item<double>(), 1e-4 * (1 + e[19 - i].abs().max().item<double>()));
    // The head on embeddings reproduces the full forward pass.
    EXPECT_LT((apply_head(m, e) - predict_frames(m, frames)).abs().max().item<double>(), 1e-5);
}

TEST(Augmentation, PolicyValidation) {
    AugmentationPolicy p;
    p.validate();
    EXPECT_EQ(AugmentationPolicy::from_json(p.to_json()).to_json(), p.to_json());
    p.flip_p = 1.5;
    EXPECT_THROW(p.validate(), ConfigError);
    p = AugmentationPolicy{};
    p.scale_min = 1.3;
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Augmentation, KeepsGeometryAndIsSeeded) {
    cv::RNG r(3);
    const auto img = noise_image(r);
    AugmentationPolicy p;
    Rng a(9), b(9);
    const auto x = augment_image(img, p, a), y = augment_image(img, p, b);
    EXPECT_EQ(x.size(), img.size());
    EXPECT_EQ(x.type(), img.type());
    EXPECT_EQ(cv::norm(x, y, cv::NORM_INF), 0.0);
    Rng c(1);
    EXPECT_EQ(cv::norm(augment_image(img, AugmentationPolicy::none(), c), img, cv::NORM_INF), 0.0);
}

TEST(TrainFrameModel, SeparableMarkerIsLearned) {
    testkit::TempDir dir;
    const auto tr = testkit::marker_index(dir / "tr", {"p0", "p1", "p2", "p3", "p4", "p5"}, 2, 4, 1);
    const auto va = testkit::marker_index(dir / "va", {"p6", "p7"}, 2, 4, 2);
    auto cfg = tiny_config();
    cfg.max_epochs = 6;
    cfg.learning_rate = 1e-3;
    cfg.early_stop_patience = 10;
    const auto res = train_frame_model(tr, va, cfg, AugmentationPolicy::none());
    ASSERT_GE(res.history.size(), 3u);
    EXPECT_LT(res.history[1].train_loss, res.history[0].train_loss);
    EXPECT_LT(res.history.back().train_loss, 0.1 * res.history[0].train_loss);
    auto best = res.history[res.best_epoch - 1];
    EXPECT_GT(best.val_accuracy, 0.9);
    // Frozen blocks never move.
    const auto init = build_frame_model(cfg).to_checkpoint();
    for (const auto& [name, t] : init.state) {
        const int block = ResNet50Impl::block_of(name);
        if (block == 1 || block == 2) EXPECT_TRUE(torch::equal(t, res.checkpoint.state.at(name))) << name;
    }
}

TEST(TrainFrameModel, LeakEmptyAndZeroEpochs) {
    testkit::TempDir dir;
    const auto tr = testkit::marker_index(dir / "tr", {"p1", "p3"}, 2, 2, 1);
    const auto va = testkit::marker_index(dir / "va", {"p3", "p9"}, 2, 2, 2);
    EXPECT_THROW(train_frame_model(tr, va, tiny_config(), AugmentationPolicy::none()), IdentityLeakError);
    EXPECT_THROW(train_frame_model(tr, extraction::FrameIndex{}, tiny_config(), AugmentationPolicy::none()),
                 EmptyDataset);
    auto cfg = tiny_config();
    cfg.max_epochs = 0;
    const auto ok_va = va.restrict_to({"p9"});
    const auto res = train_frame_model(tr, ok_va, cfg, AugmentationPolicy::none());
    EXPECT_EQ(res.checkpoint.epochs_trained, 0);
    const auto init = build_frame_model(cfg).to_checkpoint();
    for (const auto& [name, t] : init.state) EXPECT_TRUE(torch::equal(t, res.checkpoint.state.at(name))) << name;
}

TEST(EmbeddingStore, NpyRoundTripAndMissing) {
    testkit::TempDir dir;
    EmbeddingStore store(dir.path(), "fp1");
    EmbeddingSequence s;
    s.video_id = "v1";
    s.embeddings = torch::randn({5, 7});
    s.timestamps = {0, 0.2, 0.4, 0.6, 0.8};
    s.label = 1;
    s.identity_id = "p1";
    s.binary_label = manifest::Label::fake;
    s.technique = manifest::Technique::lip_sync;
    store.save(s);
    ASSERT_TRUE(store.contains("v1"));
    const auto back = store.load("v1");
    EXPECT_TRUE(torch::equal(back.embeddings, s.embeddings));
    EXPECT_EQ(back.timestamps, s.timestamps);
    EXPECT_EQ(back.identity_id, "p1");
    EXPECT_EQ(back.technique, manifest::Technique::lip_sync);
    EXPECT_THROW(store.load("v2"), MissingEmbeddings);
    // The matrix file is a plain .npy readable on its own.
    EXPECT_TRUE(torch::equal(read_npy(store.matrix_path("v1")), s.embeddings));
    const auto header = read_file(store.matrix_path("v1")).substr(0, 6);
    EXPECT_EQ(header, std::string("\x93NUMPY"));
}

TEST(BaselineExtractor, MissingAssetAndTrainedEmbedder) {
    EXPECT_THROW(BaselineExtractor::load("/nonexistent/embedder.ckpt"), AssetMissing);
    testkit::TempDir dir;
    // Real frames only; identities are told apart by background tone.
    cv::RNG r(5);
    extraction::FrameIndex idx;
    for (int id = 0; id < 3; ++id) {
        for (int k = 0; k < 6; ++k) {
            cv::Mat img(48, 48, CV_8UC3, cv::Scalar(40 + 80 * id, 100, 200 - 60 * id));
            cv::Mat n(48, 48, CV_8UC3);
            r.fill(n, cv::RNG::UNIFORM, 0, 20);
            img += n;
            const auto path = dir / ("i" + std::to_string(id) + "_" + std::to_string(k) + ".png");
            cv::imwrite(path.string(), img);
            extraction::FrameEntry e;
            e.video_id = "v" + std::to_string(id);
            e.frame = static_cast<std::size_t>(k);
            e.image_path = path;
            e.identity_id = "p" + std::to_string(id);
            idx.entries.push_back(e);
        }
    }
    IdentityEmbedderConfig cfg;
    cfg.input_size = 32;
    cfg.embedding_dim = 16;
    cfg.epochs = 2;
    train_identity_embedder(idx, cfg).save(dir / "emb.ckpt");
    auto ex = BaselineExtractor::load(dir / "emb.ckpt");
    EXPECT_EQ(ex.dim(), 16);
    auto frames = random_frames(20, 8);
    frames[4] = frames[11].clone();
    const auto e = ex.embed(frames);
    ASSERT_EQ(e.size(0), 20);
    ASSERT_EQ(e.size(1), 16);
    EXPECT_TRUE(torch::equal(e[4], e[11]));
    EXPECT_TRUE(torch::equal(e, ex.embed(frames)));
}
