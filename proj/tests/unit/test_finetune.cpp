#include <gtest/gtest.h>

#include <cmath>

#include "decay_bench/errors.hpp"
#include "decay_bench/evaluation.hpp"
#include "decay_bench/finetune.hpp"
#include "decay_bench/resnet.hpp"
#include "decay_bench/util.hpp"
#include "test_support.hpp"

using namespace decay_bench;
using namespace decay_bench::finetune;

namespace {

std::vector<std::string> ids(const std::string& prefix, int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

frame::FrameModelConfig recipe() {
    frame::FrameModelConfig c;
    c.init = frame::InitKind::random;
    c.input_size = 32;
    c.batch_size = 16;
    c.max_epochs = 2;
    c.seed = 2;
    return c;
}

struct World {
    testkit::TempDir dir{"decay_bench_ft"};
    extraction::FrameIndex index;
    manifest::DatasetManifest manifest;
    fs::path base;

    World(int train_ids, int test_ids, int frames) {
        auto all = ids("t", train_ids);
        const auto test = ids("e", test_ids);
        all.insert(all.end(), test.begin(), test.end());
        index = testkit::marker_index(dir / "frames", all, 2, frames, 7);
        manifest = testkit::manifest_for(index, manifest::IdentitySet(test.begin(), test.end()));
        base = dir / "base.ckpt";
        frame::build_frame_model(recipe()).to_checkpoint().save(base);
    }
};

FinetunePlan plan_for(const World& w) {
    FinetunePlan p;
    p.inits = {{"prior", frame::InitKind::checkpoint, w.base, {}}};
    p.recipe = recipe();
    p.augmentation = frame::AugmentationPolicy::none();
    p.learning_rate = 1e-3;
    return p;
}

bool only_block4_and_head_differ(const ModelCheckpoint& a, const ModelCheckpoint& b, int* changed = nullptr) {
    int n = 0;
    for (const auto& [name, t] : a.state) {
        const int block = frame::ResNet50Impl::block_of(name);
        const bool same = torch::equal(t, b.state.at(name));
        if (block >= 1 && block <= 3 && !same) return false;
        n += !same;
    }
    if (changed) *changed = n;
    return true;
}

}  // namespace

TEST(FinetunePlan, Validation) {
    FinetunePlan p;
    EXPECT_THROW(p.validate(), ConfigError);
    const BaseInit generic{"generic", frame::InitKind::random, {}, {}};
    p.inits = {generic};
    p.validate();
    EXPECT_EQ(FinetunePlan::from_json(p.to_json()).to_json(), p.to_json());
    p.identity_fractions = {0.5, 0.2};
    EXPECT_THROW(p.validate(), ConfigError);
    p.identity_fractions = {0.5, 1.5};
    EXPECT_THROW(p.validate(), ConfigError);
    p.identity_fractions = {0.0};
    EXPECT_THROW(p.validate(), ConfigError);
    p = FinetunePlan{};
    p.inits = {generic};
    p.learning_rate = 0;
    EXPECT_THROW(p.validate(), ConfigError);
    EXPECT_EQ(FinetunePlan{}.learning_rate, 2e-5);
    EXPECT_EQ(frozen_blocks(TrainableScope::block4_and_head), (std::set<int>{1, 2, 3}));
}

TEST(Finetune, ZeroEpochsKeepsBase) {
    World w(6, 2, 2);
    auto plan = plan_for(w);
    plan.recipe.max_epochs = 0;
    const auto train = w.manifest.partition(manifest::Split::train);
    const auto res = finetune_frame_model(plan.inits[0], w.index, train, plan, 0);
    const auto base = ModelCheckpoint::load(w.base);
    for (const auto& [name, t] : base.state) EXPECT_TRUE(torch::equal(t, res.checkpoint.state.at(name))) << name;
}

TEST(Finetune, OnlyBlockFourAndHeadMove) {
    World w(6, 2, 3);
    const auto plan = plan_for(w);
    const auto train = w.manifest.partition(manifest::Split::train);
    const auto res = finetune_frame_model(plan.inits[0], w.index, train, plan, 0);
    int changed = 0;
    EXPECT_TRUE(only_block4_and_head_differ(ModelCheckpoint::load(w.base), res.checkpoint, &changed));
    EXPECT_GT(changed, 0);
    const auto cfg = finetune_config(plan, plan.inits[0], 0);
    EXPECT_EQ(cfg.frozen_blocks, (std::set<int>{1, 2, 3}));
    EXPECT_EQ(cfg.learning_rate, plan.learning_rate);
}

TEST(Finetune, DifferentInitsShareFreezeMap) {
    World w(6, 2, 2);
    auto plan = plan_for(w);
    plan.recipe.max_epochs = 1;
    const auto train = w.manifest.partition(manifest::Split::train);
    const BaseInit generic{"generic", frame::InitKind::random, {}, {}};
    const auto a = finetune_frame_model(plan.inits[0], w.index, train, plan, 0);
    auto other_recipe = plan;
    other_recipe.recipe.seed = 99;
    const auto b = finetune_frame_model(generic, w.index, train, other_recipe, 0);
    EXPECT_EQ(a.checkpoint.freeze_map, b.checkpoint.freeze_map);
    EXPECT_NE(a.checkpoint.content_hash(), b.checkpoint.content_hash());
}

TEST(Finetune, SubsetOverlappingEvalIsLeak) {
    World w(6, 2, 2);
    const auto plan = plan_for(w);
    const auto test = w.manifest.partition(manifest::Split::test);
    EXPECT_THROW(finetune_frame_model(plan.inits[0], w.index, w.manifest, plan, 0, &test),
                 IdentityLeakError);
}

TEST(DecaySweep, SingleCellPlusZeroShot) {
    World w(6, 2, 2);
    auto plan = plan_for(w);
    plan.identity_fractions = {1.0};
    plan.seeds = {0};
    plan.recipe.max_epochs = 1;
    SweepOptions opts;
    opts.output_dir = w.dir / "sweep";
    const auto test = w.manifest.partition(manifest::Split::test);
    const auto r = run_decay_sweep(plan, w.manifest, w.index, test, opts);
    ASSERT_EQ(r.cells.size(), 1u);
    EXPECT_TRUE(r.cells[0].ok) << r.cells[0].error_message;
    EXPECT_TRUE(r.zero_shot.ok);
    ASSERT_TRUE(r.zero_shot.report.has_value());
    EXPECT_FALSE(r.zero_shot.report->pr.empty());
    EXPECT_FALSE(r.cells[0].report->pr.empty());
    EXPECT_TRUE(fs::exists(opts.output_dir / "sweep_summary.json"));
    EXPECT_TRUE(fs::exists(opts.output_dir / "cells" / r.cells[0].cell_name() / "model.ckpt"));

    // The zero-shot row is a plain evaluation of the base checkpoint.
    auto base = frame::FrameModel::from_checkpoint(ModelCheckpoint::load(w.base));
    const auto direct = eval::evaluate_predictions(eval::predict_frame_model(base, w.index, test));
    EXPECT_EQ(direct.to_json()["confusion"], r.zero_shot.report->to_json()["confusion"]);
    EXPECT_EQ(direct.auroc, r.zero_shot.report->auroc);
}

TEST(DecaySweep, FullGridWithFailingInitIsolated) {
    World w(20, 3, 1);
    auto plan = plan_for(w);
    plan.recipe.max_epochs = 0;
    atomic_write(w.dir / "corrupt.ckpt", "not a checkpoint");
    plan.inits.push_back({"corrupt", frame::InitKind::checkpoint, w.dir / "corrupt.ckpt", {}});
    SweepOptions opts;
    opts.output_dir = w.dir / "grid";
    const auto r = run_decay_sweep(plan, w.manifest, w.index, w.manifest.partition(manifest::Split::test), opts);
    ASSERT_EQ(r.cells.size(), 24u);
    EXPECT_EQ(r.target_identities, 20u);
    EXPECT_EQ(r.failed(), 12u);
    std::set<std::string> names;
    for (const auto& c : r.cells) {
        names.insert(c.cell_name());
        if (c.init == "corrupt") {
            EXPECT_FALSE(c.ok);
            EXPECT_EQ(c.error_kind, "IncompatibleCheckpoint");
            continue;
        }
        EXPECT_TRUE(c.ok) << c.cell_name() << ": " << c.error_message;
        const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(c.fraction * 20 + 0.5)));
        EXPECT_EQ(c.identities.size(), want) << c.cell_name();
        for (const auto& id : c.identities) EXPECT_EQ(id[0], 't');
    }
    EXPECT_EQ(names.size(), 24u);
    const auto summary = read_json(opts.output_dir / "sweep_summary.json");
    EXPECT_EQ(summary.at("cells").size(), 24u);
    EXPECT_EQ(summary.at("failed_cells"), 12);
}

TEST(DecaySweep, SubsetIsSharedAcrossInits) {
    World w(10, 2, 1);
    auto plan = plan_for(w);
    plan.recipe.max_epochs = 0;
    plan.inits.push_back({"generic", frame::InitKind::random, {}, {}});
    plan.identity_fractions = {0.5};
    plan.seeds = {3};
    SweepOptions opts;
    opts.output_dir = w.dir / "shared";
    const auto r = run_decay_sweep(plan, w.manifest, w.index, w.manifest.partition(manifest::Split::test), opts);
    ASSERT_EQ(r.cells.size(), 2u);
    EXPECT_EQ(r.cells[0].identities, r.cells[1].identities);
}
