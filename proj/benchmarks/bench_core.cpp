#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "decay_bench/evaluation.hpp"
#include "decay_bench/frame_model.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/temporal.hpp"

using namespace decay_bench;

namespace {

void random_scores(std::size_t n, std::vector<double>& s, std::vector<int>& y) {
    Rng rng(1);
    s.resize(n);
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.uniform(0.0, 1.0) < 0.5;
        s[i] = rng.uniform(0.0, 1.0) + 0.3 * y[i];
    }
}

void BM_Auroc(benchmark::State& st) {
    std::vector<double> s;
    std::vector<int> y;
    random_scores(static_cast<std::size_t>(st.range(0)), s, y);
    for (auto _ : st) benchmark::DoNotOptimize(eval::auroc(s, y));
    st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(8)->Range(64, 1 << 18)->Complexity();

void BM_PrCurve(benchmark::State& st) {
    std::vector<double> s;
    std::vector<int> y;
    random_scores(static_cast<std::size_t>(st.range(0)), s, y);
    for (auto _ : st) benchmark::DoNotOptimize(eval::pr_curve(s, y));
}
BENCHMARK(BM_PrCurve)->Arg(1 << 12)->Arg(1 << 16);

void BM_StandardizeTrain(benchmark::State& st) {
    torch::manual_seed(0);
    const auto seq = torch::randn({st.range(0), 2048});
    std::uint64_t seed = 0;
    for (auto _ : st) benchmark::DoNotOptimize(temporal::standardize_length(seq, 30, temporal::Mode::train, ++seed));
}
BENCHMARK(BM_StandardizeTrain)->Arg(10)->Arg(30)->Arg(50);

void BM_MaskFeatures(benchmark::State& st) {
    torch::manual_seed(0);
    const auto seq = torch::randn({30, 2048});
    int epoch = 0;
    for (auto _ : st) benchmark::DoNotOptimize(temporal::mask_features(seq, 0.1, 7, "video", ++epoch));
}
BENCHMARK(BM_MaskFeatures);

void BM_AggregateVideo(benchmark::State& st) {
    const auto p = torch::softmax(torch::randn({50, 2}, torch::kFloat64), 1);
    for (auto _ : st) benchmark::DoNotOptimize(frame::aggregate_video(p));
}
BENCHMARK(BM_AggregateVideo);

void BM_Pca(benchmark::State& st) {
    torch::manual_seed(0);
    const auto data = torch::randn({st.range(0), 2048}, torch::kFloat64);
    for (auto _ : st) benchmark::DoNotOptimize(eval::pca_features(data, 2));
}
BENCHMARK(BM_Pca)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
