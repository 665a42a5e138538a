// Micro benchmarks for the hot paths: metrics, recurrent forward passes,
// one training step of each loss, and ancestral sampling.

#include "tadiff/diffusion.hpp"
#include "tadiff/downstream.hpp"
#include "tadiff/toy.hpp"

#include <benchmark/benchmark.h>

using namespace tadiff;

namespace {

Cohort toy_cohort(int n) {
    ToyPreset p = default_toy_preset();
    p.n = n;
    return normalize(synth_toy_cohort(p, 1));
}

void BM_Auroc(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    RngStream rng(1);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.normal();
        y[i] = rng.bernoulli(0.3) ? 1 : 0;
    }
    y[0] = 0;
    y[1] = 1;
    for (auto _ : state) benchmark::DoNotOptimize(auroc(s, y));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

void BM_MmdBiased(benchmark::State& state) {
    const auto b = state.range(0);
    RngStream rng(2);
    const Matrix x = rng.normal_matrix(b, 32), y = rng.normal_matrix(b, 32);
    for (auto _ : state) benchmark::DoNotOptimize(mmd_biased(x, y, 4.0));
}
BENCHMARK(BM_MmdBiased)->Arg(32)->Arg(64)->Arg(256);

void BM_ClassifierPredict(benchmark::State& state) {
    const Cohort c = toy_cohort(static_cast<int>(state.range(0)));
    RngStream rng(3);
    const GruClassifier m = GruClassifier::init(c.meta.features, 64, rng);
    for (auto _ : state) benchmark::DoNotOptimize(predict(c, m));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ClassifierPredict)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_VaeLossBackward(benchmark::State& state) {
    const Cohort c = toy_cohort(64);
    RngStream init(4);
    VaeParams p = VaeParams::init({c.meta.features, 32, 64}, init);
    const VaeWeights w{0.1, state.range(0) ? 0.1 : 0.0, state.range(0) ? 0.1 : 0.0, 0.1, 0.0};
    for (auto _ : state) {
        RngStream r(5);
        p.params.zero_grad();
        benchmark::DoNotOptimize(vae_loss_enhanced(c.records, p, w, r, true));
    }
}
BENCHMARK(BM_VaeLossBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DiffusionLossBackward(benchmark::State& state) {
    RngStream rng(6);
    std::vector<Matrix> z;
    std::vector<Condition> conds;
    for (int i = 0; i < 64; ++i) {
        z.push_back(rng.normal_matrix(8, 32));
        conds.push_back(Condition{Demographics::from_index(i % kSubgroups), i % 2});
    }
    DenoiserParams p = DenoiserParams::init({32, 64, 32, 32}, rng);
    const auto s = make_schedule(100, 1e-3, 0.2);
    const DiffusionWeights w{state.range(0) ? 0.1 : 0.0, state.range(0) ? 0.1 : 0.0, 0.1, 0.0};
    for (auto _ : state) {
        RngStream r(7);
        p.params.zero_grad();
        benchmark::DoNotOptimize(diffusion_loss_enhanced(z, conds, p, s, w, 0.1, r, true));
    }
}
BENCHMARK(BM_DiffusionLossBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SampleLatents(benchmark::State& state) {
    RngStream rng(8);
    GeneratorBundle b;
    b.meta.steps = 8;
    b.denoiser = DenoiserParams::init({32, 64, 32, 32}, rng);
    b.schedule = make_schedule(100, 1e-3, 0.2);
    std::vector<Condition> conds;
    for (int i = 0; i < state.range(0); ++i) conds.push_back(Condition{Demographics::from_index(i % kSubgroups), i % 2});
    for (auto _ : state) {
        RngStream r(9);
        benchmark::DoNotOptimize(sample_latents(conds, b, r));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SampleLatents)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
