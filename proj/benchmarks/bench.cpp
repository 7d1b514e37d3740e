#include <benchmark/benchmark.h>

#include "ssigan/dataio.hpp"
#include "ssigan/model.hpp"
#include "ssigan/signal.hpp"
#include "ssigan/train.hpp"

using namespace ssigan;

namespace {

RawRecording noisy_recording(std::int64_t seconds) {
  SyntheticClassProfile profile;
  return generate_synthetic_recording(profile, static_cast<double>(seconds),
                                      123);
}

ad::Tensor random_input(ad::Shape shape, double sd, std::uint64_t seed) {
  ad::Tensor t(std::move(shape));
  Rng rng(seed);
  for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal(0.0, sd);
  return t;
}

}  // namespace

static void BM_HighpassFilter(benchmark::State& state) {
  const FilterCoefficients coeffs =
      design_highpass_butterworth({700.0, 4, 30000.0});
  const RawRecording rec = noisy_recording(1);
  for (auto _ : state) {
    RawRecording out = apply_filter(coeffs, rec);
    benchmark::DoNotOptimize(out.samples.data());
  }
  state.SetItemsProcessed(state.iterations() * rec.samples.size());
}
BENCHMARK(BM_HighpassFilter)->Unit(benchmark::kMillisecond);

static void BM_WindowAttentionForward(benchmark::State& state) {
  const int heads = 4, hs = 64, embed = 64;
  Rng rng(7);
  AttentionWeights w;
  w.wq = random_input({embed, heads * hs}, 0.05, 1);
  w.bq = random_input({heads * hs}, 0.05, 2);
  w.wk = random_input({embed, heads * hs}, 0.05, 3);
  w.bk = random_input({heads * hs}, 0.05, 4);
  w.wv = random_input({embed, heads * hs}, 0.05, 5);
  w.bv = random_input({heads * hs}, 0.05, 6);
  w.wo = random_input({heads * hs, embed}, 0.05, 7);
  w.bo = random_input({embed}, 0.05, 8);
  const ad::Tensor x = random_input({32, 100, embed}, 1.0, 9);
  const int shift = static_cast<int>(state.range(0));
  for (auto _ : state) {
    ad::Tensor out = window_attention(nullptr, x, w, 10, shift, heads, hs);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_WindowAttentionForward)->Arg(0)->Arg(5)->Unit(benchmark::kMillisecond);

static void BM_GeneratorForward(benchmark::State& state) {
  const ModelConfig config;
  Generator g(config, 11);
  Rng dropout_rng(1);
  const ad::Tensor z =
      random_input({state.range(0), config.noise_dim}, 1.0, 12);
  for (auto _ : state) {
    ad::Tensor out = g.forward(nullptr, z, ad::Mode::kInference, dropout_rng);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_GeneratorForward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_DiscriminatorForward(benchmark::State& state) {
  const ModelConfig config;
  Discriminator d(config, 13);
  Rng dropout_rng(2);
  const ad::Tensor x = random_input({state.range(0), 100, 60}, 0.3, 14);
  for (auto _ : state) {
    ad::Tensor logits = d.forward(nullptr, x, ad::Mode::kInference, dropout_rng);
    benchmark::DoNotOptimize(logits.data());
  }
}
BENCHMARK(BM_DiscriminatorForward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_AdamStep(benchmark::State& state) {
  const ModelConfig config;
  Discriminator d(config, 15);
  std::vector<ad::Tensor> params = d.parameters();
  AdamOptimizer opt(params, 1e-3);
  Rng rng(16);
  for (ad::Tensor& p : params) {
    p.node->ensure_grad();
    for (double& g : p.node->grad) g = rng.normal(0.0, 0.01);
  }
  for (auto _ : state) opt.step();
  std::int64_t n = 0;
  for (const ad::Tensor& p : params) n += p.size();
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_AdamStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
