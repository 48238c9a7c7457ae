// Network throughput: batch inference, per-frame streaming, and one
// training step (forward + backward + Adam).

#include <benchmark/benchmark.h>

#include <span>
#include <vector>

#include "magicnet/model.hpp"
#include "magicnet/rng.hpp"

using namespace magicnet;

namespace {

Tensor2D<float> random_features(const MagicNetConfig& config, int64_t frames) {
  Rng rng(7);
  Tensor2D<float> m(config.n_mels, frames);
  for (float& v : m.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  return m;
}

}  // namespace

static void BM_forward_batch(benchmark::State& state) {
  const MagicNetConfig config;
  const ModelWeights<float> weights = build_weights<float>(config, 1);
  const int64_t frames = state.range(0);
  const Tensor2D<float> features = random_features(config, frames);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_batch(config, weights, features));
  }
  state.SetItemsProcessed(state.iterations() * frames);  // items are input frames
}
BENCHMARK(BM_forward_batch)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

static void BM_stream_push(benchmark::State& state) {
  const MagicNetConfig config;
  const ModelWeights<float> weights = build_weights<float>(config, 1);
  StreamState<float> stream = make_stream_state(config, weights);
  std::vector<float> frame(config.n_mels, 0.3f);
  float prob = 0.0f;
  for (auto _ : state) {
    benchmark::DoNotOptimize(stream_push(stream, std::span<const float>(frame), &prob));
  }
  state.SetItemsProcessed(state.iterations());  // one 10 ms frame per iteration
}
BENCHMARK(BM_stream_push);

static void BM_train_step(benchmark::State& state) {
  const MagicNetConfig config;
  ModelWeights<float> weights = build_weights<float>(config, 1);
  const int64_t frames = 200;
  const Tensor2D<float> features = random_features(config, frames);
  std::vector<float> targets(static_cast<size_t>(model_out_time(config, frames)));
  for (size_t i = 0; i < targets.size(); ++i) targets[i] = i % 2 ? 1.0f : 0.0f;

  AdamConfig adam;
  adam.lr = 1e-4;
  AdamState<float> adam_state;

  for (auto _ : state) {
    ModelCache<float> cache;
    const Tensor2D<float> logits = model_forward_train(config, weights, features, cache);
    const std::vector<float> dlog = bce_with_logits_grad<float>(
        std::span<const float>(logits.data.data(), logits.data.size()), targets);
    Tensor2D<float> dlogits(1, logits.time);
    dlogits.data = dlog;
    auto grads = backward_from_logits(config, weights, cache, dlogits);
    adam_step(adam_state, adam, weights.tensors, grads);
    benchmark::DoNotOptimize(weights);
  }
  state.SetItemsProcessed(state.iterations() * frames);
}
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
