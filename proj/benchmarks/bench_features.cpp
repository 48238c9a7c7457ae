// Feature-extraction throughput. Items are audio samples, so items/s can be
// read against the 16 kHz real-time line directly.

#include <benchmark/benchmark.h>

#include <vector>

#include "magicnet/features.hpp"
#include "magicnet/rng.hpp"

using namespace magicnet;

namespace {

std::vector<float> random_audio(double seconds) {
  Rng rng(99);
  std::vector<float> samples(static_cast<size_t>(seconds * FeatureConfig{}.sample_rate_hz));
  for (float& v : samples) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  return samples;
}

}  // namespace

static void BM_fbank_batch(benchmark::State& state) {
  const std::vector<float> audio = random_audio(10.0);
  const FbankExtractor<float> fbank;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fbank.extract(audio));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(audio.size()));
  state.counters["audio_s"] =
      benchmark::Counter(static_cast<double>(state.iterations()) * 10.0,
                         benchmark::Counter::kIsRate);
}
BENCHMARK(BM_fbank_batch)->Unit(benchmark::kMillisecond);

static void BM_fbank_stream(benchmark::State& state) {
  const std::vector<float> audio = random_audio(10.0);
  const FeatureConfig config;
  std::vector<float> frame(config.n_mels);
  for (auto _ : state) {
    StreamingFbank<float> fbank(config);
    int64_t frames = 0;
    for (const float s : audio)
      if (fbank.push(s, frame.data())) ++frames;
    benchmark::DoNotOptimize(frames);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(audio.size()));
  state.counters["audio_s"] =
      benchmark::Counter(static_cast<double>(state.iterations()) * 10.0,
                         benchmark::Counter::kIsRate);
}
BENCHMARK(BM_fbank_stream)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
