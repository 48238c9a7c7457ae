#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ostream>

#include "magicnet/eval.hpp"
#include "magicnet/features.hpp"

namespace magicnet {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

RtfReport measure_rtf(const MagicNetConfig& config, const ModelWeights<float>& weights,
                      std::span<const float> samples, int repetitions) {
  const double audio_s = static_cast<double>(samples.size()) / kSampleRateHz;
  if (audio_s < 10.0)
    throw ArgumentError("measure_rtf: need at least 10 s of audio, got " +
                        std::to_string(audio_s) + " s");
  if (repetitions < 3)
    throw ArgumentError("measure_rtf: need at least 3 repetitions, got " +
                        std::to_string(repetitions));

  struct Run {
    double features_s = 0.0;
    double network_s = 0.0;
    double wall_s() const { return features_s + network_s; }
  };
  std::vector<Run> runs(repetitions);

  const FeatureConfig fc;
  const int n_mels = fc.n_mels;
  std::vector<float> frames;  // frame-major buffer filled by the streaming extractor
  frames.reserve(frame_count(samples.size(), fc) * n_mels);

  for (Run& run : runs) {
    frames.clear();
    StreamingFbank<float> fbank(fc);
    std::vector<float> coeffs(n_mels);
    auto t0 = std::chrono::steady_clock::now();
    for (float s : samples) {
      if (fbank.push(s, coeffs.data())) frames.insert(frames.end(), coeffs.begin(), coeffs.end());
    }
    run.features_s = seconds_since(t0);

    StreamState<float> state = make_stream_state(config, weights);
    float prob = 0.0f;
    t0 = std::chrono::steady_clock::now();
    for (size_t f = 0; f + n_mels <= frames.size(); f += n_mels) {
      stream_push(state, std::span<const float>(frames.data() + f, n_mels), &prob);
    }
    run.network_s = seconds_since(t0);
  }

  std::sort(runs.begin(), runs.end(),
            [](const Run& a, const Run& b) { return a.wall_s() < b.wall_s(); });
  const Run& median = runs[runs.size() / 2];

  RtfReport report;
  report.audio_s = audio_s;
  report.features_s = median.features_s;
  report.network_s = median.network_s;
  report.wall_s = median.wall_s();
  report.rtf = report.wall_s / audio_s;
  report.repetitions = repetitions;
  return report;
}

void write_rtf_report(std::ostream& out, const RtfReport& r) {
  char buf[48];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };
  out << "audio_s=" << fmt(r.audio_s) << '\n';
  out << "wall_s=" << fmt(r.wall_s) << '\n';
  out << "rtf=" << fmt(r.rtf) << '\n';
  out << "features_s=" << fmt(r.features_s) << '\n';
  out << "network_s=" << fmt(r.network_s) << '\n';
  out << "features_rtf=" << fmt(r.features_s / r.audio_s) << '\n';
  out << "network_rtf=" << fmt(r.network_s / r.audio_s) << '\n';
  out << "repetitions=" << r.repetitions << '\n';
}

}  // namespace magicnet
