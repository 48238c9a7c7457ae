#include "magicnet/features.hpp"

#include <cstdio>
#include <fstream>

namespace magicnet {

void FeatureConfig::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("sample_rate_hz must be positive");
  if (frame_len_ms <= 0 || hop_ms <= 0) throw ConfigError("frame/hop length must be positive");
  if (hop_ms > frame_len_ms) throw ConfigError("hop must not exceed frame length");
  if (n_mels <= 0) throw ConfigError("n_mels must be positive");
  if (fft_size < frame_len() || (fft_size & (fft_size - 1)) != 0)
    throw ConfigError("fft_size must be a power of two >= frame length, got " +
                      std::to_string(fft_size) + " for frame length " +
                      std::to_string(frame_len()));
  if (f_min_hz < 0.0 || f_max_hz <= f_min_hz)
    throw ConfigError("need 0 <= f_min < f_max");
  if (f_max_hz > sample_rate_hz / 2.0)
    throw ConfigError("f_max exceeds Nyquist frequency");
  if (log_floor <= 0.0) throw ConfigError("log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor<double> mel_filterbank(const FeatureConfig& config) {
  config.validate();
  const int bins = config.fft_size / 2 + 1;
  const int n = config.n_mels;
  Tensor<double> fb({static_cast<uint32_t>(n), static_cast<uint32_t>(bins)});

  // n + 2 boundary points uniform in mel between f_min and f_max.
  const double mel_lo = hz_to_mel(config.f_min_hz);
  const double mel_hi = hz_to_mel(config.f_max_hz);
  std::vector<double> hz(n + 2);
  for (int i = 0; i < n + 2; ++i)
    hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n + 1));

  const double bin_hz = static_cast<double>(config.sample_rate_hz) / config.fft_size;
  for (int m = 0; m < n; ++m) {
    const double left = hz[m], center = hz[m + 1], right = hz[m + 2];
    double weight_sum = 0.0;
    for (int b = 0; b < bins; ++b) {
      const double f = b * bin_hz;
      double w = 0.0;
      if (f > left && f < center) {
        w = (f - left) / (center - left);
      } else if (f >= center && f < right) {
        w = (right - f) / (right - center);
      }
      fb.data[static_cast<size_t>(m) * bins + b] = w;
      weight_sum += w;
    }
    if (weight_sum <= 0.0)
      throw ConfigError("mel filter " + std::to_string(m) +
                        " has empty support; increase fft_size or widen the band");
  }
  return fb;
}

size_t frame_count(size_t n_samples, const FeatureConfig& config) {
  config.validate();
  const size_t flen = static_cast<size_t>(config.frame_len());
  if (n_samples < flen) return 0;
  return (n_samples - flen) / static_cast<size_t>(config.hop()) + 1;
}

template <typename Real>
void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix<Real>& features) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot open " + path.string() + " for writing");
  char buf[48];
  for (int64_t t = 0; t < features.data.time; ++t) {
    for (int64_t m = 0; m < features.data.channels; ++m) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(features.data.at(m, t)));
      if (m) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw ArgumentError("failed writing " + path.string());
}

template void write_feature_csv<float>(const std::filesystem::path&, const FeatureMatrix<float>&);
template void write_feature_csv<double>(const std::filesystem::path&, const FeatureMatrix<double>&);

}  // namespace magicnet
