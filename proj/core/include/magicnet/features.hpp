#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <span>
#include <vector>

#include "magicnet/errors.hpp"
#include "magicnet/tensor.hpp"

namespace magicnet {

// Fbank40 front end: 25 ms frames every 10 ms, 40 log-mel coefficients.
// Window shape, pre-emphasis, FFT size, mel formula and log floor are
// conventions, kept as fields rather than hard-coded constants.
struct FeatureConfig {
  int sample_rate_hz = 16000;
  int frame_len_ms = 25;
  int hop_ms = 10;
  int n_mels = 40;
  int fft_size = 512;
  double f_min_hz = 0.0;
  double f_max_hz = 8000.0;
  double preemph = 0.97;
  double log_floor = 1e-10;
  // window: periodic Hann, the only supported shape

  int frame_len() const { return sample_rate_hz * frame_len_ms / 1000; }
  int hop() const { return sample_rate_hz * hop_ms / 1000; }
  void validate() const;
};

// HTK-style mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels x (fft_size/2 + 1) triangular filterbank with centers uniform on
// the mel scale. Throws ConfigError if any filter has empty support.
Tensor<double> mel_filterbank(const FeatureConfig& config);

// Number of whole frames in n_samples; trailing partial frames are dropped.
size_t frame_count(size_t n_samples, const FeatureConfig& config);

template <typename Real>
struct FeatureMatrix {
  Tensor2D<Real> data;  // n_mels x T
  double hop_s = 0.010;
  double t0_s = 0.0125;  // center time of frame 0
};

template <typename Real>
struct FeatureNormalizer {
  std::vector<Real> mean;
  std::vector<Real> stddev;  // floored at 1e-6
};

// Frame k covers samples [hop*k, hop*k + frame_len).
template <typename Real>
std::vector<std::vector<Real>> frame_signal(std::span<const Real> samples,
                                            const FeatureConfig& config);

// DFT bins 0..N/2 of a real power-of-two-length frame.
template <typename Real>
std::vector<std::complex<Real>> real_fft(std::span<const Real> frame);

// Batch Fbank40 extractor. Stateless; one instance can serve many clips.
template <typename Real>
class FbankExtractor {
 public:
  explicit FbankExtractor(FeatureConfig config = {});

  const FeatureConfig& config() const { return config_; }

  // All frames of a clip's samples.
  FeatureMatrix<Real> extract(std::span<const float> samples) const;

  // One frame's coefficients from `prev_and_frame`: the sample preceding
  // the frame (0 at clip start) followed by frame_len samples. This is the
  // single compute path shared by batch and streaming extraction.
  void compute_frame(std::span<const Real> prev_and_frame, Real* out) const;

 private:
  FeatureConfig config_;
  std::vector<Real> window_;
  Tensor<Real> mel_;  // n_mels x (fft_size/2 + 1)
};

// One-hop-at-a-time extraction; bit-identical to FbankExtractor::extract.
// Holds private buffers; do not share one instance across threads.
template <typename Real>
class StreamingFbank {
 public:
  explicit StreamingFbank(FeatureConfig config = {});

  // Pushes one sample; returns true when a new frame completed, with its
  // n_mels coefficients written to `out`.
  bool push(float sample, Real* out);
  void reset();

  const FeatureConfig& config() const { return extractor_.config(); }
  int64_t frames_emitted() const { return frames_; }

 private:
  FbankExtractor<Real> extractor_;
  std::vector<Real> ring_;     // recent raw samples, indexed by absolute position
  std::vector<Real> scratch_;  // prev sample + current frame
  size_t mask_ = 0;
  int64_t pushed_ = 0;
  int64_t frames_ = 0;
};

// Per-coefficient statistics over one or more feature matrices.
// Throws ArgumentError when fewer than 2 frames are given in total.
template <typename Real>
FeatureNormalizer<Real> fit_normalizer(std::span<const FeatureMatrix<Real>> corpus);

template <typename Real>
FeatureMatrix<Real> normalize(const FeatureMatrix<Real>& features,
                              const FeatureNormalizer<Real>& norm);

// In-place normalization of a single frame (streaming path).
template <typename Real>
void normalize_frame(std::span<Real> frame, const FeatureNormalizer<Real>& norm);

// Debug dump: one row per frame, n_mels columns, 9 significant digits.
template <typename Real>
void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix<Real>& features);

// ---------------------------------------------------------------------------
// implementation

template <typename Real>
std::vector<std::vector<Real>> frame_signal(std::span<const Real> samples,
                                            const FeatureConfig& config) {
  config.validate();
  const size_t flen = static_cast<size_t>(config.frame_len());
  const size_t hop = static_cast<size_t>(config.hop());
  std::vector<std::vector<Real>> frames;
  if (samples.size() < flen) return frames;
  const size_t n = (samples.size() - flen) / hop + 1;
  frames.reserve(n);
  for (size_t k = 0; k < n; ++k) {
    frames.emplace_back(samples.begin() + k * hop, samples.begin() + k * hop + flen);
  }
  return frames;
}

namespace detail {

// Iterative radix-2 Cooley-Tukey, in place. n must be a power of two.
template <typename Real>
void fft_inplace(std::vector<std::complex<Real>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<Real> wl(static_cast<Real>(std::cos(ang)),
                                static_cast<Real>(std::sin(ang)));
    for (size_t i = 0; i < n; i += len) {
      std::complex<Real> w(Real(1), Real(0));
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<Real> u = a[i + k];
        const std::complex<Real> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace detail

template <typename Real>
std::vector<std::complex<Real>> real_fft(std::span<const Real> frame) {
  const size_t n = frame.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw ArgumentError("real_fft: input length must be a power of two, got " +
                        std::to_string(n));
  std::vector<std::complex<Real>> a(n);
  for (size_t i = 0; i < n; ++i) a[i] = std::complex<Real>(frame[i], Real(0));
  detail::fft_inplace(a);
  a.resize(n / 2 + 1);
  return a;
}

template <typename Real>
FbankExtractor<Real>::FbankExtractor(FeatureConfig config) : config_(config) {
  config_.validate();
  const int flen = config_.frame_len();
  window_.resize(flen);
  for (int i = 0; i < flen; ++i) {
    window_[i] = static_cast<Real>(
        0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * i / flen)));
  }
  const Tensor<double> mel = mel_filterbank(config_);
  mel_.dims = mel.dims;
  mel_.data.resize(mel.data.size());
  for (size_t i = 0; i < mel.data.size(); ++i)
    mel_.data[i] = static_cast<Real>(mel.data[i]);
}

template <typename Real>
void FbankExtractor<Real>::compute_frame(std::span<const Real> prev_and_frame,
                                         Real* out) const {
  const int flen = config_.frame_len();
  if (prev_and_frame.size() != static_cast<size_t>(flen) + 1)
    throw ShapeError("compute_frame: expected prev sample + frame");

  const int nfft = config_.fft_size;
  const int bins = nfft / 2 + 1;
  const Real pre = static_cast<Real>(config_.preemph);

  std::vector<std::complex<Real>> spec(nfft, std::complex<Real>(0, 0));
  for (int i = 0; i < flen; ++i) {
    const Real y = prev_and_frame[i + 1] - pre * prev_and_frame[i];
    spec[i] = std::complex<Real>(y * window_[i], Real(0));
  }
  detail::fft_inplace(spec);

  std::vector<Real> power(bins);
  for (int b = 0; b < bins; ++b) {
    power[b] = spec[b].real() * spec[b].real() + spec[b].imag() * spec[b].imag();
  }

  const Real floor_v = static_cast<Real>(config_.log_floor);
  for (int m = 0; m < config_.n_mels; ++m) {
    const Real* row = mel_.data.data() + static_cast<size_t>(m) * bins;
    Real acc = 0;
    for (int b = 0; b < bins; ++b) acc += row[b] * power[b];
    out[m] = std::log(std::max(acc, floor_v));
  }
}

template <typename Real>
FeatureMatrix<Real> FbankExtractor<Real>::extract(std::span<const float> samples) const {
  const int flen = config_.frame_len();
  const int hop = config_.hop();
  const size_t n_frames = frame_count(samples.size(), config_);

  FeatureMatrix<Real> out;
  out.hop_s = config_.hop_ms / 1000.0;
  out.t0_s = config_.frame_len_ms / 2000.0;
  out.data = Tensor2D<Real>(config_.n_mels, static_cast<int64_t>(n_frames));

  std::vector<Real> scratch(flen + 1);
  std::vector<Real> coeffs(config_.n_mels);
  for (size_t k = 0; k < n_frames; ++k) {
    const size_t start = k * static_cast<size_t>(hop);
    scratch[0] = start == 0 ? Real(0) : static_cast<Real>(samples[start - 1]);
    for (int i = 0; i < flen; ++i) scratch[i + 1] = static_cast<Real>(samples[start + i]);
    compute_frame(scratch, coeffs.data());
    for (int m = 0; m < config_.n_mels; ++m)
      out.data.at(m, static_cast<int64_t>(k)) = coeffs[m];
  }
  return out;
}

template <typename Real>
StreamingFbank<Real>::StreamingFbank(FeatureConfig config) : extractor_(config) {
  size_t cap = 1;
  while (cap < static_cast<size_t>(extractor_.config().frame_len()) + 2) cap <<= 1;
  ring_.assign(cap, Real(0));
  mask_ = cap - 1;
  scratch_.resize(extractor_.config().frame_len() + 1);
}

template <typename Real>
void StreamingFbank<Real>::reset() {
  std::fill(ring_.begin(), ring_.end(), Real(0));
  pushed_ = 0;
  frames_ = 0;
}

template <typename Real>
bool StreamingFbank<Real>::push(float sample, Real* out) {
  const int flen = extractor_.config().frame_len();
  const int hop = extractor_.config().hop();

  ring_[static_cast<size_t>(pushed_) & mask_] = static_cast<Real>(sample);
  ++pushed_;

  if (pushed_ < flen || (pushed_ - flen) % hop != 0) return false;

  const int64_t k = (pushed_ - flen) / hop;
  const int64_t start = k * hop;
  scratch_[0] = start == 0 ? Real(0) : ring_[static_cast<size_t>(start - 1) & mask_];
  for (int i = 0; i < flen; ++i)
    scratch_[i + 1] = ring_[static_cast<size_t>(start + i) & mask_];
  extractor_.compute_frame(scratch_, out);
  ++frames_;
  return true;
}

template <typename Real>
FeatureNormalizer<Real> fit_normalizer(std::span<const FeatureMatrix<Real>> corpus) {
  int64_t n_mels = 0;
  int64_t total = 0;
  for (const auto& f : corpus) {
    if (n_mels == 0) n_mels = f.data.channels;
    if (f.data.channels != n_mels) throw ShapeError("fit_normalizer: coefficient count mismatch");
    total += f.data.time;
  }
  if (total < 2) throw ArgumentError("fit_normalizer: need at least 2 frames");

  FeatureNormalizer<Real> norm;
  norm.mean.assign(n_mels, Real(0));
  norm.stddev.assign(n_mels, Real(0));
  std::vector<double> mean(n_mels, 0.0), sq(n_mels, 0.0);
  for (const auto& f : corpus) {
    for (int64_t m = 0; m < n_mels; ++m) {
      const Real* row = f.data.row(m);
      for (int64_t t = 0; t < f.data.time; ++t) {
        mean[m] += row[t];
        sq[m] += static_cast<double>(row[t]) * row[t];
      }
    }
  }
  for (int64_t m = 0; m < n_mels; ++m) {
    mean[m] /= static_cast<double>(total);
    const double var = sq[m] / static_cast<double>(total) - mean[m] * mean[m];
    norm.mean[m] = static_cast<Real>(mean[m]);
    norm.stddev[m] = static_cast<Real>(std::max(std::sqrt(std::max(var, 0.0)), 1e-6));
  }
  return norm;
}

template <typename Real>
FeatureMatrix<Real> normalize(const FeatureMatrix<Real>& features,
                              const FeatureNormalizer<Real>& norm) {
  if (static_cast<size_t>(features.data.channels) != norm.mean.size())
    throw ShapeError("normalize: coefficient count mismatch");
  FeatureMatrix<Real> out = features;
  for (int64_t m = 0; m < out.data.channels; ++m) {
    Real* row = out.data.row(m);
    const Real mu = norm.mean[m];
    const Real inv = Real(1) / norm.stddev[m];
    for (int64_t t = 0; t < out.data.time; ++t) row[t] = (row[t] - mu) * inv;
  }
  return out;
}

template <typename Real>
void normalize_frame(std::span<Real> frame, const FeatureNormalizer<Real>& norm) {
  if (frame.size() != norm.mean.size())
    throw ShapeError("normalize_frame: coefficient count mismatch");
  for (size_t m = 0; m < frame.size(); ++m)
    frame[m] = (frame[m] - norm.mean[m]) / norm.stddev[m];
}

}  // namespace magicnet
