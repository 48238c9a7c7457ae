#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "magicnet/errors.hpp"

namespace magicnet {

inline constexpr int kSampleRateHz = 16000;

// Mono PCM audio with optional per-sample speech labels (1 = speech).
struct AudioClip {
  std::vector<float> samples;   // amplitudes in [-1, 1]
  int sample_rate_hz = kSampleRateHz;
  std::vector<uint8_t> labels;  // empty, or one byte per sample

  bool has_labels() const { return !labels.empty(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

enum class NoiseKind { white, car, machine, mix };

const char* noise_kind_name(NoiseKind kind);

// Recipe for one synthetic corpus. SNR is drawn uniformly from
// [snr_min_db, snr_max_db] per clip (set both equal for a fixed SNR).
struct MixSpec {
  double snr_min_db = 5.0;
  double snr_max_db = 30.0;
  double gap_min_s = 2.0;       // silence between utterances
  double gap_max_s = 5.0;
  double segment_len_s = 20.0;
  NoiseKind noise = NoiseKind::mix;  // mix = rotate through all kinds
  uint64_t seed = 0;

  void validate() const;  // throws ArgumentError
};

// --- WAV I/O (RIFF/WAVE, PCM16, mono, 16 kHz only) ---

// Reads a 16-bit mono PCM WAV file; samples are scaled by 1/32768.
// Throws FormatError on a malformed container and names the offending
// chunk; throws FormatError on wrong rate/channels/bit depth stating
// found vs required.
AudioClip read_wav(const std::filesystem::path& path);

// Writes samples as 16-bit PCM, clamping to [-1, 1]. Round-trips through
// read_wav within 1/32768 per sample.
void write_wav(const AudioClip& clip, const std::filesystem::path& path);

// --- signal helpers ---

// sqrt(mean of squares). Throws ArgumentError on empty input.
double rms(std::span<const float> samples);

// Mixes noise into labeled speech at the requested SNR. The speech RMS is
// computed over speech-labeled samples only; the noise is looped or
// truncated to the speech length and its gain solves
//   g = rms(speech_active) / (rms(noise_tiled) * 10^(snr_db/20)).
// Labels are copied from the speech clip; the sum is clipped to [-1, 1]
// and the number of clipped samples is reported through clipped_count
// when non-null. Throws ArgumentError on silent noise or missing labels.
AudioClip mix_at_snr(const AudioClip& speech, const AudioClip& noise, double snr_db,
                     size_t* clipped_count = nullptr);

// --- synthetic corpus ---

// One synthesized clip plus the draw that produced it.
struct SynthClip {
  AudioClip clip;
  NoiseKind noise = NoiseKind::white;
  double snr_db = 0.0;
  size_t clipped = 0;
};

// Deterministic function of (spec, index): clip `index` of the corpus.
// Speech regions are harmonic tone stacks (fundamental 100-300 Hz,
// 4 Hz amplitude modulation, 1-4 s long) separated by silence gaps drawn
// from [gap_min_s, gap_max_s]; labels mark exactly the utterance spans.
SynthClip synth_clip(const MixSpec& spec, uint64_t index);

// All n_clips clips of the corpus, in order.
std::vector<AudioClip> synth_corpus(const MixSpec& spec, size_t n_clips);

// --- corpus manifest: one `<wav-path>\t<label-path>` line per clip ---
// Relative paths are resolved against the manifest's directory on read.

struct ManifestEntry {
  std::string wav_path;
  std::string label_path;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

// Label files are raw bytes, one {0,1} byte per sample.
std::vector<uint8_t> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const uint8_t> labels);

}  // namespace magicnet
