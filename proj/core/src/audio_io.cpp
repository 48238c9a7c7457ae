#include "magicnet/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "magicnet/rng.hpp"

namespace magicnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Utterance duration bounds for the synthetic speech surrogates.
constexpr double kUttMinS = 1.0;
constexpr double kUttMaxS = 4.0;

uint32_t read_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16le(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32le(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_u16le(std::ostream& out, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}

}  // namespace

const char* noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::white: return "white";
    case NoiseKind::car: return "car";
    case NoiseKind::machine: return "machine";
    case NoiseKind::mix: return "mix";
  }
  return "unknown";
}

void MixSpec::validate() const {
  if (snr_min_db > snr_max_db)
    throw ArgumentError("MixSpec: snr_min_db > snr_max_db");
  if (snr_min_db < -10.0 || snr_max_db > 40.0)
    throw ArgumentError("MixSpec: SNR range must lie within [-10, 40] dB");
  if (gap_min_s > gap_max_s || gap_min_s < 0)
    throw ArgumentError("MixSpec: bad silence gap range");
  if (segment_len_s < gap_min_s + kUttMinS)
    throw ArgumentError("MixSpec: segment shorter than one gap plus one utterance");
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open WAV file: " + path.string());

  char riff[4];
  in.read(riff, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0)
    throw FormatError(path.string() + ": missing RIFF chunk");
  read_u32le(in);  // RIFF payload size; chunk walk below is bounds-checked by EOF
  char wave[4];
  in.read(wave, 4);
  if (!in || std::memcmp(wave, "WAVE", 4) != 0)
    throw FormatError(path.string() + ": RIFF form type is not WAVE");

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;

  while (true) {
    char id[4];
    in.read(id, 4);
    if (!in) {
      throw FormatError(path.string() + (have_fmt ? ": missing data chunk"
                                                  : ": missing fmt chunk"));
    }
    uint32_t size = read_u32le(in);
    if (!in) throw FormatError(path.string() + ": truncated chunk header");

    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(path.string() + ": fmt chunk too small");
      format = read_u16le(in);
      channels = read_u16le(in);
      rate = read_u32le(in);
      read_u32le(in);  // byte rate
      read_u16le(in);  // block align
      bits = read_u16le(in);
      in.ignore(size - 16 + (size & 1));
      if (!in) throw FormatError(path.string() + ": truncated fmt chunk");
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path.string() + ": data chunk before fmt chunk");
      if (format != 1)
        throw FormatError(path.string() + ": unsupported format tag " +
                          std::to_string(format) + " (required: 1 = PCM)");
      if (channels != 1)
        throw FormatError(path.string() + ": found " + std::to_string(channels) +
                          " channels (required: mono)");
      if (bits != 16)
        throw FormatError(path.string() + ": found " + std::to_string(bits) +
                          "-bit samples (required: 16)");
      if (rate != kSampleRateHz)
        throw FormatError(path.string() + ": found sample rate " + std::to_string(rate) +
                          " (required: " + std::to_string(kSampleRateHz) + ")");
      if (size % 2 != 0)
        throw FormatError(path.string() + ": data chunk size is odd");

      AudioClip clip;
      clip.sample_rate_hz = static_cast<int>(rate);
      const size_t n = size / 2;
      clip.samples.resize(n);
      std::vector<unsigned char> raw(size);
      in.read(reinterpret_cast<char*>(raw.data()), size);
      if (!in) throw FormatError(path.string() + ": truncated data chunk");
      for (size_t i = 0; i < n; ++i) {
        const int16_t s = static_cast<int16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
        clip.samples[i] = static_cast<float>(s) / 32768.0f;
      }
      return clip;
    } else {
      in.ignore(size + (size & 1));  // chunks are word-aligned
      if (!in) throw FormatError(path.string() + ": truncated chunk '" +
                                 std::string(id, 4) + "'");
    }
  }
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());

  const uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  write_u32le(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32le(out, 16);
  write_u16le(out, 1);  // PCM
  write_u16le(out, 1);  // mono
  write_u32le(out, static_cast<uint32_t>(clip.sample_rate_hz));
  write_u32le(out, static_cast<uint32_t>(clip.sample_rate_hz * 2));
  write_u16le(out, 2);
  write_u16le(out, 16);
  out.write("data", 4);
  write_u32le(out, data_bytes);

  for (float v : clip.samples) {
    const float c = std::clamp(v, -1.0f, 1.0f);
    long q = std::lround(static_cast<double>(c) * 32768.0);
    q = std::clamp(q, -32768L, 32767L);
    write_u16le(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  if (!out) throw Error("write failed: " + path.string());
}

double rms(std::span<const float> samples) {
  if (samples.empty()) throw ArgumentError("rms: empty input");
  double acc = 0.0;
  for (float v : samples) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

AudioClip mix_at_snr(const AudioClip& speech, const AudioClip& noise, double snr_db,
                     size_t* clipped_count) {
  if (speech.sample_rate_hz != noise.sample_rate_hz)
    throw ArgumentError("mix_at_snr: sample rate mismatch");
  if (!speech.has_labels() || speech.labels.size() != speech.samples.size())
    throw ArgumentError("mix_at_snr: speech clip must carry per-sample labels");
  if (noise.samples.empty()) throw ArgumentError("mix_at_snr: empty noise clip");

  std::vector<float> active;
  active.reserve(speech.samples.size());
  for (size_t i = 0; i < speech.samples.size(); ++i)
    if (speech.labels[i]) active.push_back(speech.samples[i]);
  if (active.empty()) throw ArgumentError("mix_at_snr: speech clip has no labeled speech");

  // Loop/truncate the noise to the speech length, then gain-match against
  // the tiled signal so the requested SNR holds exactly.
  const size_t n = speech.samples.size();
  std::vector<float> tiled(n);
  for (size_t i = 0; i < n; ++i) tiled[i] = noise.samples[i % noise.samples.size()];

  const double speech_rms = rms(active);
  const double noise_rms = rms(tiled);
  if (noise_rms <= 0.0) throw ArgumentError("mix_at_snr: noise clip is silent");

  const double gain = speech_rms / (noise_rms * std::pow(10.0, snr_db / 20.0));

  AudioClip out;
  out.sample_rate_hz = speech.sample_rate_hz;
  out.labels = speech.labels;
  out.samples.resize(n);
  size_t clipped = 0;
  for (size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(speech.samples[i]) + gain * tiled[i];
    if (v > 1.0 || v < -1.0) ++clipped;
    out.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  if (clipped_count) *clipped_count = clipped;
  return out;
}

namespace {

// Harmonic stack with 4 Hz amplitude modulation; a crude voiced-speech
// surrogate that is cheap, label-exact, and clearly separable from the
// noise generators below.
void render_utterance(Rng& rng, std::span<float> out, int sample_rate) {
  const double f0 = rng.uniform(100.0, 300.0);
  const double peak = rng.uniform(0.12, 0.35);
  const double am_phase = rng.uniform(0.0, 2.0 * kPi);
  const int harmonics = std::min(12, static_cast<int>(7000.0 / f0));

  std::vector<double> amp(harmonics);
  double norm = 0.0;
  for (int h = 0; h < harmonics; ++h) {
    amp[h] = 1.0 / (1.0 + h);
    norm += amp[h];
  }
  for (double& a : amp) a /= norm;

  const double dt = 1.0 / sample_rate;
  const size_t n = out.size();
  const size_t edge = std::min<size_t>(n / 2, static_cast<size_t>(0.010 * sample_rate));
  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    double v = 0.0;
    for (int h = 0; h < harmonics; ++h)
      v += amp[h] * std::sin(2.0 * kPi * f0 * (h + 1) * t);
    // 4 Hz syllabic envelope, 10 ms raised-cosine edge taper against clicks.
    double env = 0.55 + 0.45 * std::sin(2.0 * kPi * 4.0 * t + am_phase);
    if (i < edge) env *= 0.5 * (1.0 - std::cos(kPi * i / edge));
    if (n - 1 - i < edge) env *= 0.5 * (1.0 - std::cos(kPi * (n - 1 - i) / edge));
    out[i] = static_cast<float>(peak * env * v);
  }
}

void render_noise(Rng& rng, NoiseKind kind, std::span<float> out, int sample_rate) {
  const size_t n = out.size();
  switch (kind) {
    case NoiseKind::white: {
      for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(0.1 * rng.normal());
      break;
    }
    case NoiseKind::car: {
      // Low-passed white noise; rumble-heavy spectrum.
      const double alpha = rng.uniform(0.95, 0.99);
      double y = 0.0;
      for (size_t i = 0; i < n; ++i) {
        y = alpha * y + (1.0 - alpha) * rng.normal();
        out[i] = static_cast<float>(y * 2.0);
      }
      break;
    }
    case NoiseKind::machine: {
      // A few inharmonic tones with slow amplitude modulation plus a weak
      // broadband floor.
      const int tones = 3 + static_cast<int>(rng.uniform_index(3));
      std::vector<double> freq(tones), phase(tones), am_rate(tones), am_phase(tones);
      for (int k = 0; k < tones; ++k) {
        freq[k] = rng.uniform(60.0, 4000.0);
        phase[k] = rng.uniform(0.0, 2.0 * kPi);
        am_rate[k] = rng.uniform(1.0, 8.0);
        am_phase[k] = rng.uniform(0.0, 2.0 * kPi);
      }
      const double dt = 1.0 / sample_rate;
      for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        double v = 0.0;
        for (int k = 0; k < tones; ++k) {
          const double env = 0.75 + 0.25 * std::sin(2.0 * kPi * am_rate[k] * t + am_phase[k]);
          v += env * std::sin(2.0 * kPi * freq[k] * t + phase[k]);
        }
        out[i] = static_cast<float>(0.08 * v + 0.02 * rng.normal());
      }
      break;
    }
    case NoiseKind::mix:
      throw ArgumentError("render_noise: mix is not a concrete noise kind");
  }
}

}  // namespace

SynthClip synth_clip(const MixSpec& spec, uint64_t index) {
  spec.validate();
  Rng rng = Rng::stream(spec.seed, index);

  const int rate = kSampleRateHz;
  const size_t total = static_cast<size_t>(std::llround(spec.segment_len_s * rate));

  AudioClip speech;
  speech.sample_rate_hz = rate;
  speech.samples.assign(total, 0.0f);
  speech.labels.assign(total, 0);

  // gap, utterance, gap, utterance, ... until the segment is full.
  size_t pos = 0;
  while (true) {
    const size_t gap = static_cast<size_t>(
        std::llround(rng.uniform(spec.gap_min_s, spec.gap_max_s) * rate));
    const size_t utt = static_cast<size_t>(
        std::llround(rng.uniform(kUttMinS, kUttMaxS) * rate));
    if (pos + gap + utt > total) break;
    pos += gap;
    render_utterance(rng, std::span<float>(speech.samples).subspan(pos, utt), rate);
    std::fill(speech.labels.begin() + pos, speech.labels.begin() + pos + utt, uint8_t{1});
    pos += utt;
  }

  SynthClip result;
  result.noise = spec.noise == NoiseKind::mix
                     ? static_cast<NoiseKind>(rng.uniform_index(3))
                     : spec.noise;
  result.snr_db = rng.uniform(spec.snr_min_db, spec.snr_max_db);

  AudioClip noise;
  noise.sample_rate_hz = rate;
  noise.samples.resize(total);
  render_noise(rng, result.noise, noise.samples, rate);

  if (pos == 0) {
    // No utterance fit; the clip is pure noise. Scale it to a typical level.
    result.clip = std::move(noise);
    result.clip.labels.assign(total, 0);
    for (float& v : result.clip.samples) v = std::clamp(v * 0.25f, -1.0f, 1.0f);
    return result;
  }

  result.clip = mix_at_snr(speech, noise, result.snr_db, &result.clipped);
  return result;
}

std::vector<AudioClip> synth_corpus(const MixSpec& spec, size_t n_clips) {
  if (n_clips < 1) throw ArgumentError("synth_corpus: n_clips must be >= 1");
  std::vector<AudioClip> clips;
  clips.reserve(n_clips);
  for (size_t i = 0; i < n_clips; ++i) clips.push_back(synth_clip(spec, i).clip);
  return clips;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest: " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected <wav-path>\\t<label-path>");
    // relative entries are relative to the manifest's own directory
    const std::filesystem::path base = path.parent_path();
    auto resolve = [&](std::string p) {
      if (p.empty() || std::filesystem::path(p).is_absolute() || base.empty()) return p;
      return (base / p).string();
    };
    entries.push_back({resolve(line.substr(0, tab)), resolve(line.substr(tab + 1))});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (const auto& e : entries) out << e.wav_path << '\t' << e.label_path << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<uint8_t> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open label file: " + path.string());
  std::vector<uint8_t> labels((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
  for (uint8_t b : labels)
    if (b > 1) throw FormatError(path.string() + ": label bytes must be 0 or 1");
  return labels;
}

void write_labels(const std::filesystem::path& path, std::span<const uint8_t> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace magicnet
