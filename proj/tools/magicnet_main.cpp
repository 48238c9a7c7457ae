// magicnet: corpus synthesis, training, inference, evaluation and
// benchmarking for the streaming VAD model, in one binary.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "magicnet/audio_io.hpp"
#include "magicnet/eval.hpp"
#include "magicnet/features.hpp"
#include "magicnet/model.hpp"
#include "magicnet/train.hpp"

namespace fs = std::filesystem;
using namespace magicnet;

namespace {

struct SynthArgs {
  std::string out_dir;
  int64_t clips = 0;
  double snr_db = 0.0;
  bool snr_fixed = false;
  std::string snr_range = "5:30";
  std::string noise = "mix";
  double segment_s = 20.0;
  uint64_t seed = 0;
};

NoiseKind parse_noise(const std::string& name) {
  if (name == "white") return NoiseKind::white;
  if (name == "car") return NoiseKind::car;
  if (name == "machine") return NoiseKind::machine;
  if (name == "mix") return NoiseKind::mix;
  throw ArgumentError("unknown noise kind: " + name);
}

int run_synth(const SynthArgs& args) {
  MixSpec spec;
  spec.seed = args.seed;
  spec.noise = parse_noise(args.noise);
  spec.segment_len_s = args.segment_s;
  if (args.snr_fixed) {
    spec.snr_min_db = spec.snr_max_db = args.snr_db;
  } else {
    const size_t colon = args.snr_range.find(':');
    if (colon == std::string::npos)
      throw ArgumentError("--snr-range expects A:B, got " + args.snr_range);
    spec.snr_min_db = std::stod(args.snr_range.substr(0, colon));
    spec.snr_max_db = std::stod(args.snr_range.substr(colon + 1));
  }
  spec.validate();

  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  if (ec) throw Error("cannot create output directory " + args.out_dir + ": " + ec.message());

  std::vector<ManifestEntry> manifest;
  int64_t speech_samples = 0;
  int64_t total_samples = 0;
  size_t clipped_total = 0;
  for (int64_t i = 0; i < args.clips; ++i) {
    const SynthClip sc = synth_clip(spec, static_cast<size_t>(i));
    char stem[96];
    std::snprintf(stem, sizeof(stem), "clip%05lld_%s_snr%ld", static_cast<long long>(i),
                  noise_kind_name(sc.noise), std::lround(sc.snr_db));
    const fs::path wav = fs::path(args.out_dir) / (std::string(stem) + ".wav");
    const fs::path lab = fs::path(args.out_dir) / (std::string(stem) + ".lab");
    write_wav(sc.clip, wav);
    write_labels(lab, sc.clip.labels);
    manifest.push_back({wav.filename().string(), lab.filename().string()});
    for (uint8_t l : sc.clip.labels) speech_samples += l;
    total_samples += static_cast<int64_t>(sc.clip.samples.size());
    clipped_total += sc.clipped;
  }
  write_manifest(fs::path(args.out_dir) / "manifest.tsv", manifest);

  const double hours = static_cast<double>(total_samples) / kSampleRateHz / 3600.0;
  std::printf("clips=%lld\n", static_cast<long long>(args.clips));
  std::printf("manifest=%s\n", (fs::path(args.out_dir) / "manifest.tsv").string().c_str());
  std::printf("total_hours=%.6g\n", hours);
  std::printf("speech_fraction=%.6g\n",
              total_samples ? static_cast<double>(speech_samples) / total_samples : 0.0);
  std::printf("clipped_samples=%zu\n", clipped_total);
  return 0;
}

struct TrainArgs {
  std::string corpus;
  std::string val;
  std::string out;
  std::string loss_csv;
  double lr = 1e-4;
  int batch_segments = 8;
  int epochs = 100;
  int patience = 50;
  int bn_warmup = 1;
  uint64_t seed = 0;
  std::string precision = "f32";
  bool quiet = false;
};

template <typename Real>
int run_train_typed(const TrainArgs& args) {
  MagicNetConfig model_config;
  TrainConfig config;
  config.lr = args.lr;
  config.batch_segments = args.batch_segments;
  config.max_epochs = args.epochs;
  config.patience_epochs = args.patience;
  config.bn_warmup_epochs = args.bn_warmup;
  config.seed = args.seed;

  const auto corpus = read_manifest(args.corpus);
  const auto val = read_manifest(args.val);

  const auto on_epoch = [&](const EpochStats& e) {
    if (!args.quiet)
      std::printf("epoch=%d train_loss=%.6f val_loss=%.6f\n", e.epoch, e.train_loss, e.val_loss);
  };
  const TrainResult<Real> result =
      train<Real>(model_config, config, corpus, val, on_epoch);

  save_weights(result.weights, args.out);
  if (!args.loss_csv.empty()) write_loss_csv(args.loss_csv, result.history);

  std::printf("best_epoch=%d\n", result.best_epoch);
  std::printf("best_val_loss=%.9g\n", result.best_val_loss);
  std::printf("weights=%s\n", args.out.c_str());
  return 0;
}

int run_train(const TrainArgs& args) {
  if (args.precision == "f32") return run_train_typed<float>(args);
  if (args.precision == "f64") return run_train_typed<double>(args);
  throw ArgumentError("--precision must be f32 or f64, got " + args.precision);
}

struct InferArgs {
  std::string weights;
  std::string wav;
  std::string out;
  bool stream = false;
};

int run_infer(const InferArgs& args) {
  MagicNetConfig config;
  const ModelWeights<float> weights = load_weights<float>(args.weights, config);
  const AudioClip clip = read_wav(args.wav);

  std::vector<float> probs;
  if (args.stream) {
    StreamingFbank<float> fbank;
    StreamState<float> state = make_stream_state(config, weights);
    std::vector<float> frame(fbank.config().n_mels);
    for (float s : clip.samples) {
      if (!fbank.push(s, frame.data())) continue;
      float p = 0.0f;
      if (stream_push(state, std::span<const float>(frame), &p)) probs.push_back(p);
    }
  } else {
    const FbankExtractor<float> fbank;
    const FeatureMatrix<float> features = fbank.extract(clip.samples);
    probs = forward_batch(config, weights, features.data).probs;
  }

  std::ofstream out(args.out);
  if (!out) throw Error("cannot open " + args.out + " for writing");
  out << "step_index,time_s,probability\n";
  char buf[96];
  const int64_t downsample = receptive_field(config).downsample;
  for (size_t j = 0; j < probs.size(); ++j) {
    const double time_s = static_cast<double>(downsample) * (static_cast<double>(j) + 1) * 0.010;
    std::snprintf(buf, sizeof(buf), "%zu,%.3f,%.9g\n", j, time_s, static_cast<double>(probs[j]));
    out << buf;
  }
  if (!out) throw Error("failed writing " + args.out);
  std::printf("steps=%zu\n", probs.size());
  std::printf("out=%s\n", args.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string weights;
  std::string corpus;
  std::string report;
  std::string csv;
  double threshold = -1.0;  // <0: sweep
  int threads = 1;
};

int run_eval(const EvalArgs& args) {
  MagicNetConfig config;
  const ModelWeights<float> weights = load_weights<float>(args.weights, config);
  const auto manifest = read_manifest(args.corpus);

  const ThresholdPolicy policy =
      args.threshold < 0.0 ? ThresholdPolicy::sweep : ThresholdPolicy::fixed;
  const EvalReport report =
      evaluate(config, weights, manifest, policy, std::max(args.threshold, 0.0), args.threads);

  std::ostringstream text;
  write_eval_report(text, report);
  std::fputs(text.str().c_str(), stdout);
  if (!args.report.empty()) {
    std::ofstream f(args.report);
    if (!f) throw Error("cannot open " + args.report + " for writing");
    f << text.str();
    if (!f) throw Error("failed writing " + args.report);
  }
  if (!args.csv.empty()) {
    std::ofstream f(args.csv);
    if (!f) throw Error("cannot open " + args.csv + " for writing");
    write_condition_csv(f, report);
    if (!f) throw Error("failed writing " + args.csv);
  }
  return 0;
}

struct BenchArgs {
  std::string weights;
  double seconds = 30.0;
  int reps = 5;
  uint64_t seed = 0;
};

int run_bench(const BenchArgs& args) {
  MagicNetConfig config;
  const ModelWeights<float> weights = load_weights<float>(args.weights, config);

  MixSpec spec;
  spec.seed = args.seed;
  spec.segment_len_s = args.seconds;
  spec.validate();
  const SynthClip clip = synth_clip(spec, 0);

  const RtfReport report = measure_rtf(config, weights, clip.clip.samples, args.reps);
  std::ostringstream text;
  write_rtf_report(text, report);
  std::fputs(text.str().c_str(), stdout);
  // published figure for this model, for context only: RTF is hardware-bound
  std::printf("reference_rtf=0.034 (measured on a Xeon E5-2690 v4 @ 2.60GHz, single thread)\n");
  return 0;
}

struct InspectArgs {
  std::string weights;
};

int run_inspect(const InspectArgs& args) {
  MagicNetConfig config;
  const ModelWeights<float> weights = load_weights<float>(args.weights, config);

  std::printf("%-28s %-16s %10s %10s\n", "tensor", "shape", "params", "trainable");
  for (const TensorInfo& info : tensor_schema(config)) {
    std::string shape = "[";
    int64_t n = 1;
    for (size_t d = 0; d < info.dims.size(); ++d) {
      shape += (d ? "," : "") + std::to_string(info.dims[d]);
      n *= info.dims[d];
    }
    shape += "]";
    std::printf("%-28s %-16s %10lld %10s\n", info.name.c_str(), shape.c_str(),
                static_cast<long long>(n), info.trainable ? "yes" : "no");
  }

  const ParamCounts counts = param_counts(config);
  std::printf("\n%-28s %10s %10s\n", "layer", "trainable", "total");
  for (const ParamCountRow& row : counts.rows)
    std::printf("%-28s %10lld %10lld\n", row.layer.c_str(),
                static_cast<long long>(row.trainable), static_cast<long long>(row.total));
  std::printf("%-28s %10lld %10lld\n", "(all)", static_cast<long long>(counts.trainable),
              static_cast<long long>(counts.total));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"magicnet: streaming voice-activity-detection toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
  synth->add_option("--out", synth_args.out_dir, "output directory")->required();
  synth->add_option("--clips", synth_args.clips, "number of clips")
      ->required()
      ->check(CLI::PositiveNumber);
  CLI::Option* snr_db = synth->add_option("--snr-db", synth_args.snr_db, "fixed SNR in dB");
  synth->add_option("--snr-range", synth_args.snr_range, "SNR range A:B in dB (default 5:30)")
      ->excludes(snr_db);
  synth->add_option("--noise", synth_args.noise, "noise kind: white|car|machine|mix")
      ->check(CLI::IsMember({"white", "car", "machine", "mix"}));
  synth->add_option("--segment-seconds", synth_args.segment_s, "clip length in seconds")
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_args.seed, "RNG seed");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model on a corpus");
  train->add_option("--corpus", train_args.corpus, "training manifest")->required();
  train->add_option("--val", train_args.val, "validation manifest")->required();
  train->add_option("--out", train_args.out, "output weight file")->required();
  train->add_option("--loss-csv", train_args.loss_csv, "write per-epoch loss CSV here");
  train->add_option("--lr", train_args.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--batch-segments", train_args.batch_segments,
                    "segments per optimizer step")->check(CLI::PositiveNumber);
  train->add_option("--epochs", train_args.epochs, "max epochs")->check(CLI::PositiveNumber);
  train->add_option("--patience", train_args.patience, "early-stopping patience")
      ->check(CLI::PositiveNumber);
  train->add_option("--bn-warmup", train_args.bn_warmup,
                    "epochs of batch-stat normalization before freezing")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--seed", train_args.seed, "RNG seed");
  train->add_option("--precision", train_args.precision, "f32|f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  train->add_flag("--quiet", train_args.quiet, "suppress per-epoch progress");

  InferArgs infer_args;
  CLI::App* infer = app.add_subcommand("infer", "run inference on a WAV file");
  infer->add_option("--weights", infer_args.weights, "weight file")->required();
  infer->add_option("--wav", infer_args.wav, "input WAV (16 kHz mono PCM16)")->required();
  infer->add_option("--out", infer_args.out, "output probability CSV")->required();
  infer->add_flag("--stream", infer_args.stream, "use the frame-by-frame streaming path");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a model on a labeled corpus");
  eval->add_option("--weights", eval_args.weights, "weight file")->required();
  eval->add_option("--corpus", eval_args.corpus, "test manifest")->required();
  eval->add_option("--report", eval_args.report, "write key=value report here");
  eval->add_option("--csv", eval_args.csv, "write per-condition CSV here");
  eval->add_option("--threshold", eval_args.threshold,
                   "fixed decision threshold (default: sweep for best F1)");
  eval->add_option("--threads", eval_args.threads, "per-clip parallelism")
      ->check(CLI::PositiveNumber);

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand("bench", "measure streaming real-time factor");
  bench->add_option("--weights", bench_args.weights, "weight file")->required();
  bench->add_option("--seconds", bench_args.seconds, "benchmark audio length")
      ->check(CLI::Range(10.0, 3600.0));
  bench->add_option("--reps", bench_args.reps, "repetitions (median reported)")
      ->check(CLI::Range(3, 1000));
  bench->add_option("--seed", bench_args.seed, "RNG seed for the benchmark clip");

  InspectArgs inspect_args;
  CLI::App* inspect = app.add_subcommand("inspect", "list a weight file's tensors");
  inspect->add_option("--weights", inspect_args.weights, "weight file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      synth_args.snr_fixed = snr_db->count() > 0;
      return run_synth(synth_args);
    }
    if (train->parsed()) return run_train(train_args);
    if (infer->parsed()) return run_infer(infer_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (bench->parsed()) return run_bench(bench_args);
    if (inspect->parsed()) return run_inspect(inspect_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;  // unreachable with require_subcommand(1)
}
