#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "magicnet/eval.hpp"
#include "magicnet/features.hpp"

namespace magicnet {

std::string condition_of(const std::filesystem::path& wav_path) {
  const std::string stem = wav_path.stem().string();
  // expected form: <id>_<noise>_snr<db>
  const size_t snr_pos = stem.rfind("_snr");
  if (snr_pos == std::string::npos || snr_pos == 0) return "unknown";
  const std::string db = stem.substr(snr_pos + 4);
  if (db.empty() || db.find_first_not_of("-0123456789") != std::string::npos) return "unknown";
  const size_t noise_pos = stem.rfind('_', snr_pos - 1);
  if (noise_pos == std::string::npos) return "unknown";
  const std::string noise = stem.substr(noise_pos + 1, snr_pos - noise_pos - 1);
  if (noise.empty()) return "unknown";
  return noise + "/snr" + db;
}

namespace {

struct ClipScores {
  std::string condition;
  std::vector<float> probs;
  std::vector<uint8_t> labels;
};

ClipScores score_clip(const MagicNetConfig& config, const ModelWeights<float>& weights,
                      const FbankExtractor<float>& fbank, const ManifestEntry& entry) {
  const AudioClip clip = read_wav(entry.wav_path);
  ClipScores out;
  out.condition = condition_of(entry.wav_path);
  out.labels = read_labels(entry.label_path);
  if (out.labels.size() != clip.samples.size())
    throw Error("evaluate: " + entry.wav_path + ": " +
                std::to_string(clip.samples.size()) + " samples but " +
                std::to_string(out.labels.size()) + " labels");

  const FeatureMatrix<float> features = fbank.extract(clip.samples);
  const std::vector<uint8_t> frames = majority_frame_labels(out.labels);
  out.labels = majority_step_labels(frames);

  const InferResult<float> result = forward_batch(config, weights, features.data);
  out.probs = result.probs;
  if (out.probs.size() != out.labels.size())
    throw Error("evaluate: " + entry.wav_path + ": " +
                std::to_string(out.probs.size()) + " output steps vs " +
                std::to_string(out.labels.size()) + " step labels");
  return out;
}

}  // namespace

EvalReport evaluate(const MagicNetConfig& config, const ModelWeights<float>& weights,
                    std::span<const ManifestEntry> manifest, ThresholdPolicy policy,
                    double fixed_threshold, int threads) {
  if (manifest.empty()) throw ArgumentError("evaluate: empty manifest");
  if (threads < 1) throw ArgumentError("evaluate: thread count must be >= 1");

  const FbankExtractor<float> fbank;
  std::vector<ClipScores> clips(manifest.size());

  if (threads == 1) {
    for (size_t i = 0; i < manifest.size(); ++i)
      clips[i] = score_clip(config, weights, fbank, manifest[i]);
  } else {
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error_text;
    std::mutex error_mu;
    auto worker = [&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= manifest.size() || failed.load()) return;
        try {
          clips[i] = score_clip(config, weights, fbank, manifest[i]);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(error_mu);
          error_text = e.what();
          failed.store(true);
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const int n = std::min<int>(threads, static_cast<int>(manifest.size()));
    pool.reserve(n);
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failed.load()) throw Error(error_text);
  }

  std::vector<float> all_probs;
  std::vector<uint8_t> all_labels;
  for (const ClipScores& c : clips) {
    all_probs.insert(all_probs.end(), c.probs.begin(), c.probs.end());
    all_labels.insert(all_labels.end(), c.labels.begin(), c.labels.end());
  }

  EvalReport report;
  report.clips = static_cast<int64_t>(clips.size());
  report.steps = static_cast<int64_t>(all_probs.size());
  int64_t speech = 0;
  for (uint8_t l : all_labels) speech += l;
  report.speech_fraction = report.steps ? static_cast<double>(speech) / report.steps : 0.0;

  report.auc = roc_auc(all_probs, all_labels);
  report.policy = policy;
  if (policy == ThresholdPolicy::sweep) {
    const SweepResult sweep = threshold_sweep(all_probs, all_labels);
    report.threshold = sweep.threshold;
    report.f1 = sweep.f1;
  } else {
    report.threshold = fixed_threshold;
    report.f1 = f1_score(all_probs, all_labels, fixed_threshold);
  }

  std::map<std::string, std::pair<std::vector<float>, std::vector<uint8_t>>> by_condition;
  for (const ClipScores& c : clips) {
    auto& bucket = by_condition[c.condition];
    bucket.first.insert(bucket.first.end(), c.probs.begin(), c.probs.end());
    bucket.second.insert(bucket.second.end(), c.labels.begin(), c.labels.end());
  }
  for (const auto& [condition, bucket] : by_condition) {
    EvalReport::ConditionRow row;
    row.condition = condition;
    row.steps = static_cast<int64_t>(bucket.first.size());
    for (uint8_t l : bucket.second) row.speech_steps += l;
    row.f1 = f1_score(bucket.first, bucket.second, report.threshold);
    if (row.speech_steps > 0 && row.speech_steps < row.steps) {
      row.auc = roc_auc(bucket.first, bucket.second);
      row.auc_valid = true;
    }
    report.conditions.push_back(std::move(row));
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void write_eval_report(std::ostream& out, const EvalReport& r) {
  out << "clips=" << r.clips << '\n';
  out << "steps=" << r.steps << '\n';
  out << "speech_fraction=" << fmt(r.speech_fraction) << '\n';
  out << "auc=" << fmt(r.auc) << '\n';
  out << "threshold=" << fmt(r.threshold) << '\n';
  out << "threshold_policy=" << (r.policy == ThresholdPolicy::sweep ? "sweep" : "fixed") << '\n';
  out << "f1=" << fmt(r.f1.f1) << '\n';
  out << "precision=" << fmt(r.f1.precision) << '\n';
  out << "recall=" << fmt(r.f1.recall) << '\n';
  out << "f1_degenerate=" << (r.f1.degenerate ? 1 : 0) << '\n';
  out << "tp=" << r.f1.confusion.tp << '\n';
  out << "fp=" << r.f1.confusion.fp << '\n';
  out << "tn=" << r.f1.confusion.tn << '\n';
  out << "fn=" << r.f1.confusion.fn << '\n';
}

void write_condition_csv(std::ostream& out, const EvalReport& r) {
  out << "condition,steps,speech_steps,tp,fp,tn,fn,precision,recall,f1,auc\n";
  for (const auto& row : r.conditions) {
    out << row.condition << ',' << row.steps << ',' << row.speech_steps << ','
        << row.f1.confusion.tp << ',' << row.f1.confusion.fp << ',' << row.f1.confusion.tn << ','
        << row.f1.confusion.fn << ',' << fmt(row.f1.precision) << ',' << fmt(row.f1.recall) << ','
        << fmt(row.f1.f1) << ',' << (row.auc_valid ? fmt(row.auc) : "nan") << '\n';
  }
}

}  // namespace magicnet
