#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "magicnet/audio_io.hpp"
#include "magicnet/metrics.hpp"
#include "magicnet/model.hpp"

namespace magicnet {

enum class ThresholdPolicy { sweep, fixed };

struct EvalReport {
  int64_t clips = 0;
  int64_t steps = 0;
  double speech_fraction = 0.0;
  double auc = 0.0;
  double threshold = 0.5;
  ThresholdPolicy policy = ThresholdPolicy::sweep;
  F1Result f1;

  // Per noise-condition breakdown, keyed like "car/snr15" (parsed from the
  // clip file names written by corpus synthesis; clips with other names
  // fall into "unknown"). AUC needs both classes, hence the validity flag.
  struct ConditionRow {
    std::string condition;
    int64_t steps = 0;
    int64_t speech_steps = 0;
    F1Result f1;
    double auc = 0.0;
    bool auc_valid = false;
  };
  std::vector<ConditionRow> conditions;
};

// Condition key for a clip path: "<noise>/snr<db>" when the stem looks like
// clip00042_car_snr15, else "unknown".
std::string condition_of(const std::filesystem::path& wav_path);

// Runs batch inference over every manifest clip, scores each output step
// against majority-vote labels, and aggregates overall and per condition.
// F1 is reported at the swept (or given) threshold. `threads` > 1 fans the
// per-clip forward passes out across a thread pool; results are identical
// to the single-threaded run.
EvalReport evaluate(const MagicNetConfig& config, const ModelWeights<float>& weights,
                    std::span<const ManifestEntry> manifest,
                    ThresholdPolicy policy = ThresholdPolicy::sweep, double fixed_threshold = 0.5,
                    int threads = 1);

// key=value lines, one per field, stable order.
void write_eval_report(std::ostream& out, const EvalReport& report);

// CSV: condition,steps,speech_steps,tp,fp,tn,fn,precision,recall,f1,auc
// (auc column is "nan" for single-class conditions).
void write_condition_csv(std::ostream& out, const EvalReport& report);

struct RtfReport {
  double audio_s = 0.0;
  double wall_s = 0.0;       // median repetition: features_s + network_s
  double rtf = 0.0;          // wall_s / audio_s
  double features_s = 0.0;
  double network_s = 0.0;
  int repetitions = 0;
};

// Wall-clock of single-threaded streaming inference (feature extraction and
// network, timed separately) over `samples`, median of `repetitions` runs.
// Requires at least 10 s of audio and 3 repetitions.
RtfReport measure_rtf(const MagicNetConfig& config, const ModelWeights<float>& weights,
                      std::span<const float> samples, int repetitions);

void write_rtf_report(std::ostream& out, const RtfReport& report);

}  // namespace magicnet
