#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "magicnet/errors.hpp"

namespace magicnet {

struct Confusion {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t tn = 0;
  int64_t fn = 0;
  int64_t total() const { return tp + fp + tn + fn; }
};

struct F1Result {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool degenerate = false;  // precision + recall was 0; f1 reported as 0
  Confusion confusion;
};

// Predictions are score >= threshold. Labels must be 0/1.
F1Result f1_score(std::span<const float> scores, std::span<const uint8_t> labels,
                  double threshold);

// Area under the ROC curve via the rank statistic (midranks for ties), which
// equals the trapezoidal area over all distinct thresholds. Needs at least
// one positive and one negative label.
double roc_auc(std::span<const float> scores, std::span<const uint8_t> labels);

struct SweepResult {
  double threshold = 0.0;
  F1Result f1;
};

// Best-F1 threshold over all distinct score values; ties in F1 resolve to
// the lowest threshold (favoring recall).
SweepResult threshold_sweep(std::span<const float> scores, std::span<const uint8_t> labels);

// Majority vote of each frame's samples; ties count as speech. Frame k
// covers samples [hop*k, hop*k + frame_len); partial trailing frames are
// dropped, mirroring feature extraction.
std::vector<uint8_t> majority_frame_labels(std::span<const uint8_t> sample_labels,
                                           int frame_len = 400, int hop = 160);

// Majority vote of `factor` consecutive frame labels per model output step
// (the last step may cover fewer frames); ties count as speech.
std::vector<uint8_t> majority_step_labels(std::span<const uint8_t> frame_labels, int factor = 8);

}  // namespace magicnet
