#include "magicnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace magicnet {

namespace {

void check_pairs(std::span<const float> scores, std::span<const uint8_t> labels) {
  if (scores.size() != labels.size())
    throw ShapeError("metrics: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  if (scores.empty()) throw ArgumentError("metrics: empty input");
  for (uint8_t l : labels)
    if (l > 1) throw ArgumentError("metrics: labels must be 0 or 1");
}

F1Result f1_from(const Confusion& c) {
  F1Result r;
  r.confusion = c;
  r.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  r.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  } else {
    r.f1 = 0.0;
    r.degenerate = true;
  }
  return r;
}

}  // namespace

F1Result f1_score(std::span<const float> scores, std::span<const uint8_t> labels,
                  double threshold) {
  check_pairs(scores, labels);
  Confusion c;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool pos = labels[i] == 1;
    if (pred && pos)
      ++c.tp;
    else if (pred && !pos)
      ++c.fp;
    else if (!pred && pos)
      ++c.fn;
    else
      ++c.tn;
  }
  return f1_from(c);
}

double roc_auc(std::span<const float> scores, std::span<const uint8_t> labels) {
  check_pairs(scores, labels);
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // midrank of each element, 1-based; tied scores share the average rank
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }

  int64_t pos = 0;
  double rank_sum = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) {
      ++pos;
      rank_sum += rank[k];
    }
  }
  const int64_t neg = static_cast<int64_t>(n) - pos;
  if (pos == 0 || neg == 0)
    throw ArgumentError("roc_auc: needs both classes, got " + std::to_string(pos) +
                        " positives out of " + std::to_string(n));
  return (rank_sum - 0.5 * static_cast<double>(pos) * (pos + 1)) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

SweepResult threshold_sweep(std::span<const float> scores, std::span<const uint8_t> labels) {
  check_pairs(scores, labels);

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  int64_t total_pos = 0;
  for (uint8_t l : labels) total_pos += l;

  // Walk candidate thresholds from highest score down; at threshold s all
  // scores >= s are predicted positive. Using >= on replacement means the
  // lowest threshold wins F1 ties.
  SweepResult best;
  best.threshold = static_cast<double>(scores[order[0]]);
  Confusion c;
  int64_t tp = 0, pred_pos = 0;
  size_t k = 0;
  while (k < order.size()) {
    const float s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      ++pred_pos;
      tp += labels[order[k]];
      ++k;
    }
    c.tp = tp;
    c.fp = pred_pos - tp;
    c.fn = total_pos - tp;
    c.tn = static_cast<int64_t>(scores.size()) - pred_pos - c.fn;
    const F1Result f1 = f1_from(c);
    if (f1.f1 >= best.f1.f1) {
      best.f1 = f1;
      best.threshold = static_cast<double>(s);
    }
  }
  return best;
}

namespace {

std::vector<uint8_t> majority_windows(std::span<const uint8_t> labels, size_t window, size_t hop,
                                      bool drop_partial) {
  for (uint8_t l : labels)
    if (l > 1) throw ArgumentError("labels must be 0 or 1");
  std::vector<uint8_t> out;
  if (labels.empty()) return out;
  for (size_t start = 0; start < labels.size(); start += hop) {
    size_t end = start + window;
    if (end > labels.size()) {
      if (drop_partial) break;
      end = labels.size();
    }
    size_t ones = 0;
    for (size_t i = start; i < end; ++i) ones += labels[i];
    out.push_back(2 * ones >= end - start ? 1 : 0);  // ties count as speech
  }
  return out;
}

}  // namespace

std::vector<uint8_t> majority_frame_labels(std::span<const uint8_t> sample_labels, int frame_len,
                                           int hop) {
  if (frame_len <= 0 || hop <= 0) throw ArgumentError("majority_frame_labels: bad frame/hop");
  return majority_windows(sample_labels, static_cast<size_t>(frame_len),
                          static_cast<size_t>(hop), /*drop_partial=*/true);
}

std::vector<uint8_t> majority_step_labels(std::span<const uint8_t> frame_labels, int factor) {
  if (factor <= 0) throw ArgumentError("majority_step_labels: bad factor");
  return majority_windows(frame_labels, static_cast<size_t>(factor),
                          static_cast<size_t>(factor), /*drop_partial=*/false);
}

}  // namespace magicnet
