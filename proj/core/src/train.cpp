#include <cmath>
#include <cstdio>
#include <fstream>

#include "magicnet/features.hpp"
#include "magicnet/metrics.hpp"
#include "magicnet/train.hpp"

namespace magicnet {

namespace {

template <typename Real>
struct Segment {
  Tensor2D<Real> features;    // raw log-mel, unnormalized
  std::vector<Real> targets;  // one per model output step
};

template <typename Real>
std::vector<Segment<Real>> load_segments(const MagicNetConfig& model_config,
                                         std::span<const ManifestEntry> manifest,
                                         const FbankExtractor<Real>& fbank) {
  std::vector<Segment<Real>> segments;
  segments.reserve(manifest.size());
  for (const ManifestEntry& entry : manifest) {
    const AudioClip clip = read_wav(entry.wav_path);
    const std::vector<uint8_t> labels = read_labels(entry.label_path);
    if (labels.size() != clip.samples.size())
      throw Error("train: " + entry.wav_path + ": " +
                  std::to_string(clip.samples.size()) + " samples but " +
                  std::to_string(labels.size()) + " labels");

    Segment<Real> seg;
    seg.features = fbank.extract(clip.samples).data;
    const std::vector<uint8_t> steps =
        majority_step_labels(majority_frame_labels(labels),
                             static_cast<int>(receptive_field(model_config).downsample));
    if (static_cast<int64_t>(steps.size()) != model_out_time(model_config, seg.features.time))
      throw Error("train: " + entry.wav_path + ": step label count mismatch");
    seg.targets.assign(steps.begin(), steps.end());
    segments.push_back(std::move(seg));
  }
  return segments;
}

// name of the first tensor containing a non-finite value, or empty
template <typename Real>
std::string first_non_finite(const std::map<std::string, Tensor<Real>>& tensors) {
  for (const auto& [name, t] : tensors)
    for (const Real v : t.data)
      if (!std::isfinite(static_cast<double>(v))) return name;
  return {};
}

template <typename Real>
void accumulate(std::map<std::string, Tensor<Real>>& into,
                const std::map<std::string, Tensor<Real>>& from) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) throw Error("train: gradient accumulator missing " + name);
    for (size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
  }
}

template <typename Real>
double validation_loss(const MagicNetConfig& model_config, const ModelWeights<Real>& weights,
                       const std::vector<Segment<Real>>& segments) {
  double loss_sum = 0.0;
  int64_t steps = 0;
  for (const Segment<Real>& seg : segments) {
    const InferResult<Real> result = forward_batch(model_config, weights, seg.features);
    const Real loss = bce_with_logits<Real>(result.logits, seg.targets);
    loss_sum += static_cast<double>(loss) * static_cast<double>(seg.targets.size());
    steps += static_cast<int64_t>(seg.targets.size());
  }
  return loss_sum / static_cast<double>(steps);
}

}  // namespace

template <typename Real>
TrainResult<Real> train(const MagicNetConfig& model_config, const TrainConfig& config,
                        std::span<const ManifestEntry> corpus,
                        std::span<const ManifestEntry> validation,
                        const std::function<void(const EpochStats&)>& on_epoch) {
  model_config.validate();
  config.validate();
  if (corpus.empty()) throw ArgumentError("train: empty training manifest");
  if (validation.empty()) throw ArgumentError("train: empty validation manifest");

  const FbankExtractor<Real> fbank;
  std::vector<Segment<Real>> train_segs = load_segments(model_config, corpus, fbank);
  std::vector<Segment<Real>> val_segs = load_segments(model_config, validation, fbank);

  ModelWeights<Real> weights = build_weights<Real>(model_config, config.seed);

  {  // feature statistics from the training set, stored with the model
    std::vector<FeatureMatrix<Real>> mats;
    mats.reserve(train_segs.size());
    for (const Segment<Real>& seg : train_segs) mats.push_back({seg.features, 0.010, 0.0125});
    const FeatureNormalizer<Real> norm = fit_normalizer<Real>(mats);
    weights.at("feat.mean").data = norm.mean;
    weights.at("feat.std").data = norm.stddev;
  }

  AdamConfig adam;
  adam.lr = config.lr;
  AdamState<Real> adam_state;

  TrainResult<Real> result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  ModelWeights<Real> best = weights;
  int epochs_since_best = 0;

  std::vector<size_t> order(train_segs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng = Rng::stream(config.seed, 1000 + static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = shuffle_rng.uniform_index(i);
      std::swap(order[i - 1], order[j]);
    }

    const BnMode bn_mode = epoch <= config.bn_warmup_epochs ? BnMode::train : BnMode::frozen;

    double loss_sum = 0.0;
    int64_t step_count = 0;
    for (size_t base = 0; base < order.size(); base += config.batch_segments) {
      const size_t batch_n = std::min<size_t>(config.batch_segments, order.size() - base);
      std::map<std::string, Tensor<Real>> batch_grads;
      for (size_t b = 0; b < batch_n; ++b) {
        const Segment<Real>& seg = train_segs[order[base + b]];
        ModelCache<Real> cache;
        const Tensor2D<Real> logits =
            model_forward_train(model_config, weights, seg.features, cache, bn_mode);
        const Real loss = bce_with_logits<Real>(
            std::span<const Real>(logits.data.data(), logits.data.size()), seg.targets);
        if (!std::isfinite(static_cast<double>(loss))) {
          std::string bad = first_non_finite(weights.tensors);
          if (bad.empty()) bad = "(logits)";
          throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
                      "; first non-finite tensor: " + bad);
        }
        loss_sum += static_cast<double>(loss) * static_cast<double>(seg.targets.size());
        step_count += static_cast<int64_t>(seg.targets.size());

        const std::vector<Real> dlog = bce_with_logits_grad<Real>(
            std::span<const Real>(logits.data.data(), logits.data.size()), seg.targets);
        Tensor2D<Real> dlogits(1, static_cast<int64_t>(dlog.size()));
        dlogits.data = dlog;
        std::map<std::string, Tensor<Real>> grads =
            backward_from_logits(model_config, weights, cache, dlogits);
        if (batch_grads.empty())
          batch_grads = std::move(grads);
        else
          accumulate(batch_grads, grads);
      }
      if (batch_n > 1) {
        const Real inv = Real(1) / static_cast<Real>(batch_n);
        for (auto& [name, g] : batch_grads)
          for (Real& v : g.data) v *= inv;
      }
      adam_step(adam_state, adam, weights.tensors, batch_grads);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(step_count);
    stats.val_loss = validation_loss(model_config, weights, val_segs);
    if (!std::isfinite(stats.val_loss)) {
      std::string bad = first_non_finite(weights.tensors);
      if (bad.empty()) bad = "(logits)";
      throw Error("train: non-finite validation loss at epoch " + std::to_string(epoch) +
                  "; first non-finite tensor: " + bad);
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stats.val_loss < result.best_val_loss) {
      result.best_val_loss = stats.val_loss;
      result.best_epoch = epoch;
      best = weights;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= config.patience_epochs) {
      break;
    }
  }

  result.weights = std::move(best);
  return result;
}

template TrainResult<float> train<float>(const MagicNetConfig&, const TrainConfig&,
                                         std::span<const ManifestEntry>,
                                         std::span<const ManifestEntry>,
                                         const std::function<void(const EpochStats&)>&);
template TrainResult<double> train<double>(const MagicNetConfig&, const TrainConfig&,
                                           std::span<const ManifestEntry>,
                                           std::span<const ManifestEntry>,
                                           const std::function<void(const EpochStats&)>&);

void write_loss_csv(const std::filesystem::path& path, std::span<const EpochStats> history) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot open " + path.string() + " for writing");
  out << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const EpochStats& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss);
    out << buf;
  }
  if (!out) throw ArgumentError("failed writing " + path.string());
}

}  // namespace magicnet
