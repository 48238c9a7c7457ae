#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "magicnet/audio_io.hpp"
#include "magicnet/model.hpp"

namespace magicnet {

struct TrainConfig {
  double lr = 1e-4;
  int batch_segments = 8;       // segments whose gradients are averaged per step
  double segment_len_s = 20.0;  // expected corpus clip length (informational)
  double snr_min_db = 5.0;      // expected corpus SNR range (informational)
  double snr_max_db = 30.0;
  int max_epochs = 100;
  int patience_epochs = 50;  // stop after this many epochs without a new val minimum
  // Epochs that normalize with per-segment batch statistics before the
  // running estimates are frozen. Per-segment statistics act as utterance
  // normalization the inference path doesn't have, so training past the
  // warmup keeps the forward pass consistent with deployment.
  int bn_warmup_epochs = 1;
  uint64_t seed = 0;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (batch_segments < 1) throw ConfigError("train: batch_segments must be >= 1");
    if (snr_min_db > snr_max_db) throw ConfigError("train: SNR range is inverted");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (patience_epochs < 1) throw ConfigError("train: patience must be >= 1");
    if (bn_warmup_epochs < 0) throw ConfigError("train: bn_warmup_epochs must be >= 0");
  }
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

template <typename Real>
struct TrainResult {
  ModelWeights<Real> weights;  // snapshot from the best-validation epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

// Trains from scratch on the corpus manifest, validating each epoch and
// early-stopping on the validation loss. Feature statistics are fitted on
// the training set and stored in the returned weights. Deterministic under
// (seed, corpus); single-threaded.
template <typename Real>
TrainResult<Real> train(const MagicNetConfig& model_config, const TrainConfig& config,
                        std::span<const ManifestEntry> corpus,
                        std::span<const ManifestEntry> validation,
                        const std::function<void(const EpochStats&)>& on_epoch = {});

// CSV `epoch,train_loss,val_loss`, one row per epoch.
void write_loss_csv(const std::filesystem::path& path, std::span<const EpochStats> history);

}  // namespace magicnet
