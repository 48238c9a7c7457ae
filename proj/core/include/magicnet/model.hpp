#pragma once

// The full VAD network: a strided causal-conv front (depthwise prologue plus
// two inverted-bottleneck blocks, total temporal downsampling x8), a 2-layer
// GRU, and a 1-unit classifier head. Provides batch training/inference,
// frame-by-frame streaming inference that matches the batch path, and a
// versioned binary weight format.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "magicnet/errors.hpp"
#include "magicnet/nn.hpp"
#include "magicnet/rng.hpp"
#include "magicnet/tensor.hpp"

namespace magicnet {

struct BlockSpec {
  int kernel = 41;
  int stride = 2;
  bool residual = false;  // identity skip around the block; needs stride 1
};

struct MagicNetConfig {
  int n_mels = 40;
  int width = 20;      // trunk channels
  int expansion = 80;  // inner channels of the bottleneck blocks
  int prologue_kernel = 40;
  int prologue_stride = 2;
  std::vector<BlockSpec> blocks = {{41, 2, false}, {21, 2, false}};
  int gru_layers = 2;
  int gru_hidden = 20;

  void validate() const;
};

// One conv+BN(+ReLU) stage of the front end, in execution order.
struct ConvStage {
  std::string name;  // tensor-name prefix, e.g. "block1.dw"
  ConvSpec spec;
  bool relu = true;
  bool save_residual = false;  // remember this stage's input
  bool add_residual = false;   // add the remembered input to this stage's output
};

std::vector<ConvStage> conv_stages(const MagicNetConfig& config);

struct TensorInfo {
  std::string name;
  std::vector<uint32_t> dims;
  bool trainable = false;
};

// Every tensor the model owns, in canonical order: conv stages (weight,
// bias, then the four BN tensors), GRU layers, classifier, feature stats.
std::vector<TensorInfo> tensor_schema(const MagicNetConfig& config);

struct ParamCountRow {
  std::string layer;
  int64_t trainable = 0;
  int64_t total = 0;  // includes BN running stats / feature stats
};
struct ParamCounts {
  std::vector<ParamCountRow> rows;
  int64_t trainable = 0;
  int64_t total = 0;
};
ParamCounts param_counts(const MagicNetConfig& config);

// Temporal footprint of the conv front end: each output step is a function
// of `frames` input frames (and, through the GRU, of the entire past).
struct ReceptiveField {
  int64_t frames = 0;
  int64_t downsample = 1;
  bool recurrent_unbounded = true;
};
ReceptiveField receptive_field(const MagicNetConfig& config);

// Output steps produced for t input frames (ceil at every strided stage).
int64_t model_out_time(const MagicNetConfig& config, int64_t t);

// ---------------------------------------------------------------------------

template <typename Real>
struct ModelWeights {
  std::map<std::string, Tensor<Real>> tensors;

  const Tensor<Real>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ArgumentError("model: no tensor named " + name);
    return it->second;
  }
  Tensor<Real>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ArgumentError("model: no tensor named " + name);
    return it->second;
  }
};

// Fresh weights: uniform(+-1/sqrt(fan_in)) for conv and classifier tensors,
// uniform(+-1/sqrt(hidden)) for the GRU, identity BN, unit feature stats.
template <typename Real>
ModelWeights<Real> build_weights(const MagicNetConfig& config, uint64_t seed);

template <typename Real>
struct ModelCache {
  Tensor2D<Real> normalized;
  std::vector<ConvCache<Real>> conv;
  std::vector<BnCache<Real>> bn;
  std::vector<Tensor2D<Real>> pre_relu;  // post-BN pre-ReLU values; empty when no ReLU
  std::vector<GruCache<Real>> gru;
  LinearCache<Real> fc;
  // Smallest |pre-ReLU| seen anywhere in the pass; finite-difference checks
  // use it to notice probes that straddle a ReLU kink.
  double min_abs_pre_relu = std::numeric_limits<double>::infinity();
};

template <typename Real>
struct InferResult {
  std::vector<Real> logits;
  std::vector<Real> probs;
};

// Batch inference: BN uses running statistics, nothing is mutated.
template <typename Real>
InferResult<Real> forward_batch(const MagicNetConfig& config, const ModelWeights<Real>& weights,
                                const Tensor2D<Real>& features);

// Training forward; all intermediates needed for the backward pass are
// cached. In BnMode::train the normalization uses batch statistics and
// updates the running ones in place; any other mode normalizes with the
// frozen running statistics so the forward matches inference exactly.
template <typename Real>
Tensor2D<Real> model_forward_train(const MagicNetConfig& config, ModelWeights<Real>& weights,
                                   const Tensor2D<Real>& features, ModelCache<Real>& cache,
                                   BnMode bn_mode = BnMode::train);

// Gradients of every trainable tensor given d(loss)/d(logits).
template <typename Real>
std::map<std::string, Tensor<Real>> backward_from_logits(const MagicNetConfig& config,
                                                         const ModelWeights<Real>& weights,
                                                         const ModelCache<Real>& cache,
                                                         const Tensor2D<Real>& dlogits);

// ---------------------------------------------------------------------------
// streaming inference

template <typename Real>
struct ConvStreamState {
  std::vector<Real> ring;  // kernel-1 column slots, slot-major
  int64_t pushed = 0;
};

// Per-stream state; holds a pointer to the weights, which must outlive it.
template <typename Real>
struct StreamState {
  MagicNetConfig config;
  const ModelWeights<Real>* weights = nullptr;
  std::vector<ConvStage> stages;
  std::vector<ConvStreamState<Real>> conv;
  std::vector<std::vector<Real>> residual;  // saved skip column per stage
  std::vector<std::vector<Real>> gru_h;
  int64_t frames_pushed = 0;
  int64_t emitted = 0;
};

template <typename Real>
StreamState<Real> make_stream_state(const MagicNetConfig& config,
                                    const ModelWeights<Real>& weights);

// Push one feature frame (n_mels raw log-mel values, not yet normalized).
// Returns true when the network produced its next output step, with the
// speech probability written to *prob. Produces the same sequence of
// probabilities as forward_batch on the same frames.
template <typename Real>
bool stream_push(StreamState<Real>& state, std::span<const Real> frame, Real* prob);

// ---------------------------------------------------------------------------
// serialization (f32 on disk regardless of the in-memory scalar type)

template <typename Real>
void save_weights(const ModelWeights<Real>& weights, const std::filesystem::path& path);

template <typename Real>
ModelWeights<Real> load_weights(const std::filesystem::path& path, const MagicNetConfig& config);

// ---------------------------------------------------------------------------
// implementation

namespace detail {

template <typename Real>
GruWeightsView<Real> gru_views(const ModelWeights<Real>& w, int layer) {
  const std::string p = "gru.l" + std::to_string(layer) + ".";
  return {&w.at(p + "w_ih"), &w.at(p + "w_hh"), &w.at(p + "b_ih"), &w.at(p + "b_hh")};
}

template <typename Real>
Tensor2D<Real> apply_feature_stats(const ModelWeights<Real>& w, const Tensor2D<Real>& features) {
  const Tensor<Real>& mean = w.at("feat.mean");
  const Tensor<Real>& std_ = w.at("feat.std");
  if (features.channels != static_cast<int64_t>(mean.dims[0]))
    throw ShapeError("model: feature channel count mismatch");
  Tensor2D<Real> out(features.channels, features.time);
  for (int64_t c = 0; c < features.channels; ++c) {
    const Real mu = mean.data[c];
    const Real inv = Real(1) / std_.data[c];
    const Real* x = features.row(c);
    Real* y = out.row(c);
    for (int64_t t = 0; t < features.time; ++t) y[t] = (x[t] - mu) * inv;
  }
  return out;
}

}  // namespace detail

template <typename Real>
ModelWeights<Real> build_weights(const MagicNetConfig& config, uint64_t seed) {
  config.validate();
  ModelWeights<Real> w;
  Rng rng(seed);

  auto uniform_fill = [&](Tensor<Real>& t, double bound) {
    for (Real& v : t.data) v = static_cast<Real>(rng.uniform(-bound, bound));
  };

  for (const TensorInfo& info : tensor_schema(config)) {
    Tensor<Real> t(info.dims);
    const std::string& n = info.name;
    const bool is_gru = n.rfind("gru.", 0) == 0;
    if (is_gru) {
      uniform_fill(t, 1.0 / std::sqrt(static_cast<double>(config.gru_hidden)));
    } else if (n.size() >= 12 && n.compare(n.size() - 12, 12, ".running_var") == 0) {
      std::fill(t.data.begin(), t.data.end(), Real(1));
    } else if (n.size() >= 6 && n.compare(n.size() - 6, 6, ".gamma") == 0) {
      std::fill(t.data.begin(), t.data.end(), Real(1));
    } else if (n == "feat.std") {
      std::fill(t.data.begin(), t.data.end(), Real(1));
    } else if (info.trainable && n.compare(n.size() - 2, 2, ".w") == 0) {
      const double fan_in = t.dims.size() == 3
                                ? static_cast<double>(t.dims[1]) * t.dims[2]
                                : static_cast<double>(t.dims[1]);
      uniform_fill(t, 1.0 / std::sqrt(fan_in));
    } else if (info.trainable && n.compare(n.size() - 2, 2, ".b") == 0) {
      // same bound as the weight it pairs with; t is the bias [out]
      // fan_in recovered from the matching weight tensor written just before
      const Tensor<Real>& wt = w.at(n.substr(0, n.size() - 2) + ".w");
      const double fan_in = wt.dims.size() == 3
                                ? static_cast<double>(wt.dims[1]) * wt.dims[2]
                                : static_cast<double>(wt.dims[1]);
      uniform_fill(t, 1.0 / std::sqrt(fan_in));
    }
    // remaining cases (bn.beta, running_mean, feat.mean) stay zero
    w.tensors.emplace(n, std::move(t));
  }
  return w;
}

template <typename Real>
InferResult<Real> forward_batch(const MagicNetConfig& config, const ModelWeights<Real>& weights,
                                const Tensor2D<Real>& features) {
  config.validate();
  Tensor2D<Real> x = detail::apply_feature_stats(weights, features);

  Tensor2D<Real> saved(0, 0);
  for (const ConvStage& st : conv_stages(config)) {
    if (st.save_residual) saved = x;
    Tensor2D<Real> y = causal_conv1d_forward<Real>(x, weights.at(st.name + ".w"),
                                                   weights.at(st.name + ".b"), st.spec);
    y = batchnorm_infer<Real>(y, weights.at(st.name + ".bn.gamma"),
                              weights.at(st.name + ".bn.beta"),
                              weights.at(st.name + ".bn.running_mean"),
                              weights.at(st.name + ".bn.running_var"));
    if (st.relu) y = relu_forward(y);
    if (st.add_residual) {
      if (y.channels != saved.channels || y.time != saved.time)
        throw ShapeError("model: residual shape mismatch");
      for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += saved.data[i];
    }
    x = std::move(y);
  }

  GruSpec gspec{config.width, config.gru_hidden};
  for (int l = 0; l < config.gru_layers; ++l) {
    x = gru_forward<Real>(gspec, detail::gru_views(weights, l), x);
    gspec.input_size = config.gru_hidden;
  }

  Tensor2D<Real> logits = linear_forward<Real>(x, weights.at("fc.w"), weights.at("fc.b"));

  InferResult<Real> out;
  out.logits.assign(logits.data.begin(), logits.data.end());
  out.probs.resize(out.logits.size());
  for (size_t i = 0; i < out.logits.size(); ++i) out.probs[i] = sigmoid(out.logits[i]);
  return out;
}

template <typename Real>
Tensor2D<Real> model_forward_train(const MagicNetConfig& config, ModelWeights<Real>& weights,
                                   const Tensor2D<Real>& features, ModelCache<Real>& cache,
                                   BnMode bn_mode) {
  config.validate();
  // caller picks batch statistics (warmup) or the settled running estimates
  const BnMode bn = bn_mode == BnMode::train ? BnMode::train : BnMode::frozen;
  const auto stages = conv_stages(config);
  cache.conv.assign(stages.size(), {});
  cache.bn.assign(stages.size(), {});
  cache.pre_relu.assign(stages.size(), Tensor2D<Real>(0, 0));
  cache.gru.assign(config.gru_layers, {});
  cache.min_abs_pre_relu = std::numeric_limits<double>::infinity();

  cache.normalized = detail::apply_feature_stats(weights, features);
  Tensor2D<Real> x = cache.normalized;

  Tensor2D<Real> saved(0, 0);
  for (size_t i = 0; i < stages.size(); ++i) {
    const ConvStage& st = stages[i];
    if (st.save_residual) saved = x;
    Tensor2D<Real> y = causal_conv1d_forward<Real>(x, weights.at(st.name + ".w"),
                                                   weights.at(st.name + ".b"), st.spec,
                                                   &cache.conv[i]);
    y = batchnorm_forward<Real>(y, weights.at(st.name + ".bn.gamma"),
                                weights.at(st.name + ".bn.beta"),
                                weights.at(st.name + ".bn.running_mean"),
                                weights.at(st.name + ".bn.running_var"), bn,
                                &cache.bn[i]);
    if (st.relu) {
      cache.pre_relu[i] = y;
      for (const Real v : y.data) {
        const double a = std::abs(static_cast<double>(v));
        if (a < cache.min_abs_pre_relu) cache.min_abs_pre_relu = a;
      }
      y = relu_forward(y);
    }
    if (st.add_residual) {
      if (y.channels != saved.channels || y.time != saved.time)
        throw ShapeError("model: residual shape mismatch");
      for (size_t j = 0; j < y.data.size(); ++j) y.data[j] += saved.data[j];
    }
    x = std::move(y);
  }

  GruSpec gspec{config.width, config.gru_hidden};
  for (int l = 0; l < config.gru_layers; ++l) {
    x = gru_forward<Real>(gspec, detail::gru_views(weights, l), x, &cache.gru[l]);
    gspec.input_size = config.gru_hidden;
  }

  return linear_forward<Real>(x, weights.at("fc.w"), weights.at("fc.b"), &cache.fc);
}

template <typename Real>
std::map<std::string, Tensor<Real>> backward_from_logits(const MagicNetConfig& config,
                                                         const ModelWeights<Real>& weights,
                                                         const ModelCache<Real>& cache,
                                                         const Tensor2D<Real>& dlogits) {
  std::map<std::string, Tensor<Real>> grads;
  for (const TensorInfo& info : tensor_schema(config)) {
    if (!info.trainable) continue;
    Tensor<Real> g(info.dims);
    std::fill(g.data.begin(), g.data.end(), Real(0));
    grads.emplace(info.name, std::move(g));
  }

  Tensor2D<Real> g = linear_backward<Real>(dlogits, weights.at("fc.w"), cache.fc,
                                           grads.at("fc.w"), grads.at("fc.b"));

  GruSpec gspec{config.width, config.gru_hidden};
  for (int l = config.gru_layers - 1; l >= 0; --l) {
    const std::string p = "gru.l" + std::to_string(l) + ".";
    GruSpec spec = gspec;
    spec.input_size = l == 0 ? config.width : config.gru_hidden;
    GruGradsView<Real> gv{&grads.at(p + "w_ih"), &grads.at(p + "w_hh"), &grads.at(p + "b_ih"),
                          &grads.at(p + "b_hh")};
    g = gru_backward<Real>(spec, detail::gru_views(weights, l), cache.gru[l], g, gv);
  }

  const auto stages = conv_stages(config);
  Tensor2D<Real> pending(0, 0);
  bool have_pending = false;
  for (size_t ri = stages.size(); ri-- > 0;) {
    const ConvStage& st = stages[ri];
    if (st.add_residual) {
      pending = g;
      have_pending = true;
    }
    if (st.relu) g = relu_backward<Real>(cache.pre_relu[ri], g);
    g = batchnorm_backward<Real>(g, weights.at(st.name + ".bn.gamma"), cache.bn[ri],
                                 grads.at(st.name + ".bn.gamma"),
                                 grads.at(st.name + ".bn.beta"));
    g = causal_conv1d_backward<Real>(g, weights.at(st.name + ".w"), st.spec, cache.conv[ri],
                                     grads.at(st.name + ".w"), grads.at(st.name + ".b"));
    if (st.save_residual && have_pending) {
      if (g.channels != pending.channels || g.time != pending.time)
        throw ShapeError("model: residual gradient shape mismatch");
      for (size_t j = 0; j < g.data.size(); ++j) g.data[j] += pending.data[j];
      have_pending = false;
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename Real>
StreamState<Real> make_stream_state(const MagicNetConfig& config,
                                    const ModelWeights<Real>& weights) {
  config.validate();
  StreamState<Real> st;
  st.config = config;
  st.weights = &weights;
  st.stages = conv_stages(config);
  st.conv.resize(st.stages.size());
  st.residual.resize(st.stages.size());
  for (size_t i = 0; i < st.stages.size(); ++i) {
    const ConvSpec& s = st.stages[i].spec;
    st.conv[i].ring.assign(static_cast<size_t>(s.in_channels) * (s.kernel - 1), Real(0));
  }
  st.gru_h.assign(config.gru_layers, std::vector<Real>(config.gru_hidden, Real(0)));
  return st;
}

namespace detail {

// One column through one conv stage. Summation order matches the batch
// kernel exactly so streaming output is bit-identical to batch output.
template <typename Real>
bool conv_stream_push(const ConvSpec& spec, const Tensor<Real>& weight, const Tensor<Real>& bias,
                      ConvStreamState<Real>& st, const Real* x_col, Real* out_col) {
  const int k = spec.kernel;
  const int ipg = spec.in_channels / spec.groups;
  const int opg = spec.out_channels / spec.groups;
  const int64_t n = st.pushed;
  const bool emit = n % spec.stride == 0;

  if (emit) {
    const int64_t t0 = n - (k - 1);
    for (int oc = 0; oc < spec.out_channels; ++oc) {
      const int grp = oc / opg;
      const Real* w = weight.data.data() + static_cast<size_t>(oc) * ipg * k;
      Real acc = bias.data[oc];
      for (int ic = 0; ic < ipg; ++ic) {
        const int ch = grp * ipg + ic;
        const Real* wr = w + static_cast<size_t>(ic) * k;
        const int k_lo = t0 < 0 ? static_cast<int>(-t0) : 0;
        for (int kk = k_lo; kk < k; ++kk) {
          const int64_t t = t0 + kk;
          const Real v = t == n ? x_col[ch]
                                : st.ring[static_cast<size_t>(t % (k - 1)) * spec.in_channels + ch];
          acc += wr[kk] * v;
        }
      }
      out_col[oc] = acc;
    }
  }
  if (k > 1) {
    Real* slot = st.ring.data() + static_cast<size_t>(n % (k - 1)) * spec.in_channels;
    for (int c = 0; c < spec.in_channels; ++c) slot[c] = x_col[c];
  }
  ++st.pushed;
  return emit;
}

}  // namespace detail

template <typename Real>
bool stream_push(StreamState<Real>& state, std::span<const Real> frame, Real* prob) {
  const ModelWeights<Real>& w = *state.weights;
  const Tensor<Real>& fmean = w.at("feat.mean");
  const Tensor<Real>& fstd = w.at("feat.std");
  if (frame.size() != fmean.dims[0]) throw ShapeError("stream_push: frame size mismatch");

  std::vector<Real> col(frame.size());
  for (size_t c = 0; c < frame.size(); ++c)
    col[c] = (frame[c] - fmean.data[c]) * (Real(1) / fstd.data[c]);
  ++state.frames_pushed;

  std::vector<Real> next;
  for (size_t i = 0; i < state.stages.size(); ++i) {
    const ConvStage& st = state.stages[i];
    if (st.save_residual) state.residual[i] = col;
    next.resize(st.spec.out_channels);
    if (!detail::conv_stream_push(st.spec, w.at(st.name + ".w"), w.at(st.name + ".b"),
                                  state.conv[i], col.data(), next.data()))
      return false;  // this column was absorbed by a strided stage

    const Tensor<Real>& gamma = w.at(st.name + ".bn.gamma");
    const Tensor<Real>& beta = w.at(st.name + ".bn.beta");
    const Tensor<Real>& rmean = w.at(st.name + ".bn.running_mean");
    const Tensor<Real>& rvar = w.at(st.name + ".bn.running_var");
    for (int c = 0; c < st.spec.out_channels; ++c) {
      const Real inv_std = Real(1) / std::sqrt(rvar.data[c] + Real(1e-5));
      next[c] = gamma.data[c] * ((next[c] - rmean.data[c]) * inv_std) + beta.data[c];
    }
    if (st.relu)
      for (Real& v : next) v = v > Real(0) ? v : Real(0);
    if (st.add_residual) {
      // find the matching saved column (the nearest save at or before i)
      for (size_t j = i + 1; j-- > 0;) {
        if (state.stages[j].save_residual && !state.residual[j].empty()) {
          for (size_t c = 0; c < next.size(); ++c) next[c] += state.residual[j][c];
          break;
        }
      }
    }
    col = next;
  }

  GruSpec gspec{state.config.width, state.config.gru_hidden};
  std::vector<Real> ih(3 * state.config.gru_hidden);
  for (int l = 0; l < state.config.gru_layers; ++l) {
    gspec.input_size = l == 0 ? state.config.width : state.config.gru_hidden;
    gru_step<Real>(gspec, detail::gru_views(w, l), col.data(), state.gru_h[l].data(), ih.data());
    col = state.gru_h[l];
  }

  const Tensor<Real>& fw = w.at("fc.w");
  const Tensor<Real>& fb = w.at("fc.b");
  Real acc = fb.data[0];
  for (size_t c = 0; c < col.size(); ++c) acc += fw.data[c] * col[c];
  *prob = sigmoid(acc);
  ++state.emitted;
  return true;
}

// ---------------------------------------------------------------------------

namespace detail {

constexpr char kWeightMagic[4] = {'M', 'G', 'N', 'T'};
constexpr uint32_t kWeightVersion = 1;
constexpr size_t kMaxTensorNameLen = 512;
constexpr size_t kMaxTensorRank = 8;
constexpr uint64_t kMaxTensorElems = 100'000'000;
constexpr uint32_t kMaxTensorCount = 10'000;

void append_u16(std::vector<uint8_t>& out, uint16_t v);
void append_u32(std::vector<uint8_t>& out, uint32_t v);
void append_f32(std::vector<uint8_t>& out, float v);
void write_file_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);

// Cursor over the serialized byte stream; throws LoadError(truncated).
struct ByteReader {
  const uint8_t* p = nullptr;
  size_t remaining = 0;
  void need(size_t n) const {
    if (n > remaining) throw LoadError(LoadErrorCode::truncated, "weight file ends mid-record");
  }
  uint16_t u16();
  uint32_t u32();
  float f32();
  std::string bytes(size_t n);
};

}  // namespace detail

template <typename Real>
void save_weights(const ModelWeights<Real>& weights, const std::filesystem::path& path) {
  if (weights.tensors.size() > detail::kMaxTensorCount)
    throw ArgumentError("save_weights: too many tensors");
  std::vector<uint8_t> out;
  out.insert(out.end(), detail::kWeightMagic, detail::kWeightMagic + 4);
  detail::append_u32(out, detail::kWeightVersion);
  detail::append_u32(out, static_cast<uint32_t>(weights.tensors.size()));
  for (const auto& [name, t] : weights.tensors) {  // std::map: sorted, deterministic
    if (name.size() > detail::kMaxTensorNameLen)
      throw ArgumentError("save_weights: tensor name too long: " + name);
    if (t.dims.size() > detail::kMaxTensorRank)
      throw ArgumentError("save_weights: tensor rank too high: " + name);
    detail::append_u16(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<uint8_t>(t.dims.size()));
    for (uint32_t d : t.dims) detail::append_u32(out, d);
    for (Real v : t.data) detail::append_f32(out, static_cast<float>(v));
  }
  detail::write_file_bytes(path, out);
}

template <typename Real>
ModelWeights<Real> load_weights(const std::filesystem::path& path,
                                const MagicNetConfig& config) {
  const std::vector<uint8_t> bytes = detail::read_file_bytes(path);
  detail::ByteReader r{bytes.data(), bytes.size()};

  const std::string magic = r.bytes(4);
  if (magic != std::string(detail::kWeightMagic, 4))
    throw LoadError(LoadErrorCode::bad_magic, "not a weight file (bad magic)");
  const uint32_t version = r.u32();
  if (version != detail::kWeightVersion)
    throw LoadError(LoadErrorCode::bad_version,
                    "unsupported weight file version " + std::to_string(version));
  const uint32_t count = r.u32();
  if (count > detail::kMaxTensorCount)
    throw LoadError(LoadErrorCode::bad_metadata,
                    "implausible tensor count " + std::to_string(count));

  std::map<std::string, TensorInfo> schema;
  for (TensorInfo& info : tensor_schema(config)) schema.emplace(info.name, std::move(info));

  ModelWeights<Real> w;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    if (name_len == 0 || name_len > detail::kMaxTensorNameLen)
      throw LoadError(LoadErrorCode::bad_metadata,
                      "implausible tensor name length " + std::to_string(name_len));
    const std::string name = r.bytes(name_len);
    r.need(1);
    const uint8_t rank = *r.p;
    r.p += 1;
    r.remaining -= 1;
    if (rank > detail::kMaxTensorRank)
      throw LoadError(LoadErrorCode::bad_metadata, name + ": implausible rank");
    std::vector<uint32_t> dims(rank);
    uint64_t elems = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      dims[d] = r.u32();
      elems *= dims[d];
      if (elems > detail::kMaxTensorElems)
        throw LoadError(LoadErrorCode::bad_metadata, name + ": implausible element count");
    }

    auto it = schema.find(name);
    if (it == schema.end())
      throw LoadError(LoadErrorCode::unknown_tensor, "unexpected tensor " + name);
    if (w.tensors.count(name))
      throw LoadError(LoadErrorCode::duplicate_tensor, "tensor " + name + " appears twice");
    if (dims != it->second.dims)
      throw LoadError(LoadErrorCode::shape_mismatch, "tensor " + name + " has the wrong shape");

    Tensor<Real> t(dims);
    for (size_t e = 0; e < t.data.size(); ++e) t.data[e] = static_cast<Real>(r.f32());
    w.tensors.emplace(name, std::move(t));
  }
  if (r.remaining != 0)
    throw LoadError(LoadErrorCode::bad_metadata, "trailing bytes after last tensor");
  for (const auto& [name, info] : schema) {
    if (!w.tensors.count(name))
      throw LoadError(LoadErrorCode::missing_tensor, "tensor " + name + " is missing");
  }
  return w;
}

}  // namespace magicnet
