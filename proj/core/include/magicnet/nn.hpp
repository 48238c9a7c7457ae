#pragma once

// Small dense NN kernels for 1-D sequence models: causal grouped convolution,
// batch norm, ReLU, GRU, fully-connected, BCE-with-logits, Adam. Everything
// is templated on the scalar type so gradient checks can run in double while
// training and inference run in float. Activations are Tensor2D laid out
// [channels, time]; parameters are rank-tagged Tensor values.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "magicnet/errors.hpp"
#include "magicnet/tensor.hpp"

namespace magicnet {

// ---------------------------------------------------------------------------
// causal 1-D convolution

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int groups = 1;

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0) throw ConfigError("conv: channels must be positive");
    if (kernel <= 0 || stride <= 0) throw ConfigError("conv: kernel and stride must be positive");
    if (groups <= 0 || in_channels % groups != 0 || out_channels % groups != 0)
      throw ConfigError("conv: groups must divide both channel counts");
  }
  // ceil-mode output length for input length t
  int64_t out_time(int64_t t) const { return (t + stride - 1) / stride; }
};

template <typename Real>
struct ConvCache {
  Tensor2D<Real> input;
};

// Causal convolution: the input is implicitly left-padded with kernel-1
// zeros, so output step j sees input columns [stride*j - kernel + 1,
// stride*j] and never looks ahead. Weight layout [out, in/groups, kernel].
template <typename Real>
Tensor2D<Real> causal_conv1d_forward(const Tensor2D<Real>& input, const Tensor<Real>& weight,
                                     const Tensor<Real>& bias, const ConvSpec& spec,
                                     ConvCache<Real>* cache = nullptr) {
  spec.validate();
  const int ipg = spec.in_channels / spec.groups;
  const int opg = spec.out_channels / spec.groups;
  if (weight.dims != std::vector<uint32_t>{static_cast<uint32_t>(spec.out_channels),
                                           static_cast<uint32_t>(ipg),
                                           static_cast<uint32_t>(spec.kernel)})
    throw ShapeError("conv: weight shape mismatch");
  if (bias.dims != std::vector<uint32_t>{static_cast<uint32_t>(spec.out_channels)})
    throw ShapeError("conv: bias shape mismatch");
  if (input.channels != spec.in_channels) throw ShapeError("conv: input channel mismatch");

  const int64_t t_in = input.time;
  const int64_t t_out = spec.out_time(t_in);
  Tensor2D<Real> out(spec.out_channels, t_out);

  for (int oc = 0; oc < spec.out_channels; ++oc) {
    const int g = oc / opg;
    const Real* w = weight.data.data() + static_cast<size_t>(oc) * ipg * spec.kernel;
    Real* orow = out.row(oc);
    for (int64_t j = 0; j < t_out; ++j) {
      Real acc = bias.data[oc];
      const int64_t t0 = static_cast<int64_t>(spec.stride) * j - (spec.kernel - 1);
      for (int ic = 0; ic < ipg; ++ic) {
        const Real* xr = input.row(g * ipg + ic);
        const Real* wr = w + static_cast<size_t>(ic) * spec.kernel;
        const int k_lo = t0 < 0 ? static_cast<int>(-t0) : 0;
        for (int k = k_lo; k < spec.kernel; ++k) acc += wr[k] * xr[t0 + k];
      }
      orow[j] = acc;
    }
  }
  if (cache) cache->input = input;
  return out;
}

// Gradients w.r.t. input, weight and bias. dweight/dbias are accumulated
// into (callers zero them once per batch).
template <typename Real>
Tensor2D<Real> causal_conv1d_backward(const Tensor2D<Real>& dout, const Tensor<Real>& weight,
                                      const ConvSpec& spec, const ConvCache<Real>& cache,
                                      Tensor<Real>& dweight, Tensor<Real>& dbias) {
  const Tensor2D<Real>& input = cache.input;
  const int ipg = spec.in_channels / spec.groups;
  const int opg = spec.out_channels / spec.groups;
  if (dout.channels != spec.out_channels || dout.time != spec.out_time(input.time))
    throw ShapeError("conv backward: dout shape mismatch");
  if (dweight.dims != weight.dims) throw ShapeError("conv backward: dweight shape mismatch");
  if (dbias.dims != std::vector<uint32_t>{static_cast<uint32_t>(spec.out_channels)})
    throw ShapeError("conv backward: dbias shape mismatch");

  Tensor2D<Real> dx(input.channels, input.time);
  std::fill(dx.data.begin(), dx.data.end(), Real(0));

  for (int oc = 0; oc < spec.out_channels; ++oc) {
    const int g = oc / opg;
    const Real* w = weight.data.data() + static_cast<size_t>(oc) * ipg * spec.kernel;
    Real* dw = dweight.data.data() + static_cast<size_t>(oc) * ipg * spec.kernel;
    const Real* gout = dout.row(oc);
    for (int64_t j = 0; j < dout.time; ++j) {
      const Real go = gout[j];
      dbias.data[oc] += go;
      const int64_t t0 = static_cast<int64_t>(spec.stride) * j - (spec.kernel - 1);
      for (int ic = 0; ic < ipg; ++ic) {
        const Real* xr = input.row(g * ipg + ic);
        Real* dxr = dx.row(g * ipg + ic);
        const Real* wr = w + static_cast<size_t>(ic) * spec.kernel;
        Real* dwr = dw + static_cast<size_t>(ic) * spec.kernel;
        const int k_lo = t0 < 0 ? static_cast<int>(-t0) : 0;
        for (int k = k_lo; k < spec.kernel; ++k) {
          dwr[k] += go * xr[t0 + k];
          dxr[t0 + k] += go * wr[k];
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// batch normalization (per channel, statistics over time)
//
// frozen mode normalizes with the (fixed) running estimates like infer mode,
// but fills the cache so the backward pass works; gradients then treat the
// statistics as constants. Training with frozen statistics keeps the forward
// pass identical to inference, which matters once the running estimates have
// settled: per-segment batch statistics amount to utterance-level
// normalization the deployed model never gets to see.

enum class BnMode { train, frozen, infer };

template <typename Real>
struct BnCache {
  Tensor2D<Real> x_hat;
  std::vector<Real> inv_std;
  bool frozen_stats = false;  // statistics were constants in the forward pass
};

// Train mode normalizes with the current batch statistics (biased variance)
// and updates the running estimates in place (unbiased variance, classic
// momentum update). Infer mode uses the running estimates only, so each
// output column depends on nothing but its own input column.
template <typename Real>
Tensor2D<Real> batchnorm_forward(const Tensor2D<Real>& input, const Tensor<Real>& gamma,
                                 const Tensor<Real>& beta, Tensor<Real>& running_mean,
                                 Tensor<Real>& running_var, BnMode mode,
                                 BnCache<Real>* cache = nullptr, Real momentum = Real(0.1),
                                 Real eps = Real(1e-5)) {
  const int64_t c_n = input.channels;
  const int64_t t_n = input.time;
  const auto want = std::vector<uint32_t>{static_cast<uint32_t>(c_n)};
  if (gamma.dims != want || beta.dims != want || running_mean.dims != want ||
      running_var.dims != want)
    throw ShapeError("batchnorm: parameter shape mismatch");
  if (mode == BnMode::train && t_n < 2)
    throw ArgumentError("batchnorm: training needs at least 2 time steps");

  Tensor2D<Real> out(c_n, t_n);
  if (cache) {
    cache->x_hat = Tensor2D<Real>(c_n, t_n);
    cache->inv_std.resize(c_n);
    cache->frozen_stats = mode != BnMode::train;
  }

  for (int64_t c = 0; c < c_n; ++c) {
    const Real* x = input.row(c);
    Real* y = out.row(c);
    Real mu, var;
    if (mode == BnMode::train) {
      double s = 0, s2 = 0;
      for (int64_t t = 0; t < t_n; ++t) {
        s += x[t];
        s2 += static_cast<double>(x[t]) * x[t];
      }
      const double m = s / static_cast<double>(t_n);
      const double v = std::max(s2 / static_cast<double>(t_n) - m * m, 0.0);
      mu = static_cast<Real>(m);
      var = static_cast<Real>(v);
      const double unbiased = v * static_cast<double>(t_n) / static_cast<double>(t_n - 1);
      running_mean.data[c] =
          (Real(1) - momentum) * running_mean.data[c] + momentum * mu;
      running_var.data[c] =
          (Real(1) - momentum) * running_var.data[c] + momentum * static_cast<Real>(unbiased);
    } else {
      mu = running_mean.data[c];
      var = running_var.data[c];
    }
    const Real inv_std = Real(1) / std::sqrt(var + eps);
    const Real g = gamma.data[c];
    const Real b = beta.data[c];
    for (int64_t t = 0; t < t_n; ++t) {
      const Real xh = (x[t] - mu) * inv_std;
      y[t] = g * xh + b;
      if (cache) cache->x_hat.at(c, t) = xh;
    }
    if (cache) cache->inv_std[c] = inv_std;
  }
  return out;
}

// Inference-mode normalization against fixed statistics; const-clean
// (batchnorm_forward in infer mode computes the same values but takes
// mutable references so both modes share one signature).
template <typename Real>
Tensor2D<Real> batchnorm_infer(const Tensor2D<Real>& input, const Tensor<Real>& gamma,
                               const Tensor<Real>& beta, const Tensor<Real>& mean,
                               const Tensor<Real>& var, Real eps = Real(1e-5)) {
  const int64_t c_n = input.channels;
  const auto want = std::vector<uint32_t>{static_cast<uint32_t>(c_n)};
  if (gamma.dims != want || beta.dims != want || mean.dims != want || var.dims != want)
    throw ShapeError("batchnorm: parameter shape mismatch");
  Tensor2D<Real> out(c_n, input.time);
  for (int64_t c = 0; c < c_n; ++c) {
    const Real inv_std = Real(1) / std::sqrt(var.data[c] + eps);
    const Real mu = mean.data[c];
    const Real g = gamma.data[c];
    const Real b = beta.data[c];
    const Real* x = input.row(c);
    Real* y = out.row(c);
    for (int64_t t = 0; t < input.time; ++t) y[t] = g * ((x[t] - mu) * inv_std) + b;
  }
  return out;
}

// Backward through the normalization. With train-mode statistics the batch
// mean/variance are part of the graph; with frozen statistics they are
// constants and dx reduces to a per-channel scale. dgamma/dbeta are
// accumulated into.
template <typename Real>
Tensor2D<Real> batchnorm_backward(const Tensor2D<Real>& dout, const Tensor<Real>& gamma,
                                  const BnCache<Real>& cache, Tensor<Real>& dgamma,
                                  Tensor<Real>& dbeta) {
  const int64_t c_n = dout.channels;
  const int64_t t_n = dout.time;
  if (cache.x_hat.channels != c_n || cache.x_hat.time != t_n)
    throw ShapeError("batchnorm backward: cache shape mismatch");

  Tensor2D<Real> dx(c_n, t_n);
  for (int64_t c = 0; c < c_n; ++c) {
    const Real* dy = dout.row(c);
    const Real* xh = cache.x_hat.row(c);
    Real* dxr = dx.row(c);
    double sum_dy = 0, sum_dy_xh = 0;
    for (int64_t t = 0; t < t_n; ++t) {
      sum_dy += dy[t];
      sum_dy_xh += static_cast<double>(dy[t]) * xh[t];
    }
    dgamma.data[c] += static_cast<Real>(sum_dy_xh);
    dbeta.data[c] += static_cast<Real>(sum_dy);
    const Real g_inv = gamma.data[c] * cache.inv_std[c];
    if (cache.frozen_stats) {
      for (int64_t t = 0; t < t_n; ++t) dxr[t] = g_inv * dy[t];
      continue;
    }
    const Real inv_n = Real(1) / static_cast<Real>(t_n);
    for (int64_t t = 0; t < t_n; ++t) {
      dxr[t] = g_inv * (dy[t] - static_cast<Real>(sum_dy) * inv_n -
                        xh[t] * static_cast<Real>(sum_dy_xh) * inv_n);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename Real>
Tensor2D<Real> relu_forward(const Tensor2D<Real>& input) {
  Tensor2D<Real> out = input;
  for (Real& v : out.data) v = v > Real(0) ? v : Real(0);
  return out;
}

template <typename Real>
Tensor2D<Real> relu_backward(const Tensor2D<Real>& pre_activation, const Tensor2D<Real>& dout) {
  if (pre_activation.channels != dout.channels || pre_activation.time != dout.time)
    throw ShapeError("relu backward: shape mismatch");
  Tensor2D<Real> dx = dout;
  for (size_t i = 0; i < dx.data.size(); ++i)
    if (pre_activation.data[i] <= Real(0)) dx.data[i] = Real(0);
  return dx;
}

// ---------------------------------------------------------------------------
// scalar activations

template <typename Real>
Real sigmoid(Real x) {
  if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

// ---------------------------------------------------------------------------
// GRU

struct GruSpec {
  int input_size = 0;
  int hidden_size = 0;
  void validate() const {
    if (input_size <= 0 || hidden_size <= 0) throw ConfigError("gru: sizes must be positive");
  }
};

// Gate rows are stacked [update; reset; candidate] in all 3H-row tensors.
// The hidden-side candidate bias sits outside the reset gate:
//   n = tanh(W_n x + b_n + r * (U_n h) + c_n)
// so the reset gate scales only the recurrent projection of h.
template <typename Real>
struct GruWeightsView {
  const Tensor<Real>* w_ih = nullptr;  // [3H, In]
  const Tensor<Real>* w_hh = nullptr;  // [3H, H]
  const Tensor<Real>* b_ih = nullptr;  // [3H]
  const Tensor<Real>* b_hh = nullptr;  // [3H]
};

template <typename Real>
struct GruGradsView {
  Tensor<Real>* w_ih = nullptr;
  Tensor<Real>* w_hh = nullptr;
  Tensor<Real>* b_ih = nullptr;
  Tensor<Real>* b_hh = nullptr;
};

template <typename Real>
struct GruCache {
  Tensor2D<Real> input;   // [In, T]
  Tensor2D<Real> h_prev;  // [H, T], column t holds h_{t-1} (zeros at t=0)
  Tensor2D<Real> z, r, n, u;  // [H, T]; u is the recurrent candidate U_n h_{t-1}
};

namespace detail {

template <typename Real>
void gru_check_shapes(const GruSpec& spec, const GruWeightsView<Real>& w) {
  spec.validate();
  const uint32_t h3 = static_cast<uint32_t>(3 * spec.hidden_size);
  if (!w.w_ih || !w.w_hh || !w.b_ih || !w.b_hh) throw ArgumentError("gru: null weight view");
  if (w.w_ih->dims != std::vector<uint32_t>{h3, static_cast<uint32_t>(spec.input_size)} ||
      w.w_hh->dims != std::vector<uint32_t>{h3, static_cast<uint32_t>(spec.hidden_size)} ||
      w.b_ih->dims != std::vector<uint32_t>{h3} || w.b_hh->dims != std::vector<uint32_t>{h3})
    throw ShapeError("gru: weight shape mismatch");
}

}  // namespace detail

// One GRU step. `ih` scratch must hold 3H values; h is updated in place.
template <typename Real>
void gru_step(const GruSpec& spec, const GruWeightsView<Real>& w, const Real* x, Real* h,
              Real* ih_scratch, Real* z_out = nullptr, Real* r_out = nullptr,
              Real* n_out = nullptr, Real* u_out = nullptr) {
  const int hs = spec.hidden_size;
  const int is = spec.input_size;
  const Real* wih = w.w_ih->data.data();
  const Real* whh = w.w_hh->data.data();
  const Real* bih = w.b_ih->data.data();
  const Real* bhh = w.b_hh->data.data();

  for (int i = 0; i < 3 * hs; ++i) {
    Real acc = bih[i];
    const Real* row = wih + static_cast<size_t>(i) * is;
    for (int j = 0; j < is; ++j) acc += row[j] * x[j];
    ih_scratch[i] = acc;
  }
  // recurrent projections; keep on the stack via alloca-free fixed scratch
  std::vector<Real> uu(3 * hs);
  for (int i = 0; i < 3 * hs; ++i) {
    Real acc = 0;
    const Real* row = whh + static_cast<size_t>(i) * hs;
    for (int j = 0; j < hs; ++j) acc += row[j] * h[j];
    uu[i] = acc;
  }
  for (int i = 0; i < hs; ++i) {
    const Real z = sigmoid(ih_scratch[i] + uu[i] + bhh[i]);
    const Real r = sigmoid(ih_scratch[hs + i] + uu[hs + i] + bhh[hs + i]);
    const Real u = uu[2 * hs + i];
    const Real n = std::tanh(ih_scratch[2 * hs + i] + r * u + bhh[2 * hs + i]);
    if (z_out) z_out[i] = z;
    if (r_out) r_out[i] = r;
    if (n_out) n_out[i] = n;
    if (u_out) u_out[i] = u;
    h[i] = (Real(1) - z) * n + z * h[i];
  }
}

// Full-sequence forward from h0 = 0. Output column t is h_t.
template <typename Real>
Tensor2D<Real> gru_forward(const GruSpec& spec, const GruWeightsView<Real>& w,
                           const Tensor2D<Real>& input, GruCache<Real>* cache = nullptr) {
  detail::gru_check_shapes(spec, w);
  if (input.channels != spec.input_size) throw ShapeError("gru: input channel mismatch");
  const int hs = spec.hidden_size;
  const int64_t t_n = input.time;

  Tensor2D<Real> out(hs, t_n);
  if (cache) {
    cache->input = input;
    cache->h_prev = Tensor2D<Real>(hs, t_n);
    cache->z = Tensor2D<Real>(hs, t_n);
    cache->r = Tensor2D<Real>(hs, t_n);
    cache->n = Tensor2D<Real>(hs, t_n);
    cache->u = Tensor2D<Real>(hs, t_n);
  }

  std::vector<Real> h(hs, Real(0));
  std::vector<Real> x(spec.input_size);
  std::vector<Real> ih(3 * hs);
  std::vector<Real> z(hs), r(hs), n(hs), u(hs);
  for (int64_t t = 0; t < t_n; ++t) {
    for (int j = 0; j < spec.input_size; ++j) x[j] = input.at(j, t);
    if (cache)
      for (int i = 0; i < hs; ++i) cache->h_prev.at(i, t) = h[i];
    gru_step(spec, w, x.data(), h.data(), ih.data(), z.data(), r.data(), n.data(), u.data());
    for (int i = 0; i < hs; ++i) out.at(i, t) = h[i];
    if (cache) {
      for (int i = 0; i < hs; ++i) {
        cache->z.at(i, t) = z[i];
        cache->r.at(i, t) = r[i];
        cache->n.at(i, t) = n[i];
        cache->u.at(i, t) = u[i];
      }
    }
  }
  return out;
}

// Backpropagation through time over the whole sequence.
template <typename Real>
Tensor2D<Real> gru_backward(const GruSpec& spec, const GruWeightsView<Real>& w,
                            const GruCache<Real>& cache, const Tensor2D<Real>& dout,
                            const GruGradsView<Real>& grads) {
  detail::gru_check_shapes(spec, w);
  const int hs = spec.hidden_size;
  const int is = spec.input_size;
  const int64_t t_n = cache.input.time;
  if (dout.channels != hs || dout.time != t_n) throw ShapeError("gru backward: dout shape mismatch");
  if (!grads.w_ih || !grads.w_hh || !grads.b_ih || !grads.b_hh)
    throw ArgumentError("gru backward: null grad view");

  const Real* wih = w.w_ih->data.data();
  const Real* whh = w.w_hh->data.data();
  Tensor2D<Real> dx(is, t_n);
  std::fill(dx.data.begin(), dx.data.end(), Real(0));

  std::vector<Real> dh(hs, Real(0));       // gradient flowing into h_t
  std::vector<Real> da(3 * hs);            // pre-activation grads [z; r; n]
  for (int64_t t = t_n - 1; t >= 0; --t) {
    for (int i = 0; i < hs; ++i) dh[i] += dout.at(i, t);

    for (int i = 0; i < hs; ++i) {
      const Real z = cache.z.at(i, t);
      const Real r = cache.r.at(i, t);
      const Real n = cache.n.at(i, t);
      const Real u = cache.u.at(i, t);
      const Real hp = cache.h_prev.at(i, t);
      const Real dz = dh[i] * (hp - n);
      const Real dn = dh[i] * (Real(1) - z);
      const Real da_n = dn * (Real(1) - n * n);
      const Real dr = da_n * u;
      da[i] = dz * z * (Real(1) - z);
      da[hs + i] = dr * r * (Real(1) - r);
      da[2 * hs + i] = da_n;
    }

    // parameter gradients
    for (int i = 0; i < 3 * hs; ++i) {
      const Real a = da[i];
      grads.b_ih->data[i] += a;
      Real* dwih = grads.w_ih->data.data() + static_cast<size_t>(i) * is;
      for (int j = 0; j < is; ++j) dwih[j] += a * cache.input.at(j, t);
    }
    for (int i = 0; i < hs; ++i) {
      grads.b_hh->data[i] += da[i];
      grads.b_hh->data[hs + i] += da[hs + i];
      grads.b_hh->data[2 * hs + i] += da[2 * hs + i];
    }
    // hidden-side matrices: rows z and r take da; candidate rows take
    // du = da_n * r because u = U_n h enters the cell as r * u.
    for (int i = 0; i < hs; ++i) {
      const Real du = da[2 * hs + i] * cache.r.at(i, t);
      Real* dwz = grads.w_hh->data.data() + static_cast<size_t>(i) * hs;
      Real* dwr = grads.w_hh->data.data() + static_cast<size_t>(hs + i) * hs;
      Real* dwn = grads.w_hh->data.data() + static_cast<size_t>(2 * hs + i) * hs;
      for (int j = 0; j < hs; ++j) {
        const Real hp = cache.h_prev.at(j, t);
        dwz[j] += da[i] * hp;
        dwr[j] += da[hs + i] * hp;
        dwn[j] += du * hp;
      }
    }

    // input gradient: dx_t = W_ih^T da
    for (int i = 0; i < 3 * hs; ++i) {
      const Real a = da[i];
      const Real* row = wih + static_cast<size_t>(i) * is;
      for (int j = 0; j < is; ++j) dx.at(j, t) += a * row[j];
    }

    // gradient into h_{t-1}
    std::vector<Real> dhp(hs, Real(0));
    for (int i = 0; i < hs; ++i) dhp[i] = dh[i] * cache.z.at(i, t);
    for (int i = 0; i < hs; ++i) {
      const Real du = da[2 * hs + i] * cache.r.at(i, t);
      const Real* rz = whh + static_cast<size_t>(i) * hs;
      const Real* rr = whh + static_cast<size_t>(hs + i) * hs;
      const Real* rn = whh + static_cast<size_t>(2 * hs + i) * hs;
      for (int j = 0; j < hs; ++j) dhp[j] += da[i] * rz[j] + da[hs + i] * rr[j] + du * rn[j];
    }
    dh = dhp;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// fully connected

template <typename Real>
struct LinearCache {
  Tensor2D<Real> input;
};

template <typename Real>
Tensor2D<Real> linear_forward(const Tensor2D<Real>& input, const Tensor<Real>& weight,
                              const Tensor<Real>& bias, LinearCache<Real>* cache = nullptr) {
  if (weight.dims.size() != 2 || weight.dims[1] != static_cast<uint32_t>(input.channels))
    throw ShapeError("linear: weight shape mismatch");
  const int out_n = static_cast<int>(weight.dims[0]);
  if (bias.dims != std::vector<uint32_t>{static_cast<uint32_t>(out_n)})
    throw ShapeError("linear: bias shape mismatch");

  Tensor2D<Real> out(out_n, input.time);
  for (int o = 0; o < out_n; ++o) {
    const Real* w = weight.data.data() + static_cast<size_t>(o) * input.channels;
    Real* y = out.row(o);
    for (int64_t t = 0; t < input.time; ++t) {
      Real acc = bias.data[o];
      for (int64_t c = 0; c < input.channels; ++c) acc += w[c] * input.at(c, t);
      y[t] = acc;
    }
  }
  if (cache) cache->input = input;
  return out;
}

template <typename Real>
Tensor2D<Real> linear_backward(const Tensor2D<Real>& dout, const Tensor<Real>& weight,
                               const LinearCache<Real>& cache, Tensor<Real>& dweight,
                               Tensor<Real>& dbias) {
  const Tensor2D<Real>& input = cache.input;
  const int out_n = static_cast<int>(weight.dims[0]);
  if (dout.channels != out_n || dout.time != input.time)
    throw ShapeError("linear backward: dout shape mismatch");

  Tensor2D<Real> dx(input.channels, input.time);
  std::fill(dx.data.begin(), dx.data.end(), Real(0));
  for (int o = 0; o < out_n; ++o) {
    const Real* w = weight.data.data() + static_cast<size_t>(o) * input.channels;
    Real* dw = dweight.data.data() + static_cast<size_t>(o) * input.channels;
    const Real* dy = dout.row(o);
    for (int64_t t = 0; t < input.time; ++t) {
      dbias.data[o] += dy[t];
      for (int64_t c = 0; c < input.channels; ++c) {
        dw[c] += dy[t] * input.at(c, t);
        dx.at(c, t) += dy[t] * w[c];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// binary cross entropy on logits

// Numerically stable fused form: max(l, 0) - l*y + log(1 + exp(-|l|)),
// averaged over all elements.
template <typename Real>
Real bce_with_logits(std::span<const Real> logits, std::span<const Real> targets) {
  if (logits.size() != targets.size() || logits.empty())
    throw ArgumentError("bce: need equal-length non-empty logits and targets");
  double acc = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const double l = logits[i];
    const double y = targets[i];
    acc += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
  }
  return static_cast<Real>(acc / static_cast<double>(logits.size()));
}

// d(loss)/d(logit_i) = (sigmoid(l_i) - y_i) / N for the mean reduction.
template <typename Real>
std::vector<Real> bce_with_logits_grad(std::span<const Real> logits,
                                       std::span<const Real> targets) {
  if (logits.size() != targets.size() || logits.empty())
    throw ArgumentError("bce: need equal-length non-empty logits and targets");
  std::vector<Real> g(logits.size());
  const Real inv_n = Real(1) / static_cast<Real>(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    g[i] = (sigmoid(logits[i]) - targets[i]) * inv_n;
  return g;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Real>
struct AdamState {
  int64_t step = 0;
  std::map<std::string, std::vector<Real>> m;
  std::map<std::string, std::vector<Real>> v;
};

// One update over every tensor named in `grads`. Moment buffers are keyed
// by tensor name and created lazily; the bias-corrected step count is
// shared, incremented once per call.
template <typename Real>
void adam_step(AdamState<Real>& state, const AdamConfig& config,
               std::map<std::string, Tensor<Real>>& params,
               const std::map<std::string, Tensor<Real>>& grads) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (const auto& [name, grad] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ArgumentError("adam: gradient for unknown tensor " + name);
    Tensor<Real>& p = it->second;
    if (p.dims != grad.dims) throw ShapeError("adam: shape mismatch for " + name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.size(), Real(0));
    if (v.empty()) v.assign(p.size(), Real(0));
    for (size_t i = 0; i < p.size(); ++i) {
      const double g = grad.data[i];
      m[i] = static_cast<Real>(config.beta1 * m[i] + (1.0 - config.beta1) * g);
      v[i] = static_cast<Real>(config.beta2 * v[i] + (1.0 - config.beta2) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] -= static_cast<Real>(config.lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

}  // namespace magicnet
