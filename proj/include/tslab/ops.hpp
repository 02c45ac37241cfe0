#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tslab/rng.hpp"
#include "tslab/tensor.hpp"

namespace tslab {

enum class Mode { train, eval };

enum class PadMode {
  valid,   // no padding; output shrinks by the receptive field
  same,    // zero padding so output length == ceil(N / stride)
  causal,  // (K-1)*dilation zeros on the left only
};

constexpr real kBatchNormEps = 1e-5;
constexpr real kWeightNormEps = 1e-12;

// ---------------------------------------------------------------------------
// conv1d: cross-correlation over [C_in x N] with kernel [C_out x C_in x K].
// ---------------------------------------------------------------------------

inline Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                     std::size_t stride = 1, std::size_t dilation = 1, PadMode pad = PadMode::valid) {
  if (x.rank() != 2) throw dim_error("conv1d: input must be [C_in x N]");
  if (kernel.rank() != 3) throw dim_error("conv1d: kernel must be [C_out x C_in x K]");
  if (stride < 1 || dilation < 1) throw param_error("conv1d: stride and dilation must be >= 1");
  const std::size_t c_in = x.dim(0), n = x.dim(1);
  const std::size_t c_out = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != c_in) {
    throw dim_error("conv1d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                    std::to_string(c_in));
  }
  if (k < 1) throw param_error("conv1d: kernel width must be >= 1");
  if (bias.rank() != 1 || bias.dim(0) != c_out) throw dim_error("conv1d: bias must be [C_out]");

  const std::size_t span = (k - 1) * dilation + 1;
  std::size_t left_pad = 0;
  std::size_t n_out = 0;
  switch (pad) {
    case PadMode::valid:
      if (span > n) {
        throw dim_error("conv1d: receptive field " + std::to_string(span) + " exceeds input length " +
                        std::to_string(n));
      }
      n_out = (n - span) / stride + 1;
      break;
    case PadMode::same: {
      n_out = (n + stride - 1) / stride;
      std::size_t wanted = (n_out - 1) * stride + span;
      std::size_t total = wanted > n ? wanted - n : 0;
      left_pad = total / 2;  // extra zero goes on the right, TF convention
      break;
    }
    case PadMode::causal:
      left_pad = (k - 1) * dilation;
      n_out = (n - 1) / stride + 1;
      break;
  }

  const auto& xv = x.values();
  const auto& kv = kernel.values();
  const auto& bv = bias.values();
  std::vector<real> out(c_out * n_out);
  for (std::size_t oc = 0; oc < c_out; ++oc) {
    for (std::size_t t = 0; t < n_out; ++t) {
      real acc = 0.0;
      const std::ptrdiff_t pos0 = static_cast<std::ptrdiff_t>(t * stride) - static_cast<std::ptrdiff_t>(left_pad);
      for (std::size_t ic = 0; ic < c_in; ++ic) {
        const real* xrow = xv.data() + ic * n;
        const real* krow = kv.data() + (oc * c_in + ic) * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const std::ptrdiff_t p = pos0 + static_cast<std::ptrdiff_t>(kk * dilation);
          if (p >= 0 && p < static_cast<std::ptrdiff_t>(n)) acc += xrow[p] * krow[kk];
        }
      }
      out[oc * n_out + t] = acc + bv[oc];
    }
  }

  auto xn = x.node(); auto kn = kernel.node(); auto bn = bias.node();
  return make_op({c_out, n_out}, std::move(out), {x, kernel, bias},
                 [xn, kn, bn, c_in, n, c_out, k, n_out, stride, dilation, left_pad](detail::Node& self) {
    if (xn->requires_grad) xn->ensure_grad();
    if (kn->requires_grad) kn->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (std::size_t oc = 0; oc < c_out; ++oc) {
      for (std::size_t t = 0; t < n_out; ++t) {
        const real g = self.grad[oc * n_out + t];
        if (g == 0.0) continue;
        if (bn->requires_grad) bn->grad[oc] += g;
        const std::ptrdiff_t pos0 = static_cast<std::ptrdiff_t>(t * stride) - static_cast<std::ptrdiff_t>(left_pad);
        for (std::size_t ic = 0; ic < c_in; ++ic) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const std::ptrdiff_t p = pos0 + static_cast<std::ptrdiff_t>(kk * dilation);
            if (p < 0 || p >= static_cast<std::ptrdiff_t>(n)) continue;
            if (kn->requires_grad) kn->grad[(oc * c_in + ic) * k + kk] += g * xn->values[ic * n + p];
            if (xn->requires_grad) xn->grad[ic * n + p] += g * kn->values[(oc * c_in + ic) * k + kk];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// dense: weight [M x D] * x [D] + bias [M].
// ---------------------------------------------------------------------------

inline Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 1) throw dim_error("dense: input must be rank-1");
  if (weight.rank() != 2) throw dim_error("dense: weight must be [M x D]");
  const std::size_t d = x.size(), m = weight.dim(0);
  if (weight.dim(1) != d) {
    throw dim_error("dense: weight expects input width " + std::to_string(weight.dim(1)) + ", got " +
                    std::to_string(d));
  }
  if (bias.rank() != 1 || bias.dim(0) != m) throw dim_error("dense: bias must be [M]");

  std::vector<real> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    real acc = 0.0;
    const real* wrow = weight.values().data() + i * d;
    for (std::size_t j = 0; j < d; ++j) acc += wrow[j] * x.values()[j];
    out[i] = acc + bias.values()[i];
  }
  auto xn = x.node(); auto wn = weight.node(); auto bn = bias.node();
  return make_op({m}, std::move(out), {x, weight, bias}, [xn, wn, bn, d, m](detail::Node& self) {
    if (xn->requires_grad) xn->ensure_grad();
    if (wn->requires_grad) wn->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const real g = self.grad[i];
      if (g == 0.0) continue;
      if (bn->requires_grad) bn->grad[i] += g;
      for (std::size_t j = 0; j < d; ++j) {
        if (wn->requires_grad) wn->grad[i * d + j] += g * xn->values[j];
        if (xn->requires_grad) xn->grad[j] += g * wn->values[i * d + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling. Max pooling strides by its window; ties route the subgradient to
// the lowest index. Global average pooling reduces [C x N] to [C].
// ---------------------------------------------------------------------------

inline Tensor max_pool1d(const Tensor& x, std::size_t window) {
  if (x.rank() != 2) throw dim_error("max_pool1d: input must be [C x N]");
  if (window < 1) throw param_error("max_pool1d: window must be >= 1");
  const std::size_t c = x.dim(0), n = x.dim(1);
  if (window > n) {
    throw dim_error("max_pool1d: window " + std::to_string(window) + " exceeds length " + std::to_string(n));
  }
  const std::size_t n_out = n / window;
  std::vector<real> out(c * n_out);
  auto argmax = std::make_shared<std::vector<std::size_t>>(c * n_out);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t t = 0; t < n_out; ++t) {
      std::size_t best = ch * n + t * window;
      for (std::size_t w = 1; w < window; ++w) {
        std::size_t idx = ch * n + t * window + w;
        if (x.values()[idx] > x.values()[best]) best = idx;
      }
      out[ch * n_out + t] = x.values()[best];
      (*argmax)[ch * n_out + t] = best;
    }
  }
  auto xn = x.node();
  return make_op({c, n_out}, std::move(out), {x}, [xn, argmax](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i) xn->grad[(*argmax)[i]] += self.grad[i];
  });
}

inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 2) throw dim_error("global_avg_pool: input must be [C x N]");
  const std::size_t c = x.dim(0), n = x.dim(1);
  std::vector<real> out(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    real acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) acc += x.values()[ch * n + t];
    out[ch] = acc / static_cast<real>(n);
  }
  auto xn = x.node();
  return make_op({c}, std::move(out), {x}, [xn, c, n](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const real inv = 1.0 / static_cast<real>(n);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < n; ++t) xn->grad[ch * n + t] += self.grad[ch] * inv;
  });
}

// ---------------------------------------------------------------------------
// Batch normalization over the time axis of a single [C x N] instance,
// per channel. Train mode normalizes by the instance statistics and folds
// them into the running buffers: running <- (1-momentum)*running +
// momentum*stat. Eval mode applies the stored affine map.
// ---------------------------------------------------------------------------

inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         std::vector<real>& running_mean, std::vector<real>& running_var,
                         Mode mode, real momentum = 0.1) {
  if (x.rank() != 2) throw dim_error("batch_norm: input must be [C x N]");
  const std::size_t c = x.dim(0), n = x.dim(1);
  if (gamma.size() != c || beta.size() != c) throw dim_error("batch_norm: gamma/beta must be [C]");
  if (running_mean.size() != c || running_var.size() != c) throw dim_error("batch_norm: running stats must be [C]");

  std::vector<real> out(c * n);
  auto xn = x.node(); auto gn = gamma.node(); auto bn = beta.node();

  if (mode == Mode::train) {
    auto mu = std::make_shared<std::vector<real>>(c);
    auto var = std::make_shared<std::vector<real>>(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      real m = 0.0;
      for (std::size_t t = 0; t < n; ++t) m += x.values()[ch * n + t];
      m /= static_cast<real>(n);
      real v = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const real d = x.values()[ch * n + t] - m;
        v += d * d;
      }
      v /= static_cast<real>(n);
      (*mu)[ch] = m;
      (*var)[ch] = v;
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * m;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * v;
      const real inv_std = 1.0 / std::sqrt(v + kBatchNormEps);
      for (std::size_t t = 0; t < n; ++t) {
        out[ch * n + t] = gamma.values()[ch] * (x.values()[ch * n + t] - m) * inv_std + beta.values()[ch];
      }
    }
    return make_op({c, n}, std::move(out), {x, gamma, beta}, [xn, gn, bn, mu, var, c, n](detail::Node& self) {
      if (xn->requires_grad) xn->ensure_grad();
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        const real inv_std = 1.0 / std::sqrt((*var)[ch] + kBatchNormEps);
        real sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          const real g = self.grad[ch * n + t];
          const real xh = (xn->values[ch * n + t] - (*mu)[ch]) * inv_std;
          sum_g += g;
          sum_gx += g * xh;
        }
        if (bn->requires_grad) bn->grad[ch] += sum_g;
        if (gn->requires_grad) gn->grad[ch] += sum_gx;
        if (xn->requires_grad) {
          const real gam = gn->values[ch];
          const real inv_n = 1.0 / static_cast<real>(n);
          for (std::size_t t = 0; t < n; ++t) {
            const real g = self.grad[ch * n + t];
            const real xh = (xn->values[ch * n + t] - (*mu)[ch]) * inv_std;
            xn->grad[ch * n + t] += gam * inv_std * (g - sum_g * inv_n - xh * sum_gx * inv_n);
          }
        }
      }
    });
  }

  // eval: pure affine map from the stored statistics
  auto rm = std::make_shared<std::vector<real>>(running_mean);
  auto rv = std::make_shared<std::vector<real>>(running_var);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const real inv_std = 1.0 / std::sqrt((*rv)[ch] + kBatchNormEps);
    for (std::size_t t = 0; t < n; ++t) {
      out[ch * n + t] = gamma.values()[ch] * (x.values()[ch * n + t] - (*rm)[ch]) * inv_std + beta.values()[ch];
    }
  }
  return make_op({c, n}, std::move(out), {x, gamma, beta}, [xn, gn, bn, rm, rv, c, n](detail::Node& self) {
    if (xn->requires_grad) xn->ensure_grad();
    if (gn->requires_grad) gn->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const real inv_std = 1.0 / std::sqrt((*rv)[ch] + kBatchNormEps);
      for (std::size_t t = 0; t < n; ++t) {
        const real g = self.grad[ch * n + t];
        const real xh = (xn->values[ch * n + t] - (*rm)[ch]) * inv_std;
        if (bn->requires_grad) bn->grad[ch] += g;
        if (gn->requires_grad) gn->grad[ch] += g * xh;
        if (xn->requires_grad) xn->grad[ch * n + t] += g * gn->values[ch] * inv_std;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Inverted dropout. Train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); eval mode is the identity. rate == 0 consumes no
// random draws.
// ---------------------------------------------------------------------------

inline Tensor dropout(const Tensor& x, real rate, Mode mode, RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0) throw param_error("dropout: rate must be in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<real>>(x.size());
  const real keep_scale = 1.0 / (1.0 - rate);
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const real m = rng.uniform() >= rate ? keep_scale : 0.0;
    (*mask)[i] = m;
    out[i] = x.values()[i] * m;
  }
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, mask](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i) xn->grad[i] += self.grad[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------

enum class Activation { relu, sigmoid, tanh, linear, softmax };

inline Tensor relu(const Tensor& x) {
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i)
      if (xn->values[i] > 0.0) xn->grad[i] += self.grad[i];
  });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.values()[i]));
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i) {
      const real y = self.values[i];
      xn->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

inline Tensor tanh_op(const Tensor& x) {
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x.values()[i]);
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i) {
      const real y = self.values[i];
      xn->grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

// Softmax over the final (only) dimension, stabilized by max subtraction.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() != 1) throw dim_error("softmax: expects rank-1 tensor");
  real mx = -std::numeric_limits<real>::infinity();
  for (real v : x.values()) mx = std::max(mx, v);
  std::vector<real> out(x.size());
  real denom = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x.values()[i] - mx);
    denom += out[i];
  }
  for (auto& v : out) v /= denom;
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    real dot = 0.0;
    for (std::size_t i = 0; i < self.size(); ++i) dot += self.grad[i] * self.values[i];
    for (std::size_t i = 0; i < self.size(); ++i)
      xn->grad[i] += self.values[i] * (self.grad[i] - dot);
  });
}

inline Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return tanh_op(x);
    case Activation::linear: return x;
    case Activation::softmax: return softmax(x);
  }
  throw param_error("activation: unknown kind");
}

// ---------------------------------------------------------------------------
// Weight normalization: kernel[o] = g[o] * v[o] / ||v[o]|| per output filter.
// ---------------------------------------------------------------------------

inline Tensor weight_norm_kernel(const Tensor& g, const Tensor& v) {
  if (v.rank() != 3) throw dim_error("weight_norm: direction must be [C_out x C_in x K]");
  const std::size_t c_out = v.dim(0);
  const std::size_t per = v.dim(1) * v.dim(2);
  if (g.size() != c_out) throw dim_error("weight_norm: gain must be [C_out]");
  auto norms = std::make_shared<std::vector<real>>(c_out);
  std::vector<real> out(v.size());
  for (std::size_t o = 0; o < c_out; ++o) {
    real acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += v.values()[o * per + i] * v.values()[o * per + i];
    const real nrm = std::sqrt(acc);
    if (nrm <= kWeightNormEps) throw numeric_error("weight_norm: zero-norm direction for filter " + std::to_string(o));
    (*norms)[o] = nrm;
    const real s = g.values()[o] / nrm;
    for (std::size_t i = 0; i < per; ++i) out[o * per + i] = v.values()[o * per + i] * s;
  }
  auto gn = g.node(); auto vn = v.node();
  return make_op(v.shape(), std::move(out), {g, v}, [gn, vn, norms, c_out, per](detail::Node& self) {
    if (gn->requires_grad) gn->ensure_grad();
    if (vn->requires_grad) vn->ensure_grad();
    for (std::size_t o = 0; o < c_out; ++o) {
      const real nrm = (*norms)[o];
      real dot_gv = 0.0;  // sum d_i * v_i over the filter
      for (std::size_t i = 0; i < per; ++i) dot_gv += self.grad[o * per + i] * vn->values[o * per + i];
      if (gn->requires_grad) gn->grad[o] += dot_gv / nrm;
      if (vn->requires_grad) {
        const real s = gn->values[o] / nrm;
        const real corr = gn->values[o] * dot_gv / (nrm * nrm * nrm);
        for (std::size_t i = 0; i < per; ++i)
          vn->grad[o * per + i] += s * self.grad[o * per + i] - corr * vn->values[o * per + i];
      }
    }
  });
}

// Per-channel rescale of [C x N] by a length-C vector.
inline Tensor scale_channels(const Tensor& x, const Tensor& s) {
  if (x.rank() != 2) throw dim_error("scale_channels: input must be [C x N]");
  const std::size_t c = x.dim(0), n = x.dim(1);
  if (s.size() != c) throw dim_error("scale_channels: scale must be [C]");
  std::vector<real> out(c * n);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < n; ++t) out[ch * n + t] = x.values()[ch * n + t] * s.values()[ch];
  auto xn = x.node(); auto sn = s.node();
  return make_op({c, n}, std::move(out), {x, s}, [xn, sn, c, n](detail::Node& self) {
    if (xn->requires_grad) xn->ensure_grad();
    if (sn->requires_grad) sn->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < n; ++t) {
        const real g = self.grad[ch * n + t];
        if (xn->requires_grad) xn->grad[ch * n + t] += g * sn->values[ch];
        if (sn->requires_grad) sn->grad[ch] += g * xn->values[ch * n + t];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// LSTM. Combined weights with gate order (input, forget, cell, output):
// w_ih [4H x D], w_hh [4H x H], b [4H]. Gradients flow through time via the
// recorded graph.
// ---------------------------------------------------------------------------

struct LstmWeights {
  Tensor w_ih;  // [4H x D]
  Tensor w_hh;  // [4H x H]
  Tensor b;     // [4H]
  std::size_t units = 0;
};

// Final hidden state of a unidirectional pass over `steps`.
inline Tensor lstm_pass(const std::vector<Tensor>& steps, const LstmWeights& w) {
  if (steps.empty()) throw param_error("lstm: empty input sequence");
  const std::size_t h = w.units;
  Tensor hidden = Tensor::zeros({h});
  Tensor cell = Tensor::zeros({h});
  for (const Tensor& x_t : steps) {
    Tensor gates = add(dense(x_t, w.w_ih, w.b), dense(hidden, w.w_hh, Tensor::zeros({4 * h})));
    Tensor i = sigmoid(slice(gates, 0, h));
    Tensor f = sigmoid(slice(gates, h, h));
    Tensor g = tanh_op(slice(gates, 2 * h, h));
    Tensor o = sigmoid(slice(gates, 3 * h, h));
    cell = add(mul(f, cell), mul(i, g));
    hidden = mul(o, tanh_op(cell));
  }
  return hidden;
}

// Unidirectional: final hidden state [H]. Bidirectional: concatenation of the
// forward pass's final state and the reversed pass's final state [2H].
inline Tensor lstm(const std::vector<Tensor>& steps, const LstmWeights& fwd,
                   const LstmWeights* bwd = nullptr) {
  Tensor out = lstm_pass(steps, fwd);
  if (bwd == nullptr) return out;
  std::vector<Tensor> reversed(steps.rbegin(), steps.rend());
  return concat(out, lstm_pass(reversed, *bwd));
}

}  // namespace tslab
