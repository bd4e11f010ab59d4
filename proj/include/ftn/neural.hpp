#pragma once

// Minimal trainable network engine: (batch, length, channels) tensors, the
// layer set needed by the demappers (Conv1D, BatchNorm, LReLU, Dense,
// residual add), logit-domain BCE and MSE losses, Adam with L2, plateau LR
// scheduling with early stopping, MAC accounting, finite-difference
// gradient checking, and a self-describing model file format.
//
// Everything is templated on the scalar so training runs in float while
// gradient checks run in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ftn/common.hpp"

namespace ftn::neural {

enum class Mode { train, infer };

template <class T>
struct Tensor {
  int batch = 0, length = 0, channels = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int b, int l, int c)
      : batch(b), length(l), channels(c),
        data(static_cast<std::size_t>(b) * l * c, T(0)) {
    if (b < 1 || l < 1 || c < 1) throw param_error("tensor: bad shape");
  }

  std::size_t size() const { return data.size(); }
  T& at(int b, int l, int c) {
    return data[(static_cast<std::size_t>(b) * length + l) * channels + c];
  }
  T at(int b, int l, int c) const {
    return data[(static_cast<std::size_t>(b) * length + l) * channels + c];
  }

  bool same_shape(const Tensor& o) const {
    return batch == o.batch && length == o.length && channels == o.channels;
  }

  void check_finite(const char* what) const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v)))
        throw numerical_error(std::string(what) + ": non-finite value");
  }
};

// keep positions [offset, offset + keep) along length
template <class T>
Tensor<T> crop_length(const Tensor<T>& x, int offset, int keep) {
  if (offset < 0 || keep < 1 || offset + keep > x.length)
    throw param_error("crop_length: window out of range");
  Tensor<T> out(x.batch, keep, x.channels);
  for (int b = 0; b < x.batch; ++b)
    for (int l = 0; l < keep; ++l)
      for (int c = 0; c < x.channels; ++c)
        out.at(b, l, c) = x.at(b, offset + l, c);
  return out;
}

// adjoint of crop_length: place into a zero tensor of the original length
template <class T>
Tensor<T> embed_length(const Tensor<T>& g, int offset, int full_length) {
  if (offset < 0 || offset + g.length > full_length)
    throw param_error("embed_length: window out of range");
  Tensor<T> out(g.batch, full_length, g.channels);
  for (int b = 0; b < g.batch; ++b)
    for (int l = 0; l < g.length; ++l)
      for (int c = 0; c < g.channels; ++c)
        out.at(b, offset + l, c) = g.at(b, l, c);
  return out;
}

// ---------------------------------------------------------------------------
// layer specs (architecture description, scalar-free)

struct LayerSpec {
  enum class Kind { conv1d, batchnorm, lrelu, dense, residual_begin, residual_end };
  Kind kind = Kind::lrelu;
  int filters = 0;      // conv1d
  int width = 0;        // conv1d
  bool same_pad = true; // conv1d: "same" or explicit
  int pad = 0;          // conv1d explicit padding per side
  double alpha = 0.01;  // lrelu
  int units = 0;        // dense output size

  static LayerSpec conv(int filters, int width, bool same = true, int pad = 0) {
    LayerSpec s;
    s.kind = Kind::conv1d;
    s.filters = filters;
    s.width = width;
    s.same_pad = same;
    s.pad = pad;
    return s;
  }
  static LayerSpec bn() {
    LayerSpec s;
    s.kind = Kind::batchnorm;
    return s;
  }
  static LayerSpec lrelu(double alpha = 0.01) {
    LayerSpec s;
    s.kind = Kind::lrelu;
    s.alpha = alpha;
    return s;
  }
  static LayerSpec dense(int units) {
    LayerSpec s;
    s.kind = Kind::dense;
    s.units = units;
    return s;
  }
  static LayerSpec residual_begin() {
    LayerSpec s;
    s.kind = Kind::residual_begin;
    return s;
  }
  static LayerSpec residual_end() {
    LayerSpec s;
    s.kind = Kind::residual_end;
    return s;
  }
};

// ---------------------------------------------------------------------------
// layers

template <class T>
struct ParamRef {
  std::string name;
  std::vector<T>* value;
  std::vector<T>* grad;
};

template <class T>
struct BufferRef {
  std::string name;
  std::vector<T>* value;
};

template <class T>
struct Conv1d {
  int d_in = 0, d_out = 0, width = 0, pad = 0;
  bool same_pad = true;
  std::vector<T> w, b;    // w: (d_out, d_in, width)
  std::vector<T> gw, gb;
  Tensor<T> cached_in;

  int out_length(int in_length) const { return in_length + 2 * pad - width + 1; }

  T& wt(int n, int d, int k) {
    return w[(static_cast<std::size_t>(n) * d_in + d) * width + k];
  }
  T wt(int n, int d, int k) const {
    return w[(static_cast<std::size_t>(n) * d_in + d) * width + k];
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.channels != d_in) throw param_error("conv1d: channel mismatch");
    const int lo = out_length(x.length);
    if (lo < 1) throw param_error("conv1d: kernel wider than padded input");
    if (mode == Mode::train) cached_in = x;
    Tensor<T> y(x.batch, lo, d_out);
    for (int bi = 0; bi < x.batch; ++bi)
      for (int l = 0; l < lo; ++l)
        for (int n = 0; n < d_out; ++n) {
          T acc = b[n];
          const int base = l - pad;
          const int k0 = std::max(0, -base), k1 = std::min(width, x.length - base);
          for (int k = k0; k < k1; ++k)
            for (int d = 0; d < d_in; ++d)
              acc += wt(n, d, k) * x.at(bi, base + k, d);
          y.at(bi, l, n) = acc;
        }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const Tensor<T>& x = cached_in;
    Tensor<T> gx(x.batch, x.length, x.channels);
    for (int bi = 0; bi < x.batch; ++bi)
      for (int l = 0; l < gy.length; ++l) {
        const int base = l - pad;
        const int k0 = std::max(0, -base), k1 = std::min(width, x.length - base);
        for (int n = 0; n < d_out; ++n) {
          const T g = gy.at(bi, l, n);
          gb[n] += g;
          for (int k = k0; k < k1; ++k)
            for (int d = 0; d < d_in; ++d) {
              gw[(static_cast<std::size_t>(n) * d_in + d) * width + k] +=
                  g * x.at(bi, base + k, d);
              gx.at(bi, base + k, d) += g * wt(n, d, k);
            }
        }
      }
    return gx;
  }
};

template <class T>
struct BatchNorm {
  int channels = 0;
  double eps = 1e-5, momentum = 0.1;
  std::vector<T> gamma, beta, running_mean, running_var;
  std::vector<T> ggamma, gbeta;
  // train-mode caches
  Tensor<T> cached_xhat;
  std::vector<T> cached_inv_std;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.channels != channels) throw param_error("batchnorm: channel mismatch");
    Tensor<T> y(x.batch, x.length, x.channels);
    if (mode == Mode::train) {
      if (x.batch < 2) throw param_error("batchnorm: train mode needs batch >= 2");
      const double n = static_cast<double>(x.batch) * x.length;
      cached_xhat = Tensor<T>(x.batch, x.length, x.channels);
      cached_inv_std.assign(channels, T(0));
      for (int c = 0; c < channels; ++c) {
        double mean = 0.0;
        for (int b = 0; b < x.batch; ++b)
          for (int l = 0; l < x.length; ++l) mean += static_cast<double>(x.at(b, l, c));
        mean /= n;
        double var = 0.0;
        for (int b = 0; b < x.batch; ++b)
          for (int l = 0; l < x.length; ++l) {
            const double d = static_cast<double>(x.at(b, l, c)) - mean;
            var += d * d;
          }
        var /= n;  // biased, used for normalization
        const double inv_std = 1.0 / std::sqrt(var + eps);
        cached_inv_std[c] = static_cast<T>(inv_std);
        for (int b = 0; b < x.batch; ++b)
          for (int l = 0; l < x.length; ++l) {
            const T xh = static_cast<T>((static_cast<double>(x.at(b, l, c)) - mean) * inv_std);
            cached_xhat.at(b, l, c) = xh;
            y.at(b, l, c) = gamma[c] * xh + beta[c];
          }
        const double unbiased = var * n / std::max(1.0, n - 1.0);
        running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
        running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
      }
    } else {
      for (int c = 0; c < channels; ++c) {
        const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
        for (int b = 0; b < x.batch; ++b)
          for (int l = 0; l < x.length; ++l)
            y.at(b, l, c) = static_cast<T>(
                gamma[c] * ((static_cast<double>(x.at(b, l, c)) - running_mean[c]) * inv_std) +
                beta[c]);
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const Tensor<T>& xh = cached_xhat;
    const double n = static_cast<double>(gy.batch) * gy.length;
    Tensor<T> gx(gy.batch, gy.length, gy.channels);
    for (int c = 0; c < channels; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int b = 0; b < gy.batch; ++b)
        for (int l = 0; l < gy.length; ++l) {
          const double g = static_cast<double>(gy.at(b, l, c));
          sum_g += g;
          sum_gx += g * static_cast<double>(xh.at(b, l, c));
        }
      ggamma[c] += static_cast<T>(sum_gx);
      gbeta[c] += static_cast<T>(sum_g);
      const double scale = static_cast<double>(gamma[c]) * cached_inv_std[c];
      for (int b = 0; b < gy.batch; ++b)
        for (int l = 0; l < gy.length; ++l) {
          const double g = static_cast<double>(gy.at(b, l, c));
          const double x_hat = static_cast<double>(xh.at(b, l, c));
          gx.at(b, l, c) =
              static_cast<T>(scale * (g - sum_g / n - x_hat * sum_gx / n));
        }
    }
    return gx;
  }
};

template <class T>
struct Lrelu {
  double alpha = 0.01;
  Tensor<T> cached_in;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (mode == Mode::train) cached_in = x;
    Tensor<T> y = x;
    for (T& v : y.data)
      if (v < T(0)) v = static_cast<T>(alpha * v);
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      if (cached_in.data[i] < T(0)) gx.data[i] = static_cast<T>(alpha * gx.data[i]);
    return gx;
  }
};

// flattens (length, channels) to features; output shape (batch, units, 1)
template <class T>
struct Dense {
  int in = 0, out = 0;
  std::vector<T> w, b;  // w: (out, in)
  std::vector<T> gw, gb;
  Tensor<T> cached_in;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.length * x.channels != in) throw param_error("dense: feature mismatch");
    if (mode == Mode::train) cached_in = x;
    Tensor<T> y(x.batch, out, 1);
    for (int bi = 0; bi < x.batch; ++bi) {
      const T* xp = &x.data[static_cast<std::size_t>(bi) * in];
      for (int o = 0; o < out; ++o) {
        T acc = b[o];
        const T* wp = &w[static_cast<std::size_t>(o) * in];
        for (int i = 0; i < in; ++i) acc += wp[i] * xp[i];
        y.at(bi, o, 0) = acc;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const Tensor<T>& x = cached_in;
    Tensor<T> gx(x.batch, x.length, x.channels);
    for (int bi = 0; bi < x.batch; ++bi) {
      const T* xp = &x.data[static_cast<std::size_t>(bi) * in];
      T* gxp = &gx.data[static_cast<std::size_t>(bi) * in];
      for (int o = 0; o < out; ++o) {
        const T g = gy.at(bi, o, 0);
        gb[o] += g;
        T* gwp = &gw[static_cast<std::size_t>(o) * in];
        const T* wp = &w[static_cast<std::size_t>(o) * in];
        for (int i = 0; i < in; ++i) {
          gwp[i] += g * xp[i];
          gxp[i] += g * wp[i];
        }
      }
    }
    return gx;
  }
};

struct ResidualBegin {};

// holds the optional 1x1 projection used when the skip path must change
// channel count
template <class T>
struct ResidualEnd {
  bool has_proj = false;
  Conv1d<T> proj;
};

template <class T>
using Layer = std::variant<Conv1d<T>, BatchNorm<T>, Lrelu<T>, Dense<T>,
                           ResidualBegin, ResidualEnd<T>>;

// ---------------------------------------------------------------------------
// model

template <class T>
class Model {
 public:
  std::vector<Layer<T>> layers;
  int in_channels = 0;
  Mode mode = Mode::infer;

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.channels != in_channels) throw param_error("model: input channel mismatch");
    skip_stack_.clear();
    Tensor<T> cur = x;
    for (auto& layer : layers) {
      if (std::holds_alternative<ResidualBegin>(layer)) {
        skip_stack_.push_back(cur);
      } else if (auto* end = std::get_if<ResidualEnd<T>>(&layer)) {
        if (skip_stack_.empty())
          throw param_error("model: residual_end without residual_begin");
        Tensor<T> saved = std::move(skip_stack_.back());
        skip_stack_.pop_back();
        Tensor<T> shortcut =
            end->has_proj ? end->proj.forward(saved, mode) : std::move(saved);
        if (!shortcut.same_shape(cur))
          throw param_error("model: residual shapes irreconcilable");
        for (std::size_t i = 0; i < cur.data.size(); ++i)
          cur.data[i] += shortcut.data[i];
      } else {
        cur = std::visit(
            [&](auto& l) -> Tensor<T> {
              using L = std::decay_t<decltype(l)>;
              if constexpr (std::is_same_v<L, ResidualBegin> ||
                            std::is_same_v<L, ResidualEnd<T>>)
                return cur;  // unreachable
              else
                return l.forward(cur, mode);
            },
            layer);
      }
    }
    if (!skip_stack_.empty())
      throw param_error("model: unterminated residual block");
    return cur;
  }

  // call in train mode after forward; accumulates into layer grads
  Tensor<T> backward(const Tensor<T>& grad_out) {
    std::vector<Tensor<T>> pending;
    Tensor<T> g = grad_out;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
      if (std::holds_alternative<ResidualBegin>(*it)) {
        if (pending.empty())
          throw param_error("model: unmatched residual_begin in backward");
        for (std::size_t i = 0; i < g.data.size(); ++i)
          g.data[i] += pending.back().data[i];
        pending.pop_back();
      } else if (auto* end = std::get_if<ResidualEnd<T>>(&*it)) {
        pending.push_back(end->has_proj ? end->proj.backward(g) : g);
      } else {
        g = std::visit(
            [&](auto& l) -> Tensor<T> {
              using L = std::decay_t<decltype(l)>;
              if constexpr (std::is_same_v<L, ResidualBegin> ||
                            std::is_same_v<L, ResidualEnd<T>>)
                return g;  // unreachable
              else
                return l.backward(g);
            },
            *it);
      }
    }
    return g;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "L" + std::to_string(i) + ".";
      if (auto* c = std::get_if<Conv1d<T>>(&layers[i])) {
        out.push_back({p + "w", &c->w, &c->gw});
        out.push_back({p + "b", &c->b, &c->gb});
      } else if (auto* bn = std::get_if<BatchNorm<T>>(&layers[i])) {
        out.push_back({p + "gamma", &bn->gamma, &bn->ggamma});
        out.push_back({p + "beta", &bn->beta, &bn->gbeta});
      } else if (auto* d = std::get_if<Dense<T>>(&layers[i])) {
        out.push_back({p + "w", &d->w, &d->gw});
        out.push_back({p + "b", &d->b, &d->gb});
      } else if (auto* e = std::get_if<ResidualEnd<T>>(&layers[i])) {
        if (e->has_proj) {
          out.push_back({p + "proj_w", &e->proj.w, &e->proj.gw});
          out.push_back({p + "proj_b", &e->proj.b, &e->proj.gb});
        }
      }
    }
    return out;
  }

  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "L" + std::to_string(i) + ".";
      if (auto* bn = std::get_if<BatchNorm<T>>(&layers[i])) {
        out.push_back({p + "running_mean", &bn->running_mean});
        out.push_back({p + "running_var", &bn->running_var});
      }
    }
    return out;
  }

  void zero_grads() {
    for (auto& pr : params()) std::fill(pr.grad->begin(), pr.grad->end(), T(0));
  }

  // drop forward caches so snapshots stay small
  void drop_caches() {
    for (auto& layer : layers) {
      if (auto* c = std::get_if<Conv1d<T>>(&layer)) c->cached_in = Tensor<T>();
      if (auto* bn = std::get_if<BatchNorm<T>>(&layer)) {
        bn->cached_xhat = Tensor<T>();
        bn->cached_inv_std.clear();
      }
      if (auto* l = std::get_if<Lrelu<T>>(&layer)) l->cached_in = Tensor<T>();
      if (auto* d = std::get_if<Dense<T>>(&layer)) d->cached_in = Tensor<T>();
      if (auto* e = std::get_if<ResidualEnd<T>>(&layer))
        if (e->has_proj) e->proj.cached_in = Tensor<T>();
    }
    skip_stack_.clear();
  }

 private:
  std::vector<Tensor<T>> skip_stack_;
};

// ---------------------------------------------------------------------------
// construction

namespace detail {

template <class T>
Conv1d<T> make_conv(int d_in, const LayerSpec& s) {
  if (s.filters < 1 || s.width < 1) throw param_error("conv1d spec: bad shape");
  if (s.same_pad && s.width % 2 == 0)
    throw param_error("conv1d spec: same padding needs odd width");
  if (!s.same_pad && s.pad < 0) throw param_error("conv1d spec: negative padding");
  Conv1d<T> c;
  c.d_in = d_in;
  c.d_out = s.filters;
  c.width = s.width;
  c.same_pad = s.same_pad;
  c.pad = s.same_pad ? (s.width - 1) / 2 : s.pad;
  c.w.assign(static_cast<std::size_t>(s.filters) * d_in * s.width, T(0));
  c.b.assign(s.filters, T(0));
  c.gw = c.w;
  c.gb = c.b;
  return c;
}

}  // namespace detail

// Resolves channel counts front to back. A residual block whose channel
// count changes gets a 1x1 projection on the skip path; a length change
// inside a block cannot be bridged and is rejected at first forward.
template <class T>
Model<T> build_model(const std::vector<LayerSpec>& specs, int in_channels) {
  if (in_channels < 1) throw param_error("build_model: bad input channels");
  Model<T> m;
  m.in_channels = in_channels;
  int ch = in_channels;
  std::vector<int> begin_channels;
  for (const auto& s : specs) {
    switch (s.kind) {
      case LayerSpec::Kind::conv1d: {
        m.layers.emplace_back(detail::make_conv<T>(ch, s));
        ch = s.filters;
        break;
      }
      case LayerSpec::Kind::batchnorm: {
        BatchNorm<T> bn;
        bn.channels = ch;
        bn.gamma.assign(ch, T(1));
        bn.beta.assign(ch, T(0));
        bn.running_mean.assign(ch, T(0));
        bn.running_var.assign(ch, T(1));
        bn.ggamma.assign(ch, T(0));
        bn.gbeta.assign(ch, T(0));
        m.layers.emplace_back(std::move(bn));
        break;
      }
      case LayerSpec::Kind::lrelu: {
        Lrelu<T> l;
        l.alpha = s.alpha;
        m.layers.emplace_back(std::move(l));
        break;
      }
      case LayerSpec::Kind::dense: {
        if (s.units < 1) throw param_error("dense spec: bad units");
        Dense<T> d;
        d.out = s.units;
        d.in = -1;  // resolved at first forward? no: needs length; see below
        m.layers.emplace_back(std::move(d));
        ch = 1;
        break;
      }
      case LayerSpec::Kind::residual_begin:
        begin_channels.push_back(ch);
        m.layers.emplace_back(ResidualBegin{});
        break;
      case LayerSpec::Kind::residual_end: {
        if (begin_channels.empty())
          throw param_error("build_model: residual_end without begin");
        const int begin_ch = begin_channels.back();
        begin_channels.pop_back();
        ResidualEnd<T> e;
        if (begin_ch != ch) {
          LayerSpec proj = LayerSpec::conv(ch, 1);
          e.has_proj = true;
          e.proj = detail::make_conv<T>(begin_ch, proj);
        }
        m.layers.emplace_back(std::move(e));
        break;
      }
    }
  }
  if (!begin_channels.empty())
    throw param_error("build_model: unterminated residual block");
  return m;
}

// Dense layers need a concrete input feature count; models with dense
// layers must declare lengths up front.
template <class T>
Model<T> build_model(const std::vector<LayerSpec>& specs, int in_channels,
                     int in_length) {
  Model<T> m = build_model<T>(specs, in_channels);
  int ch = in_channels, len = in_length;
  for (auto& layer : m.layers) {
    if (auto* c = std::get_if<Conv1d<T>>(&layer)) {
      len = c->out_length(len);
      if (len < 1) throw param_error("build_model: conv consumes whole length");
      ch = c->d_out;
    } else if (auto* d = std::get_if<Dense<T>>(&layer)) {
      d->in = len * ch;
      d->w.assign(static_cast<std::size_t>(d->out) * d->in, T(0));
      d->b.assign(d->out, T(0));
      d->gw = d->w;
      d->gb = d->b;
      len = d->out;
      ch = 1;
    }
  }
  return m;
}

// Glorot-uniform weights, U(+-sqrt(6/(fan_in+fan_out))), zero biases; BN
// affine stays at identity. Small-variance weight draws together with
// random biases leave deep stacks in a near-dead regime that plateaus far
// from the optimum, so the variance-preserving scheme is not optional here.
template <class T>
void init_params(Model<T>& m, std::uint64_t seed) {
  rng::Sequence rng(rng::Stream::derive(seed, 0, 0, rng::purpose::weight_init));
  auto fill = [&rng](std::vector<T>& v, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (T& x : v) x = static_cast<T>((2.0 * rng.next_uniform() - 1.0) * bound);
  };
  for (auto& layer : m.layers) {
    if (auto* c = std::get_if<Conv1d<T>>(&layer)) {
      fill(c->w, c->d_in * c->width, c->d_out * c->width);
      std::fill(c->b.begin(), c->b.end(), T(0));
    } else if (auto* d = std::get_if<Dense<T>>(&layer)) {
      if (d->in <= 0) throw param_error("init_params: dense input unresolved");
      fill(d->w, d->in, d->out);
      std::fill(d->b.begin(), d->b.end(), T(0));
    } else if (auto* e = std::get_if<ResidualEnd<T>>(&layer)) {
      if (e->has_proj) {
        fill(e->proj.w, e->proj.d_in, e->proj.d_out);
        std::fill(e->proj.b.begin(), e->proj.b.end(), T(0));
      }
    }
  }
}

// zero the final projection head so initial llr outputs are exactly 0
template <class T>
void zero_final_layer(Model<T>& m) {
  for (auto it = m.layers.rbegin(); it != m.layers.rend(); ++it) {
    if (auto* c = std::get_if<Conv1d<T>>(&*it)) {
      std::fill(c->w.begin(), c->w.end(), T(0));
      std::fill(c->b.begin(), c->b.end(), T(0));
      return;
    }
    if (auto* d = std::get_if<Dense<T>>(&*it)) {
      std::fill(d->w.begin(), d->w.end(), T(0));
      std::fill(d->b.begin(), d->b.end(), T(0));
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// losses

// Logit-domain binary cross entropy. Convention: positive llr means bit 0,
// so the per-entry loss is softplus(-llr) for label 0 and softplus(+llr)
// for label 1, i.e. max(l,0) - l*(1-b) + log1p(exp(-|l|)); the gradient is
// sigmoid(l) - (1 - b). Mean over all entries.
template <class T>
std::pair<double, Tensor<T>> lbce_loss(const Tensor<T>& llrs,
                                       const Tensor<T>& labels) {
  if (!llrs.same_shape(labels)) throw param_error("lbce_loss: shape mismatch");
  const double count = static_cast<double>(llrs.size());
  double loss = 0.0;
  Tensor<T> grad(llrs.batch, llrs.length, llrs.channels);
  for (std::size_t i = 0; i < llrs.data.size(); ++i) {
    const double l = static_cast<double>(llrs.data[i]);
    const double b = static_cast<double>(labels.data[i]);
    loss += std::max(l, 0.0) - l * (1.0 - b) + std::log1p(std::exp(-std::abs(l)));
    const double sig = 1.0 / (1.0 + std::exp(-l));
    grad.data[i] = static_cast<T>((sig - (1.0 - b)) / count);
  }
  return {loss / count, std::move(grad)};
}

// mean squared error over all entries
template <class T>
std::pair<double, Tensor<T>> mse_loss(const Tensor<T>& pred,
                                      const Tensor<T>& target) {
  if (!pred.same_shape(target)) throw param_error("mse_loss: shape mismatch");
  const double count = static_cast<double>(pred.size());
  double loss = 0.0;
  Tensor<T> grad(pred.batch, pred.length, pred.channels);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    loss += d * d;
    grad.data[i] = static_cast<T>(2.0 * d / count);
  }
  return {loss / count, std::move(grad)};
}

// ---------------------------------------------------------------------------
// optimizer and schedule

template <class T>
class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(std::vector<ParamRef<T>> params, double lr, double l2) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value->size(), 0.0);
        v_.emplace_back(p.value->size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw param_error("adam: parameter set changed");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, t_);
    const double c2 = 1.0 - std::pow(beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = *params[i].value;
      auto& gr = *params[i].grad;
      if (m_[i].size() != w.size()) throw param_error("adam: parameter shape changed");
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = static_cast<double>(gr[j]) + l2 * static_cast<double>(w[j]);
        m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g;
        v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g * g;
        const double mhat = m_[i][j] / c1;
        const double vhat = v_[i][j] / c2;
        w[j] = static_cast<T>(static_cast<double>(w[j]) -
                              lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<std::vector<double>> m_, v_;  // double moments for stability
  long t_ = 0;
};

struct TrainConfig {
  int batch_size = 4096;
  double lr_init = 0.01;
  double lr_decay_factor = 10.0;
  int lr_patience = 50;
  int early_stop_patience = 150;
  double l2 = 1e-4;
  double esn0_min_db = 0.0, esn0_max_db = 12.0;
  std::uint64_t seed = 1;
  long max_epochs = 100000;  // hard cap; plateau stopping is the normal exit

  void validate() const {
    if (batch_size < 2) throw param_error("train config: batch_size must be >= 2");
    if (!(lr_init >= 0.0)) throw param_error("train config: bad lr");
    if (!(lr_decay_factor > 1.0)) throw param_error("train config: decay factor must be > 1");
    if (lr_patience < 1 || early_stop_patience < 1)
      throw param_error("train config: patience must be positive");
    if (lr_patience >= early_stop_patience)
      throw param_error("train config: lr_patience must be < early_stop_patience");
    if (l2 < 0.0) throw param_error("train config: negative l2");
    if (esn0_max_db < esn0_min_db) throw param_error("train config: bad esn0 range");
    if (max_epochs < 1) throw param_error("train config: max_epochs must be >= 1");
  }
};

// Plateau detection on the training loss: improvement means beating the
// best by a 1e-4 relative margin; the stop check runs before the decay
// check and the decay counter resets on each decay.
class PlateauScheduler {
 public:
  enum class Action { keep_going, decayed, stopped };

  explicit PlateauScheduler(const TrainConfig& cfg)
      : lr_(cfg.lr_init), factor_(cfg.lr_decay_factor),
        lr_patience_(cfg.lr_patience), stop_patience_(cfg.early_stop_patience) {}

  Action observe(double loss) {
    if (loss < best_ * (1.0 - 1e-4)) {
      best_ = loss;
      stall_ = lr_stall_ = 0;
      improved_ = true;
      return Action::keep_going;
    }
    improved_ = false;
    ++stall_;
    ++lr_stall_;
    if (stall_ >= stop_patience_) return Action::stopped;
    if (lr_stall_ >= lr_patience_) {
      lr_ /= factor_;
      lr_stall_ = 0;
      return Action::decayed;
    }
    return Action::keep_going;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }
  bool improved() const { return improved_; }

 private:
  double lr_;
  double factor_;
  int lr_patience_, stop_patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int stall_ = 0, lr_stall_ = 0;
  bool improved_ = false;
};

template <class T>
struct TrainResult {
  Model<T> best;
  rvec loss_history;
  double best_loss = std::numeric_limits<double>::infinity();
  long best_epoch = 0;
  long epochs = 0;
  double final_lr = 0.0;
};

// One epoch = one fresh synthetic batch. batch_fn(epoch) returns (input,
// labels); loss_fn(output, labels) returns (loss, grad wrt output). The
// best-loss snapshot is taken before the optimizer step that follows it.
template <class T, class BatchFn, class LossFn>
TrainResult<T> train(Model<T>& model, BatchFn&& batch_fn, LossFn&& loss_fn,
                     const TrainConfig& cfg,
                     const std::function<void(long, double, double)>& progress = {}) {
  cfg.validate();
  Adam<T> opt;
  PlateauScheduler sched(cfg);
  TrainResult<T> result;
  model.mode = Mode::train;
  for (long epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto [input, labels] = batch_fn(epoch);
    Tensor<T> out = model.forward(input);
    auto [loss, grad] = loss_fn(out, labels);
    if (!std::isfinite(loss))
      throw numerical_error("train: non-finite loss at epoch " + std::to_string(epoch));
    result.loss_history.push_back(loss);
    const auto action = sched.observe(loss);
    if (sched.improved()) {
      result.best = model;
      result.best.drop_caches();
      result.best.mode = Mode::infer;
      result.best_loss = loss;
      result.best_epoch = epoch;
    }
    if (progress) progress(epoch, loss, sched.lr());
    result.epochs = epoch;
    if (action == PlateauScheduler::Action::stopped) break;
    model.zero_grads();
    model.backward(grad);
    opt.step(model.params(), sched.lr(), cfg.l2);
  }
  result.final_lr = sched.lr();
  if (!std::isfinite(result.best_loss))
    throw numerical_error("train: no finite-loss epoch recorded");
  model.mode = Mode::infer;
  return result;
}

// ---------------------------------------------------------------------------
// complexity accounting

// Multiply-accumulate count for one forward pass at the given input length:
// out_length * d_in * width * filters per convolution (projections included),
// in * out per dense layer; normalization and activations are free.
template <class T>
long mac_count(const Model<T>& m, int input_length) {
  long total = 0;
  int len = input_length;
  for (const auto& layer : m.layers) {
    if (const auto* c = std::get_if<Conv1d<T>>(&layer)) {
      len = c->out_length(len);
      total += static_cast<long>(len) * c->d_in * c->width * c->d_out;
    } else if (const auto* d = std::get_if<Dense<T>>(&layer)) {
      total += static_cast<long>(d->in) * d->out;
      len = d->out;
    } else if (const auto* e = std::get_if<ResidualEnd<T>>(&layer)) {
      if (e->has_proj)
        total += static_cast<long>(len) * e->proj.d_in * e->proj.d_out;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// gradient checking

struct GradCheckReport {
  double max_rel_err = 0.0;
  long entries = 0;
  bool pass = true;
  std::string worst;
};

// Central finite differences over every parameter and input entry.
// Agreement rule: |a - n| <= tol * max(|a|, |n|, 0.01).
template <class T, class LossFn>
GradCheckReport gradcheck(Model<T>& model, const Tensor<T>& input,
                          const Tensor<T>& labels, LossFn&& loss_fn,
                          double h = 1e-5, double tol = 1e-5) {
  model.mode = Mode::train;
  auto eval = [&]() {
    Tensor<T> out = model.forward(input);
    return loss_fn(out, labels).first;
  };
  // analytic pass
  model.zero_grads();
  Tensor<T> out = model.forward(input);
  auto [loss0, gout] = loss_fn(out, labels);
  (void)loss0;
  const Tensor<T> ginput = model.backward(gout);

  GradCheckReport rep;
  auto compare = [&](double analytic, double numeric, const std::string& name) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 0.01});
    const double rel = std::abs(analytic - numeric) / denom;
    ++rep.entries;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst = name;
    }
    if (rel > tol) rep.pass = false;
  };

  for (auto& pr : model.params()) {
    auto& w = *pr.value;
    auto& g = *pr.grad;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T keep = w[j];
      w[j] = static_cast<T>(static_cast<double>(keep) + h);
      const double up = eval();
      w[j] = static_cast<T>(static_cast<double>(keep) - h);
      const double down = eval();
      w[j] = keep;
      compare(static_cast<double>(g[j]), (up - down) / (2.0 * h),
              pr.name + "[" + std::to_string(j) + "]");
    }
  }
  Tensor<T> probe = input;
  for (std::size_t j = 0; j < probe.data.size(); ++j) {
    const T keep = probe.data[j];
    probe.data[j] = static_cast<T>(static_cast<double>(keep) + h);
    Tensor<T> o1 = model.forward(probe);
    const double up = loss_fn(o1, labels).first;
    probe.data[j] = static_cast<T>(static_cast<double>(keep) - h);
    Tensor<T> o2 = model.forward(probe);
    const double down = loss_fn(o2, labels).first;
    probe.data[j] = keep;
    compare(static_cast<double>(ginput.data[j]), (up - down) / (2.0 * h),
            "input[" + std::to_string(j) + "]");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// model file format: magic, version, json manifest, little-endian f32 payload

inline constexpr char kModelMagic[4] = {'F', 'T', 'N', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline nlohmann::json spec_to_json(const LayerSpec& s) {
  using K = LayerSpec::Kind;
  nlohmann::json j;
  switch (s.kind) {
    case K::conv1d:
      j["kind"] = "conv1d";
      j["filters"] = s.filters;
      j["width"] = s.width;
      if (s.same_pad)
        j["padding"] = "same";
      else
        j["padding"] = s.pad;
      break;
    case K::batchnorm: j["kind"] = "batchnorm"; break;
    case K::lrelu:
      j["kind"] = "lrelu";
      j["alpha"] = s.alpha;
      break;
    case K::dense:
      j["kind"] = "dense";
      j["units"] = s.units;
      break;
    case K::residual_begin: j["kind"] = "residual_begin"; break;
    case K::residual_end: j["kind"] = "residual_end"; break;
  }
  return j;
}

inline LayerSpec spec_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv1d") {
    const auto& pad = j.at("padding");
    if (pad.is_string()) {
      if (pad.get<std::string>() != "same")
        throw format_error("model file: unknown padding mode");
      return LayerSpec::conv(j.at("filters").get<int>(), j.at("width").get<int>());
    }
    return LayerSpec::conv(j.at("filters").get<int>(), j.at("width").get<int>(),
                           false, pad.get<int>());
  }
  if (kind == "batchnorm") return LayerSpec::bn();
  if (kind == "lrelu") return LayerSpec::lrelu(j.at("alpha").get<double>());
  if (kind == "dense") return LayerSpec::dense(j.at("units").get<int>());
  if (kind == "residual_begin") return LayerSpec::residual_begin();
  if (kind == "residual_end") return LayerSpec::residual_end();
  throw format_error("model file: unknown layer kind '" + kind + "'");
}

}  // namespace detail

// The architecture spec list is reconstructed from the live model so a
// loaded file rebuilds an identical object.
inline std::vector<LayerSpec> describe(const Model<float>& m) {
  std::vector<LayerSpec> specs;
  for (const auto& layer : m.layers) {
    if (const auto* c = std::get_if<Conv1d<float>>(&layer)) {
      specs.push_back(LayerSpec::conv(c->d_out, c->width, c->same_pad, c->pad));
    } else if (std::get_if<BatchNorm<float>>(&layer)) {
      specs.push_back(LayerSpec::bn());
    } else if (const auto* l = std::get_if<Lrelu<float>>(&layer)) {
      specs.push_back(LayerSpec::lrelu(l->alpha));
    } else if (const auto* d = std::get_if<Dense<float>>(&layer)) {
      specs.push_back(LayerSpec::dense(d->out));
    } else if (std::get_if<ResidualBegin>(&layer)) {
      specs.push_back(LayerSpec::residual_begin());
    } else {
      specs.push_back(LayerSpec::residual_end());
    }
  }
  return specs;
}

inline void save_model(const Model<float>& m, const std::string& path,
                       const std::map<std::string, std::string>& meta = {}) {
  nlohmann::json manifest;
  manifest["schema_version"] = kModelVersion;
  manifest["in_channels"] = m.in_channels;
  if (!meta.empty()) manifest["meta"] = meta;
  manifest["layers"] = nlohmann::json::array();
  for (const auto& s : describe(m)) manifest["layers"].push_back(detail::spec_to_json(s));
  // dense input sizes are a property of resolved shapes, record them
  nlohmann::json dense_in = nlohmann::json::array();
  for (const auto& layer : m.layers)
    if (const auto* d = std::get_if<Dense<float>>(&layer)) dense_in.push_back(d->in);
  manifest["dense_inputs"] = dense_in;

  Model<float>& mu = const_cast<Model<float>&>(m);
  nlohmann::json arrays = nlohmann::json::array();
  std::vector<const std::vector<float>*> payload;
  for (auto& pr : mu.params()) {
    arrays.push_back({{"name", pr.name}, {"count", pr.value->size()}});
    payload.push_back(pr.value);
  }
  for (auto& br : mu.buffers()) {
    arrays.push_back({{"name", br.name}, {"count", br.value->size()}});
    payload.push_back(br.value);
  }
  manifest["arrays"] = arrays;

  const std::string text = manifest.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw missing_artifact_error("cannot write model file: " + path);
  f.write(kModelMagic, 4);
  const std::uint32_t version = kModelVersion;
  f.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t text_len = text.size();
  f.write(reinterpret_cast<const char*>(&text_len), sizeof text_len);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* arr : payload)
    f.write(reinterpret_cast<const char*>(arr->data()),
            static_cast<std::streamsize>(arr->size() * sizeof(float)));
  if (!f) throw format_error("model file: write failed: " + path);
}

inline Model<float> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw missing_artifact_error("cannot open model file: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kModelMagic, 4) != 0)
    throw format_error("model file: bad magic: " + path);
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!f) throw format_error("model file: truncated header: " + path);
  if (version != kModelVersion)
    throw format_error("model file: schema version " + std::to_string(version) +
                       " unsupported (expected " + std::to_string(kModelVersion) + ")");
  std::uint64_t text_len = 0;
  f.read(reinterpret_cast<char*>(&text_len), sizeof text_len);
  if (!f || text_len > (1ull << 30))
    throw format_error("model file: truncated header: " + path);
  std::string text(text_len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(text_len));
  if (!f) throw format_error("model file: truncated manifest: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("model file: bad manifest: ") + e.what());
  }
  std::vector<LayerSpec> specs;
  try {
    for (const auto& j : manifest.at("layers"))
      specs.push_back(detail::spec_from_json(j));
    Model<float> m = build_model<float>(specs, manifest.at("in_channels").get<int>());
    // resolve dense shapes from the recorded input sizes
    std::size_t di = 0;
    const auto& dense_in = manifest.at("dense_inputs");
    for (auto& layer : m.layers)
      if (auto* d = std::get_if<Dense<float>>(&layer)) {
        if (di >= dense_in.size()) throw format_error("model file: missing dense input size");
        d->in = dense_in[di++].get<int>();
        if (d->in < 1) throw format_error("model file: bad dense input size");
        d->w.assign(static_cast<std::size_t>(d->out) * d->in, 0.0f);
        d->b.assign(d->out, 0.0f);
        d->gw = d->w;
        d->gb = d->b;
      }

    auto params = m.params();
    auto buffers = m.buffers();
    std::vector<std::vector<float>*> payload;
    std::size_t idx = 0;
    const auto& arrays = manifest.at("arrays");
    auto take = [&](const std::string& name, std::vector<float>* vec) {
      if (idx >= arrays.size()) throw format_error("model file: array list too short");
      const auto& a = arrays[idx++];
      if (a.at("name").get<std::string>() != name ||
          a.at("count").get<std::size_t>() != vec->size())
        throw format_error("model file: array mismatch for " + name);
      payload.push_back(vec);
    };
    for (auto& pr : params) take(pr.name, pr.value);
    for (auto& br : buffers) take(br.name, br.value);
    if (idx != arrays.size()) throw format_error("model file: extra arrays present");

    for (auto* arr : payload) {
      f.read(reinterpret_cast<char*>(arr->data()),
             static_cast<std::streamsize>(arr->size() * sizeof(float)));
      if (!f) throw format_error("model file: truncated payload: " + path);
    }
    char extra;
    if (f.read(&extra, 1)) throw format_error("model file: trailing bytes: " + path);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("model file: bad manifest: ") + e.what());
  }
}

// manifest metadata only, without materializing the network
inline std::map<std::string, std::string> load_model_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw missing_artifact_error("cannot open model file: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kModelMagic, 4) != 0)
    throw format_error("model file: bad magic: " + path);
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof version);
  std::uint64_t text_len = 0;
  f.read(reinterpret_cast<char*>(&text_len), sizeof text_len);
  if (!f || text_len > (1ull << 30))
    throw format_error("model file: truncated header: " + path);
  std::string text(text_len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(text_len));
  if (!f) throw format_error("model file: truncated manifest: " + path);
  std::map<std::string, std::string> meta;
  try {
    const auto manifest = nlohmann::json::parse(text);
    if (manifest.contains("meta"))
      for (const auto& [k, v] : manifest.at("meta").items())
        meta[k] = v.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("model file: bad manifest: ") + e.what());
  }
  return meta;
}

}  // namespace ftn::neural
