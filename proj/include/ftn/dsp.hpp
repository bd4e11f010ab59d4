#pragma once

// Pulse shaping and the discrete symbol-rate channel model for compressed
// (sub-Nyquist-spaced) signaling: SRRC synthesis, sampled autocorrelation
// taps, the banded Toeplitz interference matrix, and colored Gaussian noise
// drawn through a banded Cholesky factor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>

#include "ftn/common.hpp"

namespace ftn::dsp {

struct PulseSpec {
  double beta = 0.5;                  // roll-off factor
  double nyquist_symbol_time = 1e-6;  // T_N seconds
  int oversampling = 32;              // samples per T_N
  int span = 32;                      // one-sided truncation, units of T_N

  void validate() const {
    if (!(beta > 0.0) || beta > 1.0)
      throw param_error("pulse: beta must be in (0, 1]");
    if (!(nyquist_symbol_time > 0.0))
      throw param_error("pulse: symbol time must be positive");
    if (oversampling < 16)
      throw param_error("pulse: oversampling must be >= 16");
    if (span < 32) throw param_error("pulse: span must be >= 32");
  }
};

// Closed-form square-root raised cosine, unit continuous-time energy.
// u = t / T_N. Removable singularities at u = 0 and |u| = 1/(4 beta) are
// evaluated by their limits.
inline double srrc_eval_normalized(double u, double beta) {
  const double pi = std::numbers::pi;
  const double q = 4.0 * beta * u;
  if (std::abs(u) < 1e-9) return 1.0 - beta + 4.0 * beta / pi;
  if (std::abs(std::abs(q) - 1.0) < 1e-9) {
    const double a = pi / (4.0 * beta);
    return (beta / std::numbers::sqrt2) *
           ((1.0 + 2.0 / pi) * std::sin(a) + (1.0 - 2.0 / pi) * std::cos(a));
  }
  return (std::sin(pi * u * (1.0 - beta)) + q * std::cos(pi * u * (1.0 + beta))) /
         (pi * u * (1.0 - q * q));
}

// h(t) in physical units, zero outside the truncation span.
inline double srrc_eval(double t, const PulseSpec& spec) {
  const double u = t / spec.nyquist_symbol_time;
  if (std::abs(u) > static_cast<double>(spec.span)) return 0.0;
  return srrc_eval_normalized(u, spec.beta) / std::sqrt(spec.nyquist_symbol_time);
}

struct SampledPulse {
  rvec samples;  // length 2 * span * oversampling + 1
  int center;    // index of t = 0
  double dt;     // sample spacing, seconds

  double energy() const {
    double e = 0.0;
    for (double s : samples) e += s * s;
    return e * dt;
  }
};

// Samples the closed form over the truncation window and normalizes so the
// discrete energy sum h[i]^2 dt is exactly 1.
inline SampledPulse srrc_pulse(const PulseSpec& spec) {
  spec.validate();
  const int half = spec.span * spec.oversampling;
  SampledPulse p;
  p.center = half;
  p.dt = spec.nyquist_symbol_time / spec.oversampling;
  p.samples.resize(2 * half + 1);
  for (int i = -half; i <= half; ++i)
    p.samples[half + i] = srrc_eval(i * p.dt, spec);
  const double scale = 1.0 / std::sqrt(p.energy());
  for (double& s : p.samples) s *= scale;
  return p;
}

struct IsiTaps {
  rvec taps;   // 2 * l_isi + 1 entries, symmetric, taps[l_isi] == 1
  int l_isi = 0;
  double tau = 1.0;

  int center() const { return l_isi; }

  // Tap at signed lag; zero outside the modeled span.
  double at(int lag) const {
    if (lag < -l_isi || lag > l_isi) return 0.0;
    return taps[l_isi + lag];
  }

  void validate() const {
    if (l_isi < 1) throw param_error("taps: l_isi must be >= 1");
    if (!(tau > 0.0) || tau > 1.0) throw param_error("taps: tau must be in (0, 1]");
    if (static_cast<int>(taps.size()) != 2 * l_isi + 1)
      throw param_error("taps: length must be 2*l_isi+1");
  }
};

// Folded spectrum of a symmetric banded tap sequence on a uniform grid.
inline rvec tap_spectrum(const IsiTaps& t, int grid) {
  rvec s(grid);
  for (int m = 0; m < grid; ++m) {
    const double w = 2.0 * std::numbers::pi * m / grid;
    double v = t.taps[t.l_isi];
    for (int n = 1; n <= t.l_isi; ++n)
      v += 2.0 * t.taps[t.l_isi + n] * std::cos(n * w);
    s[m] = v;
  }
  return s;
}

namespace detail {

// Truncating the sampled autocorrelation at l_isi can push the folded
// spectrum slightly negative when the compression factor aliases the pulse
// spectrum onto a null band (tau = 0.6 does). Clamp the spectrum at a small
// positive margin and transform back so every finite Toeplitz section of the
// taps is positive semi-definite. No-op whenever the spectrum is already
// non-negative.
inline void spectral_floor(IsiTaps& t, int grid = 8192, int max_rounds = 12) {
  rvec s = tap_spectrum(t, grid);
  double mn = *std::min_element(s.begin(), s.end());
  if (mn >= 0.0) return;
  const double margin = 2.0 * std::abs(mn);
  for (int round = 0; round < max_rounds; ++round) {
    if (mn >= 0.25 * margin) break;
    for (double& v : s) v = std::max(v, margin);
    for (int n = 0; n <= t.l_isi; ++n) {
      double g = 0.0;
      for (int m = 0; m < grid; ++m)
        g += s[m] * std::cos(n * 2.0 * std::numbers::pi * m / grid);
      g /= grid;
      t.taps[t.l_isi + n] = g;
      t.taps[t.l_isi - n] = g;
    }
    s = tap_spectrum(t, grid);
    mn = *std::min_element(s.begin(), s.end());
  }
  const double center = t.taps[t.l_isi];
  for (double& v : t.taps) v /= center;
}

}  // namespace detail

// Raised-cosine closed form (autocorrelation of the ideal SRRC); used to
// estimate mass dropped when a requested lag falls outside the pulse support.
inline double raised_cosine_eval(double u, double beta) {
  const double pi = std::numbers::pi;
  const double d = 2.0 * beta * u;
  double sinc = std::abs(u) < 1e-12 ? 1.0 : std::sin(pi * u) / (pi * u);
  if (std::abs(std::abs(d) - 1.0) < 1e-9) {
    const double a = pi / (2.0 * beta);
    return (pi / 4.0) * (std::abs(a) < 1e-12 ? 1.0 : std::sin(a) / a);
  }
  return sinc * std::cos(pi * beta * u) / (1.0 - d * d);
}

// Discrete correlation of the oversampled pulse at lags n * tau * T_N,
// normalized to a unit center tap. Fractional-sample lags evaluate the
// shifted copy from the closed form on the same grid.
inline IsiTaps autocorr_taps(const SampledPulse& pulse, const PulseSpec& spec,
                             double tau, int l_isi) {
  if (l_isi < 1) throw param_error("autocorr_taps: l_isi must be >= 1");
  if (!(tau > 0.0) || tau > 1.0)
    throw param_error("autocorr_taps: tau must be in (0, 1]");

  IsiTaps t;
  t.l_isi = l_isi;
  t.tau = tau;
  t.taps.assign(2 * l_isi + 1, 0.0);

  const double support = spec.span * spec.nyquist_symbol_time;
  double dropped = 0.0;
  for (int n = 0; n <= l_isi; ++n) {
    const double lag = n * tau * spec.nyquist_symbol_time;
    if (lag > 2.0 * support) {
      dropped += std::abs(raised_cosine_eval(n * tau, spec.beta));
      continue;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pulse.samples.size(); ++i) {
      const double ti = (static_cast<int>(i) - pulse.center) * pulse.dt;
      acc += pulse.samples[i] * srrc_eval(ti - lag, spec);
    }
    t.taps[l_isi + n] = acc * pulse.dt;
    t.taps[l_isi - n] = t.taps[l_isi + n];
  }
  if (dropped > 1e-4)
    std::cerr << "[dsp] warning: taps beyond pulse support dropped, mass "
              << dropped << "\n";

  const double center = t.taps[l_isi];
  for (double& v : t.taps) v /= center;
  detail::spectral_floor(t);
  return t;
}

inline IsiTaps autocorr_taps(const PulseSpec& spec, double tau, int l_isi) {
  return autocorr_taps(srrc_pulse(spec), spec, tau, l_isi);
}

// Exact interference-free taps (unit center, zero elsewhere); the tau = 1
// reference channel without numerical residue.
inline IsiTaps ideal_nyquist_taps(int l_isi = 1) {
  IsiTaps t;
  t.l_isi = std::max(1, l_isi);
  t.tau = 1.0;
  t.taps.assign(2 * t.l_isi + 1, 0.0);
  t.taps[t.l_isi] = 1.0;
  return t;
}

struct IsiMatrix {
  int order = 0;
  rvec entries;  // row-major order x order

  double at(int i, int j) const { return entries[static_cast<std::size_t>(i) * order + j]; }
  double& at(int i, int j) { return entries[static_cast<std::size_t>(i) * order + j]; }
};

// Banded symmetric Toeplitz section: entries[i][j] = g_{i-j} for |i-j| <= L_I.
inline IsiMatrix build_isi_matrix(const IsiTaps& taps, int order) {
  taps.validate();
  if (order < 2) throw param_error("build_isi_matrix: order must be >= 2");
  IsiMatrix g;
  g.order = order;
  g.entries.assign(static_cast<std::size_t>(order) * order, 0.0);
  for (int i = 0; i < order; ++i)
    for (int j = std::max(0, i - taps.l_isi);
         j <= std::min(order - 1, i + taps.l_isi); ++j)
      g.at(i, j) = taps.at(i - j);
  return g;
}

// Lower-triangular banded Cholesky factor of G + eps I. Row i stores
// L(i, i-bandwidth) .. L(i, i) contiguously.
struct BandedCholesky {
  int order = 0;
  int bandwidth = 0;
  rvec rows;       // order x (bandwidth + 1)
  double epsilon = 0.0;

  double at(int i, int j) const {
    const int off = j - i + bandwidth;
    return rows[static_cast<std::size_t>(i) * (bandwidth + 1) + off];
  }

  // y = L z for a full-length z.
  void multiply(std::span<const double> z, std::span<double> y) const {
    for (int i = 0; i < order; ++i) {
      const int j0 = std::max(0, i - bandwidth);
      double acc = 0.0;
      const double* row = &rows[static_cast<std::size_t>(i) * (bandwidth + 1)];
      for (int j = j0; j <= i; ++j) acc += row[j - i + bandwidth] * z[j];
      y[i] = acc;
    }
  }
};

namespace detail {

// Plain banded Cholesky; returns false on a non-positive pivot.
inline bool try_banded_cholesky(const IsiTaps& taps, int order, double eps,
                                BandedCholesky& out) {
  const int bw = taps.l_isi;
  out.order = order;
  out.bandwidth = bw;
  out.epsilon = eps;
  out.rows.assign(static_cast<std::size_t>(order) * (bw + 1), 0.0);
  auto l = [&](int i, int j) -> double& {
    return out.rows[static_cast<std::size_t>(i) * (bw + 1) + (j - i + bw)];
  };
  for (int i = 0; i < order; ++i) {
    const int j0 = std::max(0, i - bw);
    for (int j = j0; j <= i; ++j) {
      double sum = taps.at(i - j) + (i == j ? eps : 0.0);
      const int k0 = std::max(j0, j - bw);
      for (int k = k0; k < j; ++k) sum -= l(i, k) * l(j, k);
      if (i == j) {
        if (sum <= 0.0) return false;
        l(i, j) = std::sqrt(sum);
      } else {
        l(i, j) = sum / l(j, j);
      }
    }
  }
  return true;
}

}  // namespace detail

// Factor G + eps I with the regularization ladder eps = 1e-10, 1e-9, ... up
// to 1e-6; failing at 1e-6 signals unusable taps.
inline BandedCholesky factor_channel_covariance(const IsiTaps& taps, int order) {
  taps.validate();
  if (order < 1) throw param_error("factor_channel_covariance: order must be >= 1");
  BandedCholesky f;
  for (double eps = 1e-10; eps <= 1.0000001e-6; eps *= 10.0)
    if (detail::try_banded_cholesky(taps, order, eps, f)) return f;
  throw numerical_error(
      "channel covariance factorization failed at eps = 1e-6; "
      "taps are not positive semi-definite enough");
}

// Noise model for one draw length: n0 plus the cached coloring factor.
struct NoiseSpec {
  double n0 = 0.0;
  BandedCholesky coloring;

  static NoiseSpec make(const IsiTaps& taps, int order, double n0) {
    if (n0 < 0.0) throw param_error("noise: n0 must be >= 0");
    NoiseSpec s;
    s.n0 = n0;
    s.coloring = factor_channel_covariance(taps, order);
    return s;
  }
};

// eta = sqrt(n0/2) (L z_re + i L z_im); caller supplies the standard normal
// inputs so harness-level pairing schemes control them.
inline cvec colored_noise(const BandedCholesky& factor, double n0,
                          std::span<const double> z_re,
                          std::span<const double> z_im) {
  const int n = factor.order;
  if (static_cast<int>(z_re.size()) != n || static_cast<int>(z_im.size()) != n)
    throw param_error("colored_noise: z length mismatch");
  rvec re(n), im(n);
  factor.multiply(z_re, re);
  factor.multiply(z_im, im);
  cvec eta(n);
  const double s = std::sqrt(n0 / 2.0);
  for (int i = 0; i < n; ++i) eta[i] = cplx(s * re[i], s * im[i]);
  return eta;
}

inline cvec draw_colored_noise(const NoiseSpec& noise, rng::Sequence& rng) {
  const int n = noise.coloring.order;
  rvec zr(n), zi(n);
  for (int i = 0; i < n; ++i) zr[i] = rng.next_gauss();
  for (int i = 0; i < n; ++i) zi[i] = rng.next_gauss();
  return colored_noise(noise.coloring, noise.n0, zr, zi);
}

// Noiseless banded convolution: y[j] = sum_m g_m x[offset + j - m].
// Every output must have full tap context inside x.
inline cvec apply_isi(std::span<const cplx> x, const IsiTaps& taps, int offset,
                      int out_len) {
  taps.validate();
  if (offset < taps.l_isi ||
      offset + out_len + taps.l_isi > static_cast<int>(x.size()))
    throw param_error("apply_isi: insufficient guard context");
  cvec y(out_len);
  for (int j = 0; j < out_len; ++j) {
    cplx acc = 0.0;
    const int k = offset + j;
    for (int m = -taps.l_isi; m <= taps.l_isi; ++m)
      acc += taps.at(m) * x[k - m];
    y[j] = acc;
  }
  return y;
}

// ISI plus colored noise over the consumed window.
inline cvec apply_channel(std::span<const cplx> x, const IsiTaps& taps,
                          const NoiseSpec& noise, rng::Sequence& rng,
                          int offset, int out_len) {
  if (noise.coloring.order != out_len)
    throw param_error("apply_channel: noise factor order mismatch");
  cvec y = apply_isi(x, taps, offset, out_len);
  if (noise.n0 > 0.0) {
    const cvec eta = draw_colored_noise(noise, rng);
    for (int i = 0; i < out_len; ++i) y[i] += eta[i];
  }
  return y;
}

}  // namespace ftn::dsp
