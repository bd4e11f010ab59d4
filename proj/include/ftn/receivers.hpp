#pragma once

// The four receiver pipelines mapping received symbols to bit LLRs: plain
// matched-filter demapping (MED), MMSE frequency-domain equalization over a
// cyclic extension, the fully-connected equalizer benchmark chained into
// MED, and the convolutional demapper that outputs LLRs directly. Also the
// default architectures and the synthetic training batch sources.

#include <array>
#include <cmath>
#include <numbers>

#include "ftn/coding.hpp"
#include "ftn/dsp.hpp"
#include "ftn/modem.hpp"
#include "ftn/neural.hpp"

namespace ftn::receivers {

// ---------------------------------------------------------------------------
// windowed input for the convolutional demapper

struct CnnInput {
  neural::Tensor<float> matrix;  // (1, L_in, 2): column 0 real, column 1 imag
  int block_index = 0;
  int payload_begin = 0;  // stream index of the first payload symbol

  int l_in() const { return matrix.length; }
};

// Cuts the L_in = n_s + 2 n_pad window for one block out of a continuous
// received stream whose first payload symbol sits at stream index
// lead_context. Both pads must be backed by real neighbors (or stream
// context); nothing is zero-filled.
inline CnnInput cnn_preprocess(std::span<const cplx> stream, int block_index,
                               int n_s, int n_pad, int lead_context) {
  if (n_s < 1 || n_pad < 0 || block_index < 0)
    throw param_error("cnn_preprocess: bad geometry");
  const long begin = static_cast<long>(lead_context) +
                     static_cast<long>(block_index) * n_s - n_pad;
  const long end = begin + n_s + 2L * n_pad;
  if (begin < 0 || end > static_cast<long>(stream.size()))
    throw param_error("cnn_preprocess: window not covered by the stream");
  CnnInput in;
  in.block_index = block_index;
  in.payload_begin = lead_context + block_index * n_s;
  in.matrix = neural::Tensor<float>(1, n_s + 2 * n_pad, 2);
  for (long i = begin; i < end; ++i) {
    in.matrix.at(0, static_cast<int>(i - begin), 0) =
        static_cast<float>(stream[i].real());
    in.matrix.at(0, static_cast<int>(i - begin), 1) =
        static_cast<float>(stream[i].imag());
  }
  return in;
}

// ---------------------------------------------------------------------------
// default architectures

struct CnnConfig {
  int n_s = 50;
  int n_pad = 12;
  int filters = 26;
  int width = 9;
  int blocks = 3;
  double alpha = 0.3;  // deep stacks train poorly with a near-dead slope

  int l_in() const { return n_s + 2 * n_pad; }

  void validate() const {
    if (n_s < 1 || n_pad < 0) throw param_error("cnn config: bad block geometry");
    if (filters < 1 || blocks < 0) throw param_error("cnn config: bad architecture");
    if (width < 1 || width % 2 == 0)
      throw param_error("cnn config: width must be odd");
    if (!(alpha >= 0.0)) throw param_error("cnn config: bad lrelu slope");
  }
};

// Stem, `blocks` two-convolution residual blocks with post-add activation,
// then a width-1 projection to the two bit positions. Filter count sized so
// the complexity lands on the published budget.
inline std::vector<neural::LayerSpec> cnn_demapper_spec(const CnnConfig& cfg = {}) {
  cfg.validate();
  using neural::LayerSpec;
  std::vector<LayerSpec> specs;
  specs.push_back(LayerSpec::conv(cfg.filters, cfg.width));
  specs.push_back(LayerSpec::bn());
  specs.push_back(LayerSpec::lrelu(cfg.alpha));
  for (int b = 0; b < cfg.blocks; ++b) {
    specs.push_back(LayerSpec::residual_begin());
    specs.push_back(LayerSpec::conv(cfg.filters, cfg.width));
    specs.push_back(LayerSpec::bn());
    specs.push_back(LayerSpec::lrelu(cfg.alpha));
    specs.push_back(LayerSpec::conv(cfg.filters, cfg.width));
    specs.push_back(LayerSpec::bn());
    specs.push_back(LayerSpec::residual_end());
    specs.push_back(LayerSpec::lrelu(cfg.alpha));
  }
  specs.push_back(LayerSpec::conv(modem::kBitsPerSymbol, 1));
  return specs;
}

struct DnnConfig {
  int input_len = 74;   // complex symbols per window
  int output_len = 50;  // equalized symbols per window
  std::array<int, 4> hidden = {330, 330, 330, 330};
  double alpha = 0.3;

  void validate() const {
    if (input_len < 1 || output_len < 1 || output_len > input_len)
      throw param_error("dnn config: bad window geometry");
    for (int h : hidden)
      if (h < 1) throw param_error("dnn config: hidden sizes must be positive");
  }
};

inline std::vector<neural::LayerSpec> mlp_equalizer_spec(const DnnConfig& cfg = {}) {
  cfg.validate();
  using neural::LayerSpec;
  std::vector<LayerSpec> specs;
  for (int h : cfg.hidden) {
    specs.push_back(LayerSpec::dense(h));
    specs.push_back(LayerSpec::lrelu(cfg.alpha));
  }
  specs.push_back(LayerSpec::dense(2 * cfg.output_len));
  return specs;
}

// ---------------------------------------------------------------------------
// MED

inline modem::LlrBlock med_receive(std::span<const cplx> payload, double n0) {
  return modem::med_demap(payload, n0);
}

// ---------------------------------------------------------------------------
// FDE-MMSE

struct FdeConfig {
  int nu = 0;  // one-sided cyclic extension; total overhead 2 nu

  int cp_len() const { return 2 * nu; }

  void validate(int l_isi) const {
    if (nu < l_isi)
      throw param_error("fde config: nu must cover the interference span");
  }
};

namespace detail {

// direct O(N^2) transform; block lengths here are tens of symbols
inline cvec dft(std::span<const cplx> x, bool inverse) {
  const int n = static_cast<int>(x.size());
  const double step = (inverse ? 2.0 : -2.0) * std::numbers::pi / n;
  cvec twiddle(n);
  for (int t = 0; t < n; ++t) twiddle[t] = std::polar(1.0, step * t);
  cvec out(n);
  for (int k = 0; k < n; ++k) {
    cplx acc = 0.0;
    for (int t = 0; t < n; ++t)
      acc += x[t] * twiddle[static_cast<int>((static_cast<long>(k) * t) % n)];
    out[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  return out;
}

// N-point folded spectrum of the symmetric taps (real by symmetry)
inline rvec tap_dft(const dsp::IsiTaps& taps, int n) {
  rvec lambda(n);
  for (int k = 0; k < n; ++k) {
    double v = taps.at(0);
    for (int m = 1; m <= taps.l_isi; ++m)
      v += 2.0 * taps.at(m) * std::cos(2.0 * std::numbers::pi * k * m / n);
    lambda[k] = v;
  }
  return lambda;
}

}  // namespace detail

// Transmitter-side cyclic extension: nu trailing symbols are prepended and
// nu leading symbols appended, so the symmetric interference sees a
// circular block over the payload window.
inline cvec fde_extend(std::span<const cplx> payload, int nu) {
  const int n = static_cast<int>(payload.size());
  if (nu < 0 || nu > n) throw param_error("fde_extend: bad extension");
  cvec out;
  out.reserve(n + 2 * nu);
  out.insert(out.end(), payload.end() - nu, payload.end());
  out.insert(out.end(), payload.begin(), payload.end());
  out.insert(out.end(), payload.begin(), payload.begin() + nu);
  return out;
}

struct FdeResult {
  cvec equalized;       // n_s symbols
  double effective_n0;  // residual interference + filtered noise, per symbol
};

// Strips the cyclic extension, applies the per-bin MMSE weight
// W_k = Lambda_k / (Lambda_k^2 + n0 Lambda_k / Es), and transforms back.
// The effective noise density fed to demapping is the mean residual
// spectrum Es |1 - W L|^2 + n0 L |W|^2 (per complex symbol).
inline FdeResult fde_equalize(std::span<const cplx> block_with_cp,
                              const dsp::IsiTaps& taps, double n0,
                              const FdeConfig& cfg) {
  cfg.validate(taps.l_isi);
  if (n0 < 0.0) throw param_error("fde_equalize: negative n0");
  const int n = static_cast<int>(block_with_cp.size()) - cfg.cp_len();
  if (n < 2) throw param_error("fde_equalize: block too short for the extension");
  const cvec payload(block_with_cp.begin() + cfg.nu,
                     block_with_cp.begin() + cfg.nu + n);
  const cvec spectrum = detail::dft(payload, false);
  const rvec lambda = detail::tap_dft(taps, n);

  cvec shaped(n);
  double residual = 0.0;
  for (int k = 0; k < n; ++k) {
    const double l = lambda[k];
    const double denom = l * l + n0 * l;  // Es = 1
    double w = 0.0;
    if (std::abs(denom) > 1e-30 && l > 0.0) w = l / denom;
    shaped[k] = w * spectrum[k];
    const double bias = 1.0 - w * l;
    residual += bias * bias + n0 * l * w * w;
  }
  FdeResult res;
  res.equalized = detail::dft(shaped, true);
  res.effective_n0 = residual / n;
  return res;
}

inline modem::LlrBlock fde_receive(std::span<const cplx> block_with_cp,
                                   const dsp::IsiTaps& taps, double n0,
                                   const FdeConfig& cfg) {
  FdeResult r = fde_equalize(block_with_cp, taps, n0, cfg);
  // keep the demapper defined even in the noiseless zero-forcing limit
  const double floor = 1e-12;
  return modem::med_demap(r.equalized, std::max(r.effective_n0, floor));
}

// ---------------------------------------------------------------------------
// DNN equalizer chained into MED

struct DnnReceiver {
  neural::Model<float> model;
  DnnConfig cfg;

  // windows: (batch, input_len, 2) real/imag
  std::vector<cvec> equalize(neural::Tensor<float>& windows) {
    if (windows.length != cfg.input_len || windows.channels != 2)
      throw param_error("dnn_receive: window shape mismatch");
    model.mode = neural::Mode::infer;
    const neural::Tensor<float> out = model.forward(windows);
    if (out.length != 2 * cfg.output_len || out.channels != 1)
      throw param_error("dnn_receive: model output shape mismatch");
    std::vector<cvec> result(windows.batch, cvec(cfg.output_len));
    for (int b = 0; b < windows.batch; ++b)
      for (int i = 0; i < cfg.output_len; ++i)
        result[b][i] = cplx(out.at(b, 2 * i, 0), out.at(b, 2 * i + 1, 0));
    return result;
  }

  // The equalized stream is treated as interference-free and handed to the
  // matched-filter demapper at the channel noise density.
  modem::LlrBlock receive(std::span<const cplx> window, double n0) {
    neural::Tensor<float> t(1, cfg.input_len, 2);
    if (static_cast<int>(window.size()) != cfg.input_len)
      throw param_error("dnn_receive: window length mismatch");
    for (int i = 0; i < cfg.input_len; ++i) {
      t.at(0, i, 0) = static_cast<float>(window[i].real());
      t.at(0, i, 1) = static_cast<float>(window[i].imag());
    }
    const auto symbols = equalize(t);
    return modem::med_demap(symbols[0], n0);
  }
};

// ---------------------------------------------------------------------------
// CNN demapper

struct CnnReceiver {
  neural::Model<float> model;
  int n_s = 50;
  int n_pad = 12;

  // batched inference over same-shape windows
  std::vector<modem::LlrBlock> receive(const std::vector<CnnInput>& inputs) {
    if (inputs.empty()) return {};
    const int l_in = inputs.front().l_in();
    if (l_in != n_s + 2 * n_pad)
      throw param_error("cnn_receive: window length mismatch");
    neural::Tensor<float> batch(static_cast<int>(inputs.size()), l_in, 2);
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      if (inputs[b].l_in() != l_in)
        throw param_error("cnn_receive: ragged batch");
      for (int l = 0; l < l_in; ++l) {
        batch.at(static_cast<int>(b), l, 0) = inputs[b].matrix.at(0, l, 0);
        batch.at(static_cast<int>(b), l, 1) = inputs[b].matrix.at(0, l, 1);
      }
    }
    model.mode = neural::Mode::infer;
    neural::Tensor<float> out = model.forward(batch);
    if (out.channels != modem::kBitsPerSymbol)
      throw param_error("cnn_receive: model output channels != bits per symbol");
    if (out.length < n_s)
      throw param_error("cnn_receive: model output shorter than payload");
    const int crop = (out.length - n_s) / 2;
    std::vector<modem::LlrBlock> result(inputs.size());
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      modem::LlrBlock& llr = result[b];
      llr.m = modem::kBitsPerSymbol;
      llr.llrs.resize(static_cast<std::size_t>(n_s) * llr.m);
      for (int l = 0; l < n_s; ++l)
        for (int c = 0; c < llr.m; ++c)
          llr.at(l, c) = static_cast<double>(out.at(static_cast<int>(b), crop + l, c));
    }
    return result;
  }

  modem::LlrBlock receive_one(const CnnInput& input) {
    return receive(std::vector<CnnInput>{input})[0];
  }
};

// ---------------------------------------------------------------------------
// synthetic training batches

// Channel context shared by both trainable receivers: one tau, the window
// covered by the loss, and the cached noise coloring factor for it.
struct TrainChannel {
  double tau = 0.7;
  int n_s = 50;
  int n_pad = 12;
  dsp::IsiTaps taps;
  dsp::BandedCholesky window_factor;  // order n_s + 2 n_pad

  static TrainChannel make(const dsp::IsiTaps& taps, int n_s, int n_pad) {
    TrainChannel ch;
    ch.tau = taps.tau;
    ch.n_s = n_s;
    ch.n_pad = n_pad;
    ch.taps = taps;
    ch.window_factor =
        dsp::factor_channel_covariance(taps, n_s + 2 * n_pad);
    return ch;
  }

  int window_len() const { return n_s + 2 * n_pad; }
};

namespace detail {

// one transmitted window plus its noisy observation at the drawn Es/N0
struct Example {
  cvec tx_payload;                    // n_s symbols
  std::vector<std::uint8_t> bits;     // 2 n_s payload bits
  cvec rx_window;                     // n_s + 2 n_pad observed symbols
};

inline Example draw_example(const TrainChannel& ch, rng::Sequence& rng,
                            double esn0_min_db, double esn0_max_db) {
  const int w = ch.window_len();
  const int guard = ch.taps.l_isi;
  const int total = w + 2 * guard;
  const double esn0_db =
      esn0_min_db + (esn0_max_db - esn0_min_db) * rng.next_uniform();
  const double n0 = std::pow(10.0, -esn0_db / 10.0);  // Es = 1

  std::vector<std::uint8_t> all_bits(2 * total);
  for (auto& b : all_bits) b = rng.next_bit();
  const cvec x = modem::qpsk_modulate(all_bits);
  cvec y = dsp::apply_isi(x, ch.taps, guard, w);
  rvec zr(w), zi(w);
  for (int i = 0; i < w; ++i) zr[i] = rng.next_gauss();
  for (int i = 0; i < w; ++i) zi[i] = rng.next_gauss();
  const cvec eta = dsp::colored_noise(ch.window_factor, n0, zr, zi);
  for (int i = 0; i < w; ++i) y[i] += eta[i];

  Example ex;
  ex.rx_window = std::move(y);
  const int payload_at = guard + ch.n_pad;
  ex.tx_payload.assign(x.begin() + payload_at, x.begin() + payload_at + ch.n_s);
  ex.bits.assign(all_bits.begin() + 2 * payload_at,
                 all_bits.begin() + 2 * (payload_at + ch.n_s));
  return ex;
}

}  // namespace detail

// demapper batch: inputs (B, L_in, 2), labels (B, n_s, 2) holding the bits
inline std::pair<neural::Tensor<float>, neural::Tensor<float>> cnn_batch(
    const TrainChannel& ch, long epoch, const neural::TrainConfig& cfg) {
  neural::Tensor<float> x(cfg.batch_size, ch.window_len(), 2);
  neural::Tensor<float> labels(cfg.batch_size, ch.n_s, 2);
  for (int b = 0; b < cfg.batch_size; ++b) {
    rng::Sequence rng(rng::Stream::derive(cfg.seed, static_cast<std::uint64_t>(epoch),
                                          static_cast<std::uint64_t>(b),
                                          rng::purpose::train_data));
    const auto ex = detail::draw_example(ch, rng, cfg.esn0_min_db, cfg.esn0_max_db);
    for (int l = 0; l < ch.window_len(); ++l) {
      x.at(b, l, 0) = static_cast<float>(ex.rx_window[l].real());
      x.at(b, l, 1) = static_cast<float>(ex.rx_window[l].imag());
    }
    for (int l = 0; l < ch.n_s; ++l) {
      labels.at(b, l, 0) = static_cast<float>(ex.bits[2 * l]);
      labels.at(b, l, 1) = static_cast<float>(ex.bits[2 * l + 1]);
    }
  }
  return {std::move(x), std::move(labels)};
}

// equalizer batch: inputs as above, targets (B, 2 n_s, 1) with interleaved
// real/imag of the clean payload symbols
inline std::pair<neural::Tensor<float>, neural::Tensor<float>> dnn_batch(
    const TrainChannel& ch, long epoch, const neural::TrainConfig& cfg) {
  neural::Tensor<float> x(cfg.batch_size, ch.window_len(), 2);
  neural::Tensor<float> target(cfg.batch_size, 2 * ch.n_s, 1);
  for (int b = 0; b < cfg.batch_size; ++b) {
    rng::Sequence rng(rng::Stream::derive(cfg.seed, static_cast<std::uint64_t>(epoch),
                                          static_cast<std::uint64_t>(b) + 0x10000,
                                          rng::purpose::train_data));
    const auto ex = detail::draw_example(ch, rng, cfg.esn0_min_db, cfg.esn0_max_db);
    for (int l = 0; l < ch.window_len(); ++l) {
      x.at(b, l, 0) = static_cast<float>(ex.rx_window[l].real());
      x.at(b, l, 1) = static_cast<float>(ex.rx_window[l].imag());
    }
    for (int i = 0; i < ch.n_s; ++i) {
      target.at(b, 2 * i, 0) = static_cast<float>(ex.tx_payload[i].real());
      target.at(b, 2 * i + 1, 0) = static_cast<float>(ex.tx_payload[i].imag());
    }
  }
  return {std::move(x), std::move(target)};
}

// crop-aware logit BCE for the demapper: loss on the payload region only
inline std::pair<double, neural::Tensor<float>> cnn_loss(
    const neural::Tensor<float>& out, const neural::Tensor<float>& labels) {
  const int crop = (out.length - labels.length) / 2;
  if (crop < 0 || out.length - 2 * crop != labels.length)
    throw param_error("cnn_loss: output/label length mismatch");
  const auto mid = neural::crop_length(out, crop, labels.length);
  auto [value, grad] = neural::lbce_loss(mid, labels);
  return {value, neural::embed_length(grad, crop, out.length)};
}

}  // namespace ftn::receivers
