#pragma once

// Monte Carlo engine: builds transmit frames, runs them through the
// compressed-timing channel, hands windows to the selected receiver, and
// accumulates BER/BLER/throughput over an Eb/N0 grid. Noise streams are
// keyed by (seed, point, iteration, purpose) so different receivers at the
// same point see paired realizations.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ftn/coding.hpp"
#include "ftn/config.hpp"
#include "ftn/dsp.hpp"
#include "ftn/modem.hpp"
#include "ftn/receivers.hpp"

namespace ftn::harness {

// ---------------------------------------------------------------------------
// scalar formulas

// Eb = Es/m with Es = 1, independent of the code rate.
inline double ebn0_to_n0(double ebn0_db, int m) {
  if (m < 1) throw param_error("ebn0_to_n0: m must be >= 1");
  return 1.0 / (m * std::pow(10.0, ebn0_db / 10.0));
}

inline double n0_to_ebn0(double n0, int m) {
  if (m < 1 || !(n0 > 0.0)) throw param_error("n0_to_ebn0: bad inputs");
  return -10.0 * std::log10(m * n0);
}

// TP = (m rc)/(tau t_n) * gamma * (1 - bler)
inline double throughput(int m, double rc, double tau, double t_n, double gamma,
                         double bler) {
  return (m * rc) / (tau * t_n) * gamma * (1.0 - bler);
}

// ---------------------------------------------------------------------------
// run description

enum class Receiver { med, fde, dnn, cnn };

inline const char* receiver_name(Receiver r) {
  switch (r) {
    case Receiver::med: return "med";
    case Receiver::fde: return "fde";
    case Receiver::dnn: return "dnn";
    case Receiver::cnn: return "cnn";
  }
  return "?";
}

inline Receiver parse_receiver(const std::string& s) {
  if (s == "med") return Receiver::med;
  if (s == "fde") return Receiver::fde;
  if (s == "dnn") return Receiver::dnn;
  if (s == "cnn") return Receiver::cnn;
  throw param_error("unknown receiver '" + s + "' (expected med|fde|dnn|cnn)");
}

struct LinkConfig {
  double tau = 0.7;
  int l_isi = 28;  // one-sided span; 0 allowed only at tau = 1
  int n_s = 50;
  int n_pad = 12;
  int m = modem::kBitsPerSymbol;
  bool coded = false;
  double rc = 0.5;  // applies to coded runs
  double t_n = 1e-6;
  std::vector<double> ebn0_grid_db;
  long max_mc_iterations = 100000;
  long min_block_errors = 100;
  int fde_nu = 0;  // 0 -> one-sided span
  std::uint64_t seed = 1;
  bool paper_mode = true;
  std::vector<std::string> receivers;
  std::string alist_r12 = "assets/codes/qc_rate12_n1200.alist";
  std::string alist_r34 = "assets/codes/qc_rate34_n1200.alist";

  int guard_span() const { return std::max(1, l_isi); }
  int fde_nu_effective() const { return fde_nu > 0 ? fde_nu : guard_span(); }
  double fde_gamma() const {
    return static_cast<double>(n_s) / (n_s + 2 * fde_nu_effective());
  }

  void validate() const {
    if (!(tau > 0.0) || tau > 1.0) throw param_error("link: tau must be in (0, 1]");
    if (n_s < 2) throw param_error("link: n_s too small");
    if (n_pad < 0) throw param_error("link: n_pad must be >= 0");
    if (l_isi < 0 || (l_isi == 0 && tau < 1.0))
      throw param_error("link: l_isi must be positive for tau < 1");
    if (m != modem::kBitsPerSymbol) throw param_error("link: only QPSK (m=2) supported");
    if (ebn0_grid_db.empty()) throw param_error("link: empty Eb/N0 grid");
    if (max_mc_iterations < 1 || min_block_errors < 1)
      throw param_error("link: bad Monte Carlo limits");
    if (!(t_n > 0.0)) throw param_error("link: t_n must be positive");
    if (coded && rc != 0.5 && rc != 0.75)
      throw param_error("link: coded rate must be 1/2 or 3/4");
    if (fde_nu != 0 && fde_nu < guard_span())
      throw param_error("link: fde nu must cover the interference span");
    if (paper_mode) {
      const bool ok = (std::abs(tau - 0.6) < 1e-12 && l_isi == 33) ||
                      (std::abs(tau - 0.7) < 1e-12 && l_isi == 28) ||
                      (std::abs(tau - 1.0) < 1e-12 && l_isi == 0);
      if (!ok)
        throw param_error(
            "link: (tau, l_isi) must be (0.6, 33), (0.7, 28) or (1.0, 0); "
            "set paper_mode=false to explore other points");
    }
  }
};

struct MetricRecord {
  std::string receiver;
  double tau = 0.0;
  double rc = 1.0;
  double ebn0_db = 0.0;
  double ber = 0.0;
  double bler = 0.0;
  double throughput_bps = 0.0;
  long blocks = 0;
  long bit_errors = 0;
  long block_errors = 0;
  bool stopped_early = false;
};

// loaded network artifacts; meta carries the tau they were trained for
struct LoadedModel {
  neural::Model<float> model;
  std::map<std::string, std::string> meta;
};

struct ModelSet {
  std::optional<LoadedModel> cnn;
  std::optional<LoadedModel> dnn;
};

inline std::map<std::string, std::string> model_meta(const std::string& kind,
                                                     const LinkConfig& cfg) {
  char tau_buf[32];
  std::snprintf(tau_buf, sizeof tau_buf, "%.17g", cfg.tau);
  return {{"kind", kind},
          {"tau", tau_buf},
          {"n_s", std::to_string(cfg.n_s)},
          {"n_pad", std::to_string(cfg.n_pad)}};
}

inline LoadedModel load_receiver_model(const std::string& path,
                                       const std::string& kind,
                                       const LinkConfig& cfg) {
  LoadedModel lm;
  try {
    lm.model = neural::load_model(path);
    lm.meta = neural::load_model_meta(path);
  } catch (const missing_artifact_error& e) {
    char tau_buf[32];
    std::snprintf(tau_buf, sizeof tau_buf, "%g", cfg.tau);
    throw missing_artifact_error(std::string(e.what()) + " (receiver " + kind +
                                 ", tau " + tau_buf + ")");
  }
  const auto it = lm.meta.find("kind");
  if (it != lm.meta.end() && it->second != kind)
    throw param_error("model at " + path + " is a '" + it->second +
                      "' network, receiver needs '" + kind + "'");
  const auto tau_it = lm.meta.find("tau");
  if (tau_it != lm.meta.end()) {
    const double model_tau = std::strtod(tau_it->second.c_str(), nullptr);
    if (std::abs(model_tau - cfg.tau) > 1e-9) {
      char msg[160];
      std::snprintf(msg, sizeof msg,
                    "model was trained for tau %g, link runs tau %g (receiver %s)",
                    model_tau, cfg.tau, kind.c_str());
      throw param_error("model at " + path + ": " + msg);
    }
  }
  return lm;
}

// ---------------------------------------------------------------------------
// frame machinery

namespace detail {

struct ChannelContext {
  dsp::IsiTaps taps;
  dsp::BandedCholesky window_factor;    // med/cnn/dnn consumed window
  dsp::BandedCholesky fde_factor;       // one cyclic-extended block
  coding::LdpcCode code;                // coded runs only
  coding::Interleaver interleaver;      // coded runs only
  int payload_syms = 0;                 // per iteration
  int blocks_per_iter = 0;
};

inline ChannelContext make_context(const LinkConfig& cfg) {
  ChannelContext ctx;
  if (cfg.tau >= 1.0)
    ctx.taps = dsp::ideal_nyquist_taps(cfg.guard_span());
  else
    ctx.taps = dsp::autocorr_taps(dsp::PulseSpec{}, cfg.tau, cfg.l_isi);
  if (cfg.coded) {
    const std::string& path = cfg.rc == 0.5 ? cfg.alist_r12 : cfg.alist_r34;
    ctx.code = coding::LdpcCode::load_alist(path);
    if (ctx.code.n % cfg.m != 0)
      throw param_error("harness: codeword length not a whole symbol count");
    ctx.payload_syms = ctx.code.n / cfg.m;
    if (ctx.payload_syms % cfg.n_s != 0)
      throw param_error("harness: codeword does not tile into FTN blocks");
    ctx.interleaver = coding::make_interleaver(ctx.code.n, cfg.seed);
  } else {
    ctx.payload_syms = cfg.n_s;
  }
  ctx.blocks_per_iter = ctx.payload_syms / cfg.n_s;
  ctx.window_factor = dsp::factor_channel_covariance(
      ctx.taps, ctx.payload_syms + 2 * cfg.n_pad);
  ctx.fde_factor = dsp::factor_channel_covariance(
      ctx.taps, cfg.n_s + 2 * cfg.fde_nu_effective());
  return ctx;
}

// payload symbols plus everything the receivers consume for one iteration
struct Frame {
  std::vector<std::uint8_t> payload_bits;  // modulated payload (post-code)
  std::vector<std::uint8_t> info_bits;     // coded runs: pre-code data
  cvec consumed;                            // payload + n_pad context each side
  std::vector<cvec> fde_blocks;             // per block: n_s + 2 nu received
};

// Noise order: context positions draw from the guard stream, payload
// position i draws the pair (2i, 2i+1) of the payload stream regardless of
// frame layout, so med/cnn/dnn and fde observe the same payload noise at
// tau = 1 and paired draws elsewhere.
inline void fill_noise(rvec& zr, rvec& zi, int begin, int count,
                       rng::Sequence& seq) {
  for (int i = 0; i < count; ++i) {
    zr[begin + i] = seq.next_gauss();
    zi[begin + i] = seq.next_gauss();
  }
}

inline Frame make_frame(const LinkConfig& cfg, const ChannelContext& ctx,
                        double n0, std::uint64_t point_key, long iter,
                        bool want_fde) {
  const int span = ctx.taps.l_isi;
  const int p = ctx.payload_syms;
  const int lead = cfg.n_pad + span;  // guard+context symbols per side

  Frame fr;
  rng::Sequence data_seq(rng::Stream::derive(cfg.seed, point_key,
                                             static_cast<std::uint64_t>(iter),
                                             rng::purpose::data_bits));
  rng::Sequence guard_bits_seq(rng::Stream::derive(
      cfg.seed, point_key, static_cast<std::uint64_t>(iter), rng::purpose::guard_bits));
  rng::Sequence payload_noise(rng::Stream::derive(
      cfg.seed, point_key, static_cast<std::uint64_t>(iter), rng::purpose::payload_noise));
  rng::Sequence guard_noise(rng::Stream::derive(
      cfg.seed, point_key, static_cast<std::uint64_t>(iter), rng::purpose::guard_noise));

  if (cfg.coded) {
    fr.info_bits = coding::generate_bits(ctx.code.k, data_seq);
    const auto codeword = ctx.code.encode(fr.info_bits);
    fr.payload_bits = coding::interleave<std::uint8_t>(codeword, ctx.interleaver);
  } else {
    fr.payload_bits = coding::generate_bits(cfg.m * p, data_seq);
  }

  // transmit stream: [lead guard] payload [lead guard]
  std::vector<std::uint8_t> tx_bits(2 * static_cast<std::size_t>(p + 2 * lead));
  for (int i = 0; i < 2 * lead; ++i) tx_bits[i] = guard_bits_seq.next_bit();
  std::copy(fr.payload_bits.begin(), fr.payload_bits.end(),
            tx_bits.begin() + 2 * lead);
  for (std::size_t i = 2 * static_cast<std::size_t>(lead + p); i < tx_bits.size(); ++i)
    tx_bits[i] = guard_bits_seq.next_bit();
  const cvec tx = modem::qpsk_modulate(tx_bits);

  // shared consumed window for med/cnn/dnn
  const int w = p + 2 * cfg.n_pad;
  fr.consumed = dsp::apply_isi(tx, ctx.taps, span, w);
  if (n0 > 0.0) {
    rvec zr(w), zi(w);
    fill_noise(zr, zi, 0, cfg.n_pad, guard_noise);
    fill_noise(zr, zi, cfg.n_pad, p, payload_noise);
    fill_noise(zr, zi, cfg.n_pad + p, cfg.n_pad, guard_noise);
    const cvec eta = dsp::colored_noise(ctx.window_factor, n0, zr, zi);
    for (int i = 0; i < w; ++i) fr.consumed[i] += eta[i];
  }

  if (!want_fde) return fr;

  // The cyclic-extended layout reuses the payload symbols and noise draw
  // order; extensions make each payload window exactly circular because the
  // extension length covers the interference span.
  const int nu = cfg.fde_nu_effective();
  rng::Sequence fde_payload_noise(rng::Stream::derive(
      cfg.seed, point_key, static_cast<std::uint64_t>(iter), rng::purpose::payload_noise));
  rng::Sequence fde_guard_noise(rng::Stream::derive(
      cfg.seed, point_key, static_cast<std::uint64_t>(iter), rng::purpose::guard_noise));
  cvec stream;
  stream.reserve(static_cast<std::size_t>(ctx.blocks_per_iter) * (cfg.n_s + 2 * nu) +
                 2 * span);
  for (int i = 0; i < span; ++i) stream.push_back(tx[i]);  // reuse guard symbols
  for (int b = 0; b < ctx.blocks_per_iter; ++b) {
    const auto first = tx.begin() + lead + static_cast<std::ptrdiff_t>(b) * cfg.n_s;
    const cvec block(first, first + cfg.n_s);
    const cvec ext = receivers::fde_extend(block, nu);
    stream.insert(stream.end(), ext.begin(), ext.end());
  }
  for (int i = 0; i < span; ++i) stream.push_back(tx[tx.size() - span + i]);

  fr.fde_blocks.resize(ctx.blocks_per_iter);
  const int ext_len = cfg.n_s + 2 * nu;
  for (int b = 0; b < ctx.blocks_per_iter; ++b) {
    const int offset = span + b * ext_len;
    cvec rx = dsp::apply_isi(stream, ctx.taps, offset, ext_len);
    if (n0 > 0.0) {
      rvec zr(ext_len), zi(ext_len);
      fill_noise(zr, zi, 0, nu, fde_guard_noise);
      fill_noise(zr, zi, nu, cfg.n_s, fde_payload_noise);
      fill_noise(zr, zi, nu + cfg.n_s, nu, fde_guard_noise);
      const cvec eta = dsp::colored_noise(ctx.fde_factor, n0, zr, zi);
      for (int i = 0; i < ext_len; ++i) rx[i] += eta[i];
    }
    fr.fde_blocks[b] = std::move(rx);
  }
  return fr;
}

// LLRs for every payload block of one frame under the chosen receiver
inline std::vector<modem::LlrBlock> demodulate(const LinkConfig& cfg,
                                               const ChannelContext& ctx,
                                               const Frame& fr, Receiver rx,
                                               double n0, const ModelSet& models) {
  const int blocks = ctx.blocks_per_iter;
  std::vector<modem::LlrBlock> out;
  out.reserve(blocks);
  switch (rx) {
    case Receiver::med: {
      for (int b = 0; b < blocks; ++b) {
        const auto first = fr.consumed.begin() + cfg.n_pad +
                           static_cast<std::ptrdiff_t>(b) * cfg.n_s;
        out.push_back(receivers::med_receive(
            std::span<const cplx>(&*first, static_cast<std::size_t>(cfg.n_s)), n0));
      }
      return out;
    }
    case Receiver::fde: {
      receivers::FdeConfig fcfg;
      fcfg.nu = cfg.fde_nu_effective();
      for (int b = 0; b < blocks; ++b)
        out.push_back(receivers::fde_receive(fr.fde_blocks[b], ctx.taps, n0, fcfg));
      return out;
    }
    case Receiver::cnn: {
      if (!models.cnn) throw param_error("cnn receiver requested without a model");
      receivers::CnnReceiver crx;
      crx.model = models.cnn->model;  // copy keeps the set reusable
      crx.n_s = cfg.n_s;
      crx.n_pad = cfg.n_pad;
      std::vector<receivers::CnnInput> inputs;
      inputs.reserve(blocks);
      for (int b = 0; b < blocks; ++b)
        inputs.push_back(receivers::cnn_preprocess(fr.consumed, b, cfg.n_s,
                                                   cfg.n_pad, cfg.n_pad));
      return crx.receive(inputs);
    }
    case Receiver::dnn: {
      if (!models.dnn) throw param_error("dnn receiver requested without a model");
      receivers::DnnReceiver drx;
      drx.model = models.dnn->model;
      drx.cfg.input_len = cfg.n_s + 2 * cfg.n_pad;
      drx.cfg.output_len = cfg.n_s;
      for (int b = 0; b < blocks; ++b) {
        const auto first = fr.consumed.begin() + static_cast<std::ptrdiff_t>(b) * cfg.n_s;
        out.push_back(drx.receive(
            std::span<const cplx>(&*first, static_cast<std::size_t>(drx.cfg.input_len)),
            n0));
      }
      return out;
    }
  }
  throw param_error("demodulate: unreachable receiver");
}

struct IterOutcome {
  long bit_errors = 0;
  long bits = 0;
  long block_errors = 0;
  long blocks = 0;
};

inline IterOutcome run_iteration(const LinkConfig& cfg, const ChannelContext& ctx,
                                 Receiver rx, double ebn0_db,
                                 std::uint64_t point_key, long iter,
                                 const ModelSet& models) {
  const double n0 = ebn0_to_n0(ebn0_db, cfg.m);
  const Frame fr = make_frame(cfg, ctx, n0, point_key, iter, rx == Receiver::fde);
  const auto llrs = demodulate(cfg, ctx, fr, rx, n0, models);

  IterOutcome res;
  if (!cfg.coded) {
    for (int b = 0; b < ctx.blocks_per_iter; ++b) {
      const auto bits = llrs[b].hard_bits();
      long wrong = 0;
      for (int i = 0; i < cfg.m * cfg.n_s; ++i)
        if (bits[i] != fr.payload_bits[static_cast<std::size_t>(b) * cfg.m * cfg.n_s + i])
          ++wrong;
      res.bit_errors += wrong;
      res.bits += cfg.m * cfg.n_s;
      res.block_errors += wrong > 0 ? 1 : 0;
      res.blocks += 1;
    }
    return res;
  }

  rvec interleaved(ctx.code.n);
  for (int b = 0; b < ctx.blocks_per_iter; ++b)
    std::copy(llrs[b].llrs.begin(), llrs[b].llrs.end(),
              interleaved.begin() + static_cast<std::ptrdiff_t>(b) * cfg.m * cfg.n_s);
  const rvec channel_llrs = coding::deinterleave<double>(interleaved, ctx.interleaver);
  const auto decoded = coding::ldpc_decode(channel_llrs, ctx.code);
  long wrong = 0;
  for (int i = 0; i < ctx.code.k; ++i)
    if (decoded.info_bits[i] != fr.info_bits[i]) ++wrong;
  res.bit_errors = wrong;
  res.bits = ctx.code.k;
  res.block_errors = wrong > 0 ? 1 : 0;
  res.blocks = 1;
  return res;
}

inline std::uint64_t point_key_of(double ebn0_db) {
  std::uint64_t key = 0;
  static_assert(sizeof key == sizeof ebn0_db);
  std::memcpy(&key, &ebn0_db, sizeof key);
  return key;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Monte Carlo driver

// per-iteration tallies; receivers at the same point share noise draws, so
// aligning these across receivers gives paired-difference statistics
struct IterationStat {
  long bit_errors = 0;
  long bits = 0;
  long block_errors = 0;
  long blocks = 0;
};

// Iterations are consumed in order with the early-stop rule applied per
// iteration, so the outcome is byte-identical for any thread count; threads
// only precompute iterations in batches.
inline MetricRecord run_point(const LinkConfig& cfg, double ebn0_db, Receiver rx,
                              const ModelSet& models = {}, int threads = 1,
                              std::vector<IterationStat>* per_iter = nullptr) {
  cfg.validate();
  if (threads < 1) throw param_error("run_point: threads must be >= 1");
  const detail::ChannelContext ctx = detail::make_context(cfg);
  const std::uint64_t point_key = detail::point_key_of(ebn0_db);

  long bits = 0, bit_errors = 0, blocks = 0, block_errors = 0;
  long iter = 0;
  bool stopped_early = false;
  while (iter < cfg.max_mc_iterations) {
    const long batch = std::min<long>(threads, cfg.max_mc_iterations - iter);
    std::vector<detail::IterOutcome> outcomes(static_cast<std::size_t>(batch));
    if (batch == 1) {
      outcomes[0] = detail::run_iteration(cfg, ctx, rx, ebn0_db, point_key, iter, models);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(batch));
      for (long j = 0; j < batch; ++j)
        pool.emplace_back([&, j] {
          outcomes[static_cast<std::size_t>(j)] = detail::run_iteration(
              cfg, ctx, rx, ebn0_db, point_key, iter + j, models);
        });
      for (auto& t : pool) t.join();
    }
    for (long j = 0; j < batch; ++j) {
      const auto& o = outcomes[static_cast<std::size_t>(j)];
      bits += o.bits;
      bit_errors += o.bit_errors;
      blocks += o.blocks;
      block_errors += o.block_errors;
      if (per_iter)
        per_iter->push_back({o.bit_errors, o.bits, o.block_errors, o.blocks});
      ++iter;
      if (block_errors >= cfg.min_block_errors) {
        stopped_early = iter < cfg.max_mc_iterations;
        break;
      }
    }
    if (stopped_early) break;
  }

  MetricRecord rec;
  rec.receiver = receiver_name(rx);
  rec.tau = cfg.tau;
  rec.rc = cfg.coded ? cfg.rc : 1.0;
  rec.ebn0_db = ebn0_db;
  rec.ber = bits > 0 ? static_cast<double>(bit_errors) / bits : 0.0;
  rec.bler = blocks > 0 ? static_cast<double>(block_errors) / blocks : 0.0;
  const double gamma = rx == Receiver::fde ? cfg.fde_gamma() : 1.0;
  rec.throughput_bps = throughput(cfg.m, rec.rc, cfg.tau, cfg.t_n, gamma, rec.bler);
  rec.blocks = blocks;
  rec.bit_errors = bit_errors;
  rec.block_errors = block_errors;
  rec.stopped_early = stopped_early;
  return rec;
}

// AWGN reference at Nyquist signaling, uncoded
inline MetricRecord theory_record(const LinkConfig& cfg, double ebn0_db) {
  MetricRecord rec;
  rec.receiver = "theory";
  rec.tau = 1.0;
  rec.rc = 1.0;
  rec.ebn0_db = ebn0_db;
  rec.ber = modem::theoretical_qpsk_ber(ebn0_db);
  rec.bler = modem::theoretical_bler(ebn0_db, cfg.m * cfg.n_s);
  rec.throughput_bps = throughput(cfg.m, 1.0, 1.0, cfg.t_n, 1.0, rec.bler);
  return rec;
}

// Builds the channel context once and discards it: surfaces missing or
// malformed artifacts (code files) before any Monte Carlo work starts.
inline void validate_artifacts(const LinkConfig& cfg) {
  (void)detail::make_context(cfg);
}

// Full sweep: theory rows plus one record per (receiver, grid point). A
// failing point is recorded with NaN metrics and the sweep continues.
inline std::vector<MetricRecord> run_sweep(const LinkConfig& cfg,
                                           const std::vector<Receiver>& rxs,
                                           const ModelSet& models = {},
                                           int threads = 1,
                                           std::ostream* log = nullptr) {
  cfg.validate();
  std::vector<MetricRecord> table;
  for (double db : cfg.ebn0_grid_db) table.push_back(theory_record(cfg, db));
  for (Receiver rx : rxs) {
    for (double db : cfg.ebn0_grid_db) {
      try {
        table.push_back(run_point(cfg, db, rx, models, threads));
        if (log)
          *log << "point " << receiver_name(rx) << " @ " << db << " dB: ber "
               << table.back().ber << "\n";
      } catch (const std::exception& e) {
        MetricRecord bad;
        bad.receiver = receiver_name(rx);
        bad.tau = cfg.tau;
        bad.rc = cfg.coded ? cfg.rc : 1.0;
        bad.ebn0_db = db;
        bad.ber = bad.bler = bad.throughput_bps =
            std::numeric_limits<double>::quiet_NaN();
        table.push_back(bad);
        if (log)
          *log << "point " << receiver_name(rx) << " @ " << db
               << " dB failed: " << e.what() << "\n";
      }
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// CSV persistence

inline constexpr const char* kCsvHeader =
    "receiver,tau,rc,ebn0_db,ber,bler,throughput_bps,blocks,bit_errors,"
    "block_errors,stopped_early";

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string to_csv(const std::vector<MetricRecord>& records) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  for (const auto& r : records) {
    out << r.receiver << ',' << detail::fmt_double(r.tau) << ','
        << detail::fmt_double(r.rc) << ',' << detail::fmt_double(r.ebn0_db) << ','
        << detail::fmt_double(r.ber) << ',' << detail::fmt_double(r.bler) << ','
        << detail::fmt_double(r.throughput_bps) << ',' << r.blocks << ','
        << r.bit_errors << ',' << r.block_errors << ','
        << (r.stopped_early ? 1 : 0) << "\n";
  }
  return out.str();
}

inline void write_csv(const std::string& path,
                      const std::vector<MetricRecord>& records) {
  std::ofstream f(path);
  if (!f) throw missing_artifact_error("cannot write csv: " + path);
  f << to_csv(records);
  if (!f) throw missing_artifact_error("csv write failed: " + path);
}

inline std::vector<MetricRecord> parse_csv(const std::string& text,
                                           const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw format_error("csv: bad header in " + origin);
  std::vector<MetricRecord> records;
  int lineno = 1;
  auto to_double = [&](const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
      throw format_error("csv: bad number '" + s + "' at " + origin + ":" +
                         std::to_string(lineno));
    return v;
  };
  auto to_long = [&](const std::string& s) {
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(s, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != s.size())
      throw format_error("csv: bad integer '" + s + "' at " + origin + ":" +
                         std::to_string(lineno));
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 11)
      throw format_error("csv: expected 11 fields at " + origin + ":" +
                         std::to_string(lineno));
    MetricRecord r;
    r.receiver = f[0];
    r.tau = to_double(f[1]);
    r.rc = to_double(f[2]);
    r.ebn0_db = to_double(f[3]);
    r.ber = to_double(f[4]);
    r.bler = to_double(f[5]);
    r.throughput_bps = to_double(f[6]);
    r.blocks = to_long(f[7]);
    r.bit_errors = to_long(f[8]);
    r.block_errors = to_long(f[9]);
    const long flag = to_long(f[10]);
    if (flag != 0 && flag != 1)
      throw format_error("csv: stopped_early must be 0/1 at " + origin + ":" +
                         std::to_string(lineno));
    r.stopped_early = flag == 1;
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<MetricRecord> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw missing_artifact_error("cannot open csv: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_csv(buf.str(), path);
}

// ---------------------------------------------------------------------------
// config materialization

inline LinkConfig link_from_config(const config::Config& cfg) {
  LinkConfig link;
  link.tau = cfg.get_double("link", "tau", link.tau);
  link.l_isi = static_cast<int>(cfg.get_long("link", "l_isi", link.l_isi));
  link.n_s = static_cast<int>(cfg.get_long("link", "n_s", link.n_s));
  link.n_pad = static_cast<int>(cfg.get_long("link", "n_pad", link.n_pad));
  link.coded = cfg.get_bool("link", "coded", link.coded);
  link.rc = cfg.get_double("link", "rc", link.rc);
  link.t_n = cfg.get_double("link", "t_n", link.t_n);
  link.ebn0_grid_db = cfg.get_grid("link", "ebn0_grid_db", "0:1:12");
  link.max_mc_iterations = cfg.get_long("link", "max_mc_iterations", link.max_mc_iterations);
  link.min_block_errors = cfg.get_long("link", "min_block_errors", link.min_block_errors);
  link.seed = static_cast<std::uint64_t>(cfg.get_long("link", "seed", 1));
  link.paper_mode = cfg.get_bool("link", "paper_mode", link.paper_mode);
  link.fde_nu = static_cast<int>(cfg.get_long("fde", "nu", 0));
  link.receivers = cfg.get_list("sweep", "receivers", "med");
  link.alist_r12 = cfg.get_string("coding", "alist_r12", link.alist_r12);
  link.alist_r34 = cfg.get_string("coding", "alist_r34", link.alist_r34);
  return link;
}

inline neural::TrainConfig train_from_config(const config::Config& cfg) {
  neural::TrainConfig t;
  t.batch_size = static_cast<int>(cfg.get_long("train", "batch_size", t.batch_size));
  t.lr_init = cfg.get_double("train", "lr_init", t.lr_init);
  t.lr_decay_factor = cfg.get_double("train", "lr_decay_factor", t.lr_decay_factor);
  t.lr_patience = static_cast<int>(cfg.get_long("train", "lr_patience", t.lr_patience));
  t.early_stop_patience = static_cast<int>(
      cfg.get_long("train", "early_stop_patience", t.early_stop_patience));
  t.l2 = cfg.get_double("train", "l2", t.l2);
  t.esn0_min_db = cfg.get_double("train", "esn0_min_db", t.esn0_min_db);
  t.esn0_max_db = cfg.get_double("train", "esn0_max_db", t.esn0_max_db);
  t.seed = static_cast<std::uint64_t>(cfg.get_long("train", "seed", 1));
  t.max_epochs = cfg.get_long("train", "max_epochs", t.max_epochs);
  return t;
}

inline receivers::CnnConfig cnn_from_config(const config::Config& cfg,
                                            const LinkConfig& link) {
  receivers::CnnConfig c;
  c.n_s = link.n_s;
  c.n_pad = link.n_pad;
  c.filters = static_cast<int>(cfg.get_long("cnn", "filters", c.filters));
  c.width = static_cast<int>(cfg.get_long("cnn", "width", c.width));
  c.blocks = static_cast<int>(cfg.get_long("cnn", "blocks", c.blocks));
  c.alpha = cfg.get_double("cnn", "alpha", c.alpha);
  return c;
}

inline receivers::DnnConfig dnn_from_config(const config::Config& cfg,
                                            const LinkConfig& link) {
  receivers::DnnConfig d;
  d.input_len = link.n_s + 2 * link.n_pad;
  d.output_len = link.n_s;
  const auto hidden = cfg.get_list("dnn", "hidden", "330,330,330,330");
  if (hidden.size() != d.hidden.size())
    throw param_error("config: dnn.hidden must list exactly 4 sizes");
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    try {
      d.hidden[i] = std::stoi(hidden[i]);
    } catch (const std::exception&) {
      throw param_error("config: dnn.hidden entry '" + hidden[i] + "' is not an integer");
    }
  }
  d.alpha = cfg.get_double("dnn", "alpha", d.alpha);
  return d;
}

}  // namespace ftn::harness
