#pragma once

// QPSK mapping, the matched-filter symbol-by-symbol soft demodulator, and
// closed-form AWGN reference curves.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "ftn/common.hpp"

namespace ftn::modem {

inline constexpr int kBitsPerSymbol = 2;

// Transmission block layout: [guard | pad | payload | pad | guard].
// pads give the windowed receivers context; guards give the channel full
// tap support beyond the consumed window.
struct SymbolBlock {
  cvec data;
  int n_data = 0;
  int n_pad = 0;
  int n_guard = 0;

  int length() const { return n_data + 2 * (n_pad + n_guard); }
  int payload_offset() const { return n_guard + n_pad; }
  int consumed_offset() const { return n_guard; }
  int consumed_length() const { return n_data + 2 * n_pad; }

  void validate() const {
    if (n_data < 1 || n_pad < 0 || n_guard < 0)
      throw param_error("symbol block: bad dimensions");
    if (static_cast<int>(data.size()) != length())
      throw param_error("symbol block: data length mismatch");
  }
};

// Per-payload-symbol bit LLRs, natural log, positive = bit 0 more likely.
struct LlrBlock {
  rvec llrs;  // n_sym x m, row-major
  int m = kBitsPerSymbol;

  int n_sym() const { return m == 0 ? 0 : static_cast<int>(llrs.size()) / m; }
  double at(int sym, int bit) const { return llrs[static_cast<std::size_t>(sym) * m + bit]; }
  double& at(int sym, int bit) { return llrs[static_cast<std::size_t>(sym) * m + bit]; }

  // tie breaks toward bit 0 so decisions are deterministic
  std::vector<std::uint8_t> hard_bits() const {
    std::vector<std::uint8_t> out(llrs.size());
    for (std::size_t i = 0; i < llrs.size(); ++i) out[i] = llrs[i] < 0.0 ? 1 : 0;
    return out;
  }

  void validate() const {
    if (m < 1) throw param_error("llr block: m must be >= 1");
    if (llrs.size() % m != 0) throw param_error("llr block: ragged shape");
    for (double v : llrs)
      if (!std::isfinite(v)) throw numerical_error("llr block: non-finite entry");
  }
};

// Gray map, bit pair (b0, b1) -> ((1-2 b0) + j (1-2 b1)) / sqrt(2).
inline cvec qpsk_modulate(std::span<const std::uint8_t> bits) {
  if (bits.size() % 2 != 0) throw param_error("qpsk_modulate: odd bit count");
  const double a = 1.0 / std::numbers::sqrt2;
  cvec out(bits.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = cplx(bits[2 * i] ? -a : a, bits[2 * i + 1] ? -a : a);
  return out;
}

inline std::vector<std::uint8_t> qpsk_hard_demap(std::span<const cplx> symbols) {
  std::vector<std::uint8_t> bits(2 * symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    bits[2 * i] = symbols[i].real() < 0.0 ? 1 : 0;
    bits[2 * i + 1] = symbols[i].imag() < 0.0 ? 1 : 0;
  }
  return bits;
}

// Exact AWGN bit LLRs under the mapping above; interference is treated as
// absent, which is what makes this the plain uncompensated receiver.
inline LlrBlock med_demap(std::span<const cplx> y, double n0) {
  if (!(n0 > 0.0)) throw param_error("med_demap: n0 must be > 0");
  const double scale = 2.0 * std::numbers::sqrt2 / n0;
  LlrBlock out;
  out.llrs.resize(2 * y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.llrs[2 * i] = scale * y[i].real();
    out.llrs[2 * i + 1] = scale * y[i].imag();
  }
  return out;
}

// Q(sqrt(2 Eb/N0)) through erfc.
inline double theoretical_qpsk_ber(double ebn0_db) {
  const double ebn0 = std::pow(10.0, ebn0_db / 10.0);
  return 0.5 * std::erfc(std::sqrt(ebn0));
}

// Uncoded block error bound: any of block_bits i.i.d. bits wrong.
inline double theoretical_bler(double ebn0_db, long block_bits) {
  if (block_bits < 1) throw param_error("theoretical_bler: block_bits must be >= 1");
  const double ber = theoretical_qpsk_ber(ebn0_db);
  return -std::expm1(static_cast<double>(block_bits) * std::log1p(-ber));
}

}  // namespace ftn::modem
