#pragma once

// Bit source, LDPC encode/decode, and interleaving.
//
// Parity matrices load from alist files. The encoder is generic: reduced
// row echelon form over GF(2) with pivots chosen from the right, so the
// free (information) positions sit leftmost and any full-row-rank H works.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ftn/common.hpp"

namespace ftn::coding {

inline std::vector<std::uint8_t> generate_bits(long count, rng::Sequence& rng) {
  if (count < 0) throw param_error("generate_bits: negative count");
  std::vector<std::uint8_t> bits(count);
  for (auto& b : bits) b = rng.next_bit();
  return bits;
}

namespace detail {

using BitRow = std::vector<std::uint64_t>;

inline bool get_bit(const BitRow& r, int i) {
  return (r[i >> 6] >> (i & 63)) & 1u;
}
inline void flip_bit(BitRow& r, int i) { r[i >> 6] ^= 1ull << (i & 63); }

inline void xor_into(BitRow& dst, const BitRow& src) {
  for (std::size_t w = 0; w < dst.size(); ++w) dst[w] ^= src[w];
}

inline int highest_bit(const BitRow& r) {
  for (int w = static_cast<int>(r.size()) - 1; w >= 0; --w)
    if (r[w]) return 64 * w + 63 - std::countl_zero(r[w]);
  return -1;
}

inline bool parity_and(const BitRow& a, const BitRow& b) {
  std::uint64_t acc = 0;
  for (std::size_t w = 0; w < a.size(); ++w) acc ^= a[w] & b[w];
  return std::popcount(acc) & 1u;
}

}  // namespace detail

class LdpcCode {
 public:
  int n = 0;       // codeword bits
  int n_rows = 0;  // parity rows
  int k = 0;       // information bits = n - n_rows for full-rank H

  double rate() const { return static_cast<double>(k) / n; }

  const std::vector<std::vector<int>>& checks() const { return check_vars_; }
  const std::vector<int>& info_positions() const { return info_cols_; }

  static LdpcCode from_rows(std::vector<std::vector<int>> check_vars, int n);
  static LdpcCode load_alist(const std::string& path);

  std::vector<std::uint8_t> encode(std::span<const std::uint8_t> info) const {
    if (static_cast<int>(info.size()) != k)
      throw param_error("ldpc_encode: info length != k");
    detail::BitRow cw(words_, 0);
    for (int i = 0; i < k; ++i)
      if (info[i]) detail::flip_bit(cw, info_cols_[i]);
    // every reduced row touches only free columns plus its own pivot
    for (std::size_t r = 0; r < rref_.size(); ++r)
      if (detail::parity_and(rref_[r], cw)) detail::flip_bit(cw, pivot_cols_[r]);
    std::vector<std::uint8_t> out(n);
    for (int i = 0; i < n; ++i) out[i] = detail::get_bit(cw, i);
    return out;
  }

  std::vector<std::uint8_t> extract_info(std::span<const std::uint8_t> codeword) const {
    if (static_cast<int>(codeword.size()) != n)
      throw param_error("extract_info: codeword length != n");
    std::vector<std::uint8_t> info(k);
    for (int i = 0; i < k; ++i) info[i] = codeword[info_cols_[i]];
    return info;
  }

  bool parity_ok(std::span<const std::uint8_t> codeword) const {
    if (static_cast<int>(codeword.size()) != n)
      throw param_error("parity_ok: codeword length != n");
    for (const auto& vars : check_vars_) {
      int acc = 0;
      for (int v : vars) acc ^= codeword[v];
      if (acc) return false;
    }
    return true;
  }

 private:
  std::vector<std::vector<int>> check_vars_;
  std::vector<detail::BitRow> rref_;
  std::vector<int> pivot_cols_;
  std::vector<int> info_cols_;
  int words_ = 0;

  void prepare_encoder();
};

inline LdpcCode LdpcCode::from_rows(std::vector<std::vector<int>> check_vars, int n) {
  LdpcCode code;
  code.n = n;
  code.n_rows = static_cast<int>(check_vars.size());
  code.check_vars_ = std::move(check_vars);
  for (const auto& vars : code.check_vars_)
    for (int v : vars)
      if (v < 0 || v >= n) throw format_error("parity matrix: variable index out of range");
  code.prepare_encoder();
  return code;
}

inline void LdpcCode::prepare_encoder() {
  words_ = (n + 63) / 64;
  std::vector<detail::BitRow> rows(n_rows, detail::BitRow(words_, 0));
  for (int r = 0; r < n_rows; ++r)
    for (int v : check_vars_[r]) detail::flip_bit(rows[r], v);

  // forward elimination, rightmost pivot preference
  std::vector<int> pivot_of_col(n, -1);
  rref_.clear();
  pivot_cols_.clear();
  for (int r = 0; r < n_rows; ++r) {
    detail::BitRow row = rows[r];
    int lead = detail::highest_bit(row);
    while (lead >= 0 && pivot_of_col[lead] >= 0) {
      detail::xor_into(row, rref_[pivot_of_col[lead]]);
      lead = detail::highest_bit(row);
    }
    if (lead < 0)
      throw format_error("parity matrix is rank deficient; encoder needs full row rank");
    pivot_of_col[lead] = static_cast<int>(rref_.size());
    rref_.push_back(std::move(row));
    pivot_cols_.push_back(lead);
  }
  // back substitution to reduced form
  for (int r = static_cast<int>(rref_.size()) - 1; r >= 0; --r) {
    const int col = pivot_cols_[r];
    for (int s = 0; s < static_cast<int>(rref_.size()); ++s)
      if (s != r && detail::get_bit(rref_[s], col))
        detail::xor_into(rref_[s], rref_[r]);
  }
  info_cols_.clear();
  for (int c = 0; c < n; ++c)
    if (pivot_of_col[c] < 0) info_cols_.push_back(c);
  k = static_cast<int>(info_cols_.size());
}

inline LdpcCode LdpcCode::load_alist(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw missing_artifact_error("cannot open alist file: " + path);
  auto next_int = [&f, &path](const char* what) {
    long v;
    if (!(f >> v)) throw format_error(std::string("alist ") + path + ": missing " + what);
    return v;
  };
  const long n = next_int("n");
  const long m = next_int("m");
  if (n < 2 || m < 1 || m >= n) throw format_error("alist: bad dimensions");
  const long max_col = next_int("max column weight");
  const long max_row = next_int("max row weight");
  std::vector<long> col_w(n), row_w(m);
  for (auto& w : col_w) w = next_int("column weight");
  for (auto& w : row_w) w = next_int("row weight");
  for (long w : col_w)
    if (w < 1 || w > max_col) throw format_error("alist: column weight out of range");
  for (long w : row_w)
    if (w < 1 || w > max_row) throw format_error("alist: row weight out of range");

  // column adjacency (only cross-checked against the row lists)
  std::vector<std::vector<int>> col_vars(n);
  for (long c = 0; c < n; ++c)
    for (long e = 0; e < max_col; ++e) {
      const long r = next_int("column entry");
      if (r < 0 || r > m) throw format_error("alist: row index out of range");
      if (r == 0) {
        if (e < col_w[c]) throw format_error("alist: padding inside column list");
      } else {
        if (e >= col_w[c]) throw format_error("alist: entry beyond declared weight");
        col_vars[c].push_back(static_cast<int>(r - 1));
      }
    }
  std::vector<std::vector<int>> check_vars(m);
  for (long r = 0; r < m; ++r)
    for (long e = 0; e < max_row; ++e) {
      const long c = next_int("row entry");
      if (c < 0 || c > n) throw format_error("alist: column index out of range");
      if (c == 0) {
        if (e < row_w[r]) throw format_error("alist: padding inside row list");
      } else {
        if (e >= row_w[r]) throw format_error("alist: entry beyond declared weight");
        check_vars[r].push_back(static_cast<int>(c - 1));
      }
    }
  // cross consistency
  std::vector<long> seen(n, 0);
  for (long r = 0; r < m; ++r)
    for (int c : check_vars[r]) ++seen[c];
  for (long c = 0; c < n; ++c)
    if (seen[c] != col_w[c])
      throw format_error("alist: row and column lists disagree");
  for (long c = 0; c < n; ++c)
    for (int r : col_vars[c])
      if (std::find(check_vars[r].begin(), check_vars[r].end(),
                    static_cast<int>(c)) == check_vars[r].end())
        throw format_error("alist: row and column lists disagree");
  return from_rows(std::move(check_vars), static_cast<int>(n));
}

struct DecodeResult {
  std::vector<std::uint8_t> info_bits;
  std::vector<std::uint8_t> codeword;
  bool converged = false;
  int iterations = 0;
};

// Normalized min-sum belief propagation, flooding schedule. Convergence
// means the hard decision satisfies every parity check while carrying
// actual evidence (no exactly-zero total), so an all-zero input does not
// count as converged even though the all-zero word is a codeword.
inline DecodeResult ldpc_decode(std::span<const double> llrs, const LdpcCode& code,
                                int max_iter = 50, double scale = 0.75) {
  if (static_cast<int>(llrs.size()) != code.n)
    throw param_error("ldpc_decode: llr length != n");
  if (max_iter < 1) throw param_error("ldpc_decode: max_iter must be >= 1");
  for (double v : llrs)
    if (!std::isfinite(v)) throw param_error("ldpc_decode: non-finite llr");

  const auto& checks = code.checks();
  std::vector<std::vector<double>> msg(checks.size());
  for (std::size_t c = 0; c < checks.size(); ++c) msg[c].assign(checks[c].size(), 0.0);
  rvec total(llrs.begin(), llrs.end());

  DecodeResult res;
  std::vector<std::uint8_t> hard(code.n);
  for (int iter = 1; iter <= max_iter; ++iter) {
    for (std::size_t c = 0; c < checks.size(); ++c) {
      const auto& vars = checks[c];
      double min1 = std::numeric_limits<double>::infinity(), min2 = min1;
      std::size_t arg1 = 0;
      int sign = 0;
      for (std::size_t e = 0; e < vars.size(); ++e) {
        const double in = total[vars[e]] - msg[c][e];
        const double a = std::abs(in);
        if (in < 0.0) sign ^= 1;
        if (a < min1) {
          min2 = min1;
          min1 = a;
          arg1 = e;
        } else if (a < min2) {
          min2 = a;
        }
      }
      for (std::size_t e = 0; e < vars.size(); ++e) {
        const double in = total[vars[e]] - msg[c][e];
        const double mag = scale * (e == arg1 ? min2 : min1);
        const int s = sign ^ (in < 0.0 ? 1 : 0);
        const double out = s ? -mag : mag;
        total[vars[e]] += out - msg[c][e];
        msg[c][e] = out;
      }
    }
    res.iterations = iter;
    for (int v = 0; v < code.n; ++v) hard[v] = total[v] < 0.0 ? 1 : 0;
    bool syndrome_ok = true;
    for (const auto& vars : checks) {
      int acc = 0;
      for (int v : vars) acc ^= hard[v];
      if (acc) {
        syndrome_ok = false;
        break;
      }
    }
    if (syndrome_ok) {
      bool informative = true;
      for (int v = 0; v < code.n; ++v)
        if (total[v] == 0.0) {
          informative = false;
          break;
        }
      if (informative) {
        res.converged = true;
        break;
      }
    }
  }
  for (int v = 0; v < code.n; ++v) hard[v] = total[v] < 0.0 ? 1 : 0;
  res.codeword = hard;
  res.info_bits = code.extract_info(hard);
  return res;
}

struct Interleaver {
  std::vector<int> permutation;  // out[i] = in[permutation[i]]
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(permutation.size()); }

  void validate() const {
    std::vector<char> seen(permutation.size(), 0);
    for (int p : permutation) {
      if (p < 0 || p >= size() || seen[p])
        throw param_error("interleaver: permutation is not a bijection");
      seen[p] = 1;
    }
  }
};

inline Interleaver make_interleaver(int n, std::uint64_t seed) {
  if (n < 1) throw param_error("make_interleaver: n must be >= 1");
  Interleaver il;
  il.seed = seed;
  il.permutation.resize(n);
  std::iota(il.permutation.begin(), il.permutation.end(), 0);
  rng::Sequence rng(rng::Stream::derive(seed, static_cast<std::uint64_t>(n), 0,
                                        rng::purpose::interleaver));
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
    std::swap(il.permutation[i], il.permutation[j]);
  }
  return il;
}

template <class T>
std::vector<T> interleave(std::span<const T> x, const Interleaver& il) {
  if (static_cast<int>(x.size()) != il.size())
    throw param_error("interleave: length mismatch");
  std::vector<T> out(x.size());
  for (int i = 0; i < il.size(); ++i) out[i] = x[il.permutation[i]];
  return out;
}

template <class T>
std::vector<T> deinterleave(std::span<const T> x, const Interleaver& il) {
  if (static_cast<int>(x.size()) != il.size())
    throw param_error("deinterleave: length mismatch");
  std::vector<T> out(x.size());
  for (int i = 0; i < il.size(); ++i) out[il.permutation[i]] = x[i];
  return out;
}

// Ideal-channel coded reference: flip codeword bits independently at
// probability p, decode from the matching hard-decision LLRs, report the
// block error fraction. Deterministic in (seed, trials).
inline double flip_then_decode_bler(const LdpcCode& code, double p, long trials,
                                    std::uint64_t seed) {
  if (!(p >= 0.0 && p < 0.5))
    throw param_error("flip_then_decode_bler: p must be in [0, 0.5)");
  if (trials < 1) throw param_error("flip_then_decode_bler: trials must be >= 1");
  if (p == 0.0) return 0.0;
  const double llr_mag = std::log((1.0 - p) / p);
  long block_errors = 0;
  for (long t = 0; t < trials; ++t) {
    rng::Sequence bits(rng::Stream::derive(seed, static_cast<std::uint64_t>(t), 0,
                                           rng::purpose::data_bits));
    rng::Sequence flips(rng::Stream::derive(seed, static_cast<std::uint64_t>(t), 1,
                                            rng::purpose::data_bits));
    const auto info = generate_bits(code.k, bits);
    const auto cw = code.encode(info);
    rvec llrs(static_cast<std::size_t>(code.n));
    for (int i = 0; i < code.n; ++i) {
      const bool flip = flips.next_uniform() < p;
      const int bit = cw[static_cast<std::size_t>(i)] ^ (flip ? 1 : 0);
      llrs[static_cast<std::size_t>(i)] = bit ? -llr_mag : llr_mag;
    }
    const auto dec = ldpc_decode(llrs, code);
    if (dec.info_bits != info) ++block_errors;
  }
  return static_cast<double>(block_errors) / static_cast<double>(trials);
}

}  // namespace ftn::coding
