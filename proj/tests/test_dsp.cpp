#include "ftn/dsp.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>

using namespace ftn;
using namespace ftn::dsp;

namespace {

PulseSpec default_spec() { return PulseSpec{}; }

Eigen::MatrixXd to_eigen(const IsiMatrix& g) {
  Eigen::MatrixXd m(g.order, g.order);
  for (int i = 0; i < g.order; ++i)
    for (int j = 0; j < g.order; ++j) m(i, j) = g.at(i, j);
  return m;
}

}  // namespace

TEST(Srrc, ClosedFormSpotValues) {
  // peak and the removable singularity at u = 1/(4 beta), beta = 0.5
  EXPECT_NEAR(srrc_eval_normalized(0.0, 0.5), 1.1366197723675815, 1e-12);
  EXPECT_NEAR(srrc_eval_normalized(0.5, 0.5), 0.5786324696325503, 1e-12);
  // continuity across the singularity
  EXPECT_NEAR(srrc_eval_normalized(0.5 + 1e-7, 0.5), 0.5786324696325503, 1e-5);
  EXPECT_NEAR(srrc_eval_normalized(-0.5, 0.5), srrc_eval_normalized(0.5, 0.5),
              1e-15);
}

TEST(Srrc, PhysicalScalingAndTruncation) {
  PulseSpec spec = default_spec();
  const double root_t = std::sqrt(spec.nyquist_symbol_time);
  EXPECT_NEAR(srrc_eval(0.0, spec) * root_t, 1.1366197723675815, 1e-12);
  EXPECT_EQ(srrc_eval(spec.nyquist_symbol_time * (spec.span + 0.5), spec), 0.0);
}

TEST(Srrc, SampledPulseUnitEnergy) {
  PulseSpec spec = default_spec();
  SampledPulse p = srrc_pulse(spec);
  EXPECT_EQ(static_cast<int>(p.samples.size()),
            2 * spec.span * spec.oversampling + 1);
  EXPECT_EQ(p.center, spec.span * spec.oversampling);
  EXPECT_NEAR(p.energy(), 1.0, 1e-13);
  // truncated closed form already carries almost all the energy
  double raw = 0.0;
  for (int i = -p.center; i <= p.center; ++i) {
    const double v = srrc_eval(i * p.dt, spec);
    raw += v * v;
  }
  EXPECT_NEAR(raw * p.dt, 1.0, 1e-4);
}

TEST(Srrc, RejectsBadParameters) {
  PulseSpec spec = default_spec();
  spec.beta = 0.0;
  EXPECT_THROW(srrc_pulse(spec), param_error);
  spec = default_spec();
  spec.beta = 1.5;
  EXPECT_THROW(srrc_pulse(spec), param_error);
  spec = default_spec();
  spec.oversampling = 8;
  EXPECT_THROW(srrc_pulse(spec), param_error);
  spec = default_spec();
  spec.span = 16;
  EXPECT_THROW(srrc_pulse(spec), param_error);
}

TEST(Taps, MatchRaisedCosineOracleTau07) {
  // independent quadrature oracle at 1024 samples per interval
  const IsiTaps t = autocorr_taps(default_spec(), 0.7, 28);
  const double expected[] = {1.0, 0.32748150, -0.13239659, 0.01356708,
                             0.00301861, 0.00571648};
  for (int n = 0; n <= 5; ++n) {
    EXPECT_NEAR(t.at(n), expected[n], 2e-5) << "lag " << n;
    EXPECT_DOUBLE_EQ(t.at(n), t.at(-n));
  }
  EXPECT_EQ(t.at(0), 1.0);
}

TEST(Taps, MatchRaisedCosineOracleTau06) {
  // the positivity repair moves taps by < 1e-4 at this compression
  const IsiTaps t = autocorr_taps(default_spec(), 0.6, 33);
  const double expected[] = {1.0, 0.46338744, -0.10950103, -0.04413196,
                             0.02143850};
  for (int n = 0; n <= 4; ++n) EXPECT_NEAR(t.at(n), expected[n], 2e-4) << n;
}

TEST(Taps, NyquistRateHasNulls) {
  const IsiTaps t = autocorr_taps(default_spec(), 1.0, 8);
  EXPECT_EQ(t.at(0), 1.0);
  for (int n = 1; n <= 8; ++n) EXPECT_NEAR(t.at(n), 0.0, 1e-5) << n;
}

TEST(Taps, SpectrumNonNegativeAfterRepair) {
  for (double tau : {0.6, 0.7}) {
    const int l_isi = tau == 0.6 ? 33 : 28;
    const IsiTaps t = autocorr_taps(default_spec(), tau, l_isi);
    const rvec s = tap_spectrum(t, 4096);
    const double mn = *std::min_element(s.begin(), s.end());
    EXPECT_GT(mn, 0.0) << "tau " << tau;
  }
}

TEST(Taps, IdealNyquistIsDelta) {
  const IsiTaps t = ideal_nyquist_taps(3);
  EXPECT_EQ(t.at(0), 1.0);
  for (int n = 1; n <= 3; ++n) {
    EXPECT_EQ(t.at(n), 0.0);
    EXPECT_EQ(t.at(-n), 0.0);
  }
  EXPECT_EQ(t.at(5), 0.0);  // outside span
}

TEST(Taps, RejectsBadArguments) {
  EXPECT_THROW(autocorr_taps(default_spec(), 0.0, 10), param_error);
  EXPECT_THROW(autocorr_taps(default_spec(), 1.1, 10), param_error);
  EXPECT_THROW(autocorr_taps(default_spec(), 0.7, 0), param_error);
}

TEST(IsiMatrix, ToeplitzBandStructure) {
  const IsiTaps t = autocorr_taps(default_spec(), 0.6, 33);
  const IsiMatrix g = build_isi_matrix(t, 50);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) {
      EXPECT_DOUBLE_EQ(g.at(i, j), t.at(i - j));
      EXPECT_DOUBLE_EQ(g.at(i, j), g.at(j, i));
    }
  // diagonals beyond the interference span are identically zero:
  // 2 * (50 - 33 - 1) of them
  int zero_diagonals = 0;
  for (int d = -49; d <= 49; ++d) {
    if (d == 0) continue;
    bool all_zero = true;
    for (int i = std::max(0, -d); i < std::min(50, 50 - d); ++i)
      if (g.at(i, i + d) != 0.0) all_zero = false;
    if (all_zero) ++zero_diagonals;
  }
  EXPECT_EQ(zero_diagonals, 2 * (50 - 33 - 1));
}

TEST(IsiMatrix, ZeroDiagonalCountTau07) {
  const IsiTaps t = autocorr_taps(default_spec(), 0.7, 28);
  const IsiMatrix g = build_isi_matrix(t, 50);
  int zero_diagonals = 0;
  for (int d = 1; d <= 49; ++d)
    if (d > t.l_isi) zero_diagonals += 2;
  EXPECT_EQ(zero_diagonals, 2 * (50 - 28 - 1));
  EXPECT_EQ(g.at(0, 49), 0.0);
  EXPECT_NE(g.at(0, 28), 0.0);
}

TEST(IsiMatrix, SectionsArePositiveSemiDefinite) {
  for (double tau : {0.6, 0.7}) {
    const int l_isi = tau == 0.6 ? 33 : 28;
    const IsiTaps t = autocorr_taps(default_spec(), tau, l_isi);
    for (int order : {50, 624}) {
      const Eigen::MatrixXd m = to_eigen(build_isi_matrix(t, order));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
      EXPECT_GT(es.eigenvalues().minCoeff(), -1e-8)
          << "tau " << tau << " order " << order;
    }
  }
}

TEST(Cholesky, FactorsReproduceCovariance) {
  const IsiTaps t = autocorr_taps(default_spec(), 0.7, 28);
  const int order = 80;
  const BandedCholesky f = factor_channel_covariance(t, order);
  EXPECT_LE(f.epsilon, 1e-6);
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(order, order);
  for (int i = 0; i < order; ++i)
    for (int j = std::max(0, i - f.bandwidth); j <= i; ++j)
      l(i, j) = f.at(i, j);
  const Eigen::MatrixXd product = l * l.transpose();
  const Eigen::MatrixXd target =
      to_eigen(build_isi_matrix(t, order)) +
      f.epsilon * Eigen::MatrixXd::Identity(order, order);
  EXPECT_LT((product - target).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cholesky, IdentityChannelFactorsToIdentity) {
  const BandedCholesky f = factor_channel_covariance(ideal_nyquist_taps(), 16);
  for (int i = 0; i < 16; ++i)
    EXPECT_NEAR(f.at(i, i), 1.0, 1e-5);
}

TEST(Cholesky, MultiplyMatchesDense) {
  const IsiTaps t = autocorr_taps(default_spec(), 0.6, 33);
  const int order = 60;
  const BandedCholesky f = factor_channel_covariance(t, order);
  rng::Sequence rng(rng::Stream::derive(11, 0, 0, 1));
  rvec z(order), y(order);
  for (double& v : z) v = rng.next_gauss();
  f.multiply(z, y);
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(order, order);
  for (int i = 0; i < order; ++i)
    for (int j = std::max(0, i - f.bandwidth); j <= i; ++j) l(i, j) = f.at(i, j);
  const Eigen::VectorXd ze = Eigen::Map<const Eigen::VectorXd>(z.data(), order);
  const Eigen::VectorXd ye = l * ze;
  for (int i = 0; i < order; ++i) EXPECT_NEAR(y[i], ye(i), 1e-12);
}

TEST(Noise, EmpiricalCovarianceTracksChannel) {
  const IsiTaps t = autocorr_taps(default_spec(), 0.7, 28);
  const int order = 40;
  const double n0 = 2.0;
  const NoiseSpec noise = NoiseSpec::make(t, order, n0);
  const int trials = 20000;
  rng::Sequence rng(rng::Stream::derive(1234, 7, 0, 2));
  std::vector<double> acc(3, 0.0);  // lag 0, 1, 2 real-part covariances
  double mean = 0.0;
  for (int k = 0; k < trials; ++k) {
    const cvec eta = draw_colored_noise(noise, rng);
    const int i = order / 2;
    mean += eta[i].real();
    acc[0] += eta[i].real() * eta[i].real();
    acc[1] += eta[i].real() * eta[i + 1].real();
    acc[2] += eta[i].real() * eta[i + 2].real();
  }
  const double half_n0 = n0 / 2.0;
  EXPECT_NEAR(mean / trials, 0.0, 0.03);
  EXPECT_NEAR(acc[0] / trials, half_n0 * t.at(0), 0.05);
  EXPECT_NEAR(acc[1] / trials, half_n0 * t.at(1), 0.05);
  EXPECT_NEAR(acc[2] / trials, half_n0 * t.at(2), 0.05);
}

TEST(Noise, RejectsNegativeDensity) {
  const IsiTaps t = ideal_nyquist_taps();
  EXPECT_THROW(NoiseSpec::make(t, 8, -1.0), param_error);
}

TEST(Channel, ApplyIsiMatchesDenseMultiply) {
  const IsiTaps t = autocorr_taps(default_spec(), 0.6, 33);
  const int total = 90, offset = 33, out_len = 24;
  rng::Sequence rng(rng::Stream::derive(5, 1, 0, 3));
  cvec x(total);
  for (auto& v : x) v = cplx(rng.next_gauss(), rng.next_gauss());
  const cvec y = apply_isi(x, t, offset, out_len);

  const IsiMatrix g = build_isi_matrix(t, total);
  Eigen::MatrixXcd ge(total, total);
  for (int i = 0; i < total; ++i)
    for (int j = 0; j < total; ++j) ge(i, j) = g.at(i, j);
  const Eigen::VectorXcd xe = Eigen::Map<const Eigen::VectorXcd>(x.data(), total);
  const Eigen::VectorXcd full = ge * xe;
  for (int j = 0; j < out_len; ++j) {
    EXPECT_NEAR(y[j].real(), full(offset + j).real(), 1e-12);
    EXPECT_NEAR(y[j].imag(), full(offset + j).imag(), 1e-12);
  }
}

TEST(Channel, IdentityTapsPassThrough) {
  const IsiTaps t = ideal_nyquist_taps();
  cvec x = {cplx(1, 1), cplx(-1, 1), cplx(1, -1), cplx(-1, -1), cplx(1, 1)};
  const cvec y = apply_isi(x, t, 1, 3);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(y[j], x[1 + j]);
}

TEST(Channel, GuardContextEnforced) {
  const IsiTaps t = autocorr_taps(default_spec(), 0.7, 28);
  cvec x(60);
  EXPECT_THROW(apply_isi(x, t, 10, 5), param_error);   // offset < l_isi
  EXPECT_THROW(apply_isi(x, t, 28, 10), param_error);  // tail context missing
  EXPECT_NO_THROW(apply_isi(x, t, 28, 4));
}

TEST(Channel, NoiselessChannelIsDeterministic) {
  const IsiTaps t = autocorr_taps(default_spec(), 0.7, 28);
  NoiseSpec noise;
  noise.n0 = 0.0;
  noise.coloring = factor_channel_covariance(t, 10);
  rng::Sequence rng_a(rng::Stream::derive(9, 0, 0, 4));
  rng::Sequence rng_b(rng::Stream::derive(10, 0, 0, 4));
  cvec x(70, cplx(1.0, -1.0));
  const cvec a = apply_channel(x, t, noise, rng_a, 30, 10);
  const cvec b = apply_channel(x, t, noise, rng_b, 30, 10);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a[i], b[i]);
}
