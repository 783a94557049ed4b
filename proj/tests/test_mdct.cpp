#include <doctest.h>

#include "streamcodec/mdct.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

using namespace streamcodec;
using namespace streamcodec::mdct;

namespace {

// Direct evaluation of the MDCT sum.
VectorXd mdct_oracle(const VectorXd& x, int ws) {
  VectorXd out = VectorXd::Zero(ws);
  for (int k = 0; k < ws; ++k) {
    long double acc = 0;
    for (int n = 0; n < 2 * ws; ++n) {
      const long double w = std::sin(std::numbers::pi_v<long double> * (n + 0.5L) / (2.0L * ws));
      acc += x[n] * w *
             std::cos(std::numbers::pi_v<long double> / ws * (n + 0.5L + ws / 2.0L) * (k + 0.5L));
    }
    out[k] = static_cast<double>(acc);
  }
  return out;
}

VectorXd random_vector(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VectorXd v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("window satisfies Princen-Bradley") {
  for (int ws : {1, 8, 40, 80}) {
    MdctConfig<double> cfg(ws);
    CHECK(cfg.frame_length() == 2 * ws);
    CHECK(cfg.princen_bradley_error() < 1e-12);
  }
  CHECK_THROWS_AS(MdctConfig<double>(0), ConfigError);
}

TEST_CASE("forward transform matches the defining sum") {
  std::mt19937_64 rng(1);
  MdctConfig<double> cfg(40);
  for (int trial = 0; trial < 20; ++trial) {
    const VectorXd x = random_vector(80, rng);
    const auto f = mdct_forward<double>(x, cfg);
    CHECK((f.coefficients - mdct_oracle(x, 40)).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(mdct_forward<double>(VectorXd::Zero(80), cfg).coefficients.isZero(0));
  CHECK_THROWS_AS(mdct_forward<double>(VectorXd::Zero(79), cfg), ConfigError);
}

TEST_CASE("bin-centre cosine concentrates in its bin") {
  const int ws = 40;
  MdctConfig<double> cfg(ws);
  const int bin = 7;
  VectorXd x(2 * ws);
  for (int n = 0; n < 2 * ws; ++n)
    x[n] = std::cos(std::numbers::pi / ws * (n + 0.5 + ws / 2.0) * (bin + 0.5));
  const auto f = mdct_forward<double>(x, cfg);
  Eigen::Index arg = 0;
  f.coefficients.cwiseAbs().maxCoeff(&arg);
  CHECK(arg == bin);
  CHECK((f.coefficients - mdct_oracle(x, ws)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("linearity") {
  std::mt19937_64 rng(2);
  MdctConfig<double> cfg(40);
  const VectorXd x = random_vector(80, rng), y = random_vector(80, rng);
  const double a = 0.7, b = -1.3;
  const VectorXd lhs = mdct_forward<double>(a * x + b * y, cfg).coefficients;
  const VectorXd rhs =
      a * mdct_forward<double>(x, cfg).coefficients + b * mdct_forward<double>(y, cfg).coefficients;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("impulse frame inverts to a windowed basis row") {
  MdctConfig<double> cfg(40);
  MdctFrame<double> f{VectorXd::Zero(40), 0};
  f.coefficients[3] = 1.0;
  const VectorXd block = imdct_frame(f, cfg);
  for (int n = 0; n < 80; ++n) {
    const double w = std::sin(std::numbers::pi * (n + 0.5) / 80.0);
    const double expect = w * std::cos(std::numbers::pi / 40 * (n + 0.5 + 20.0) * 3.5) / 20.0;
    CHECK(block[n] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(imdct_frame(MdctFrame<double>{VectorXd::Zero(40), 0}, cfg).isZero(0));
}

TEST_CASE("streaming round trip reproduces the delayed input") {
  std::mt19937_64 rng(3);
  for (int ws : {40, 80}) {
    MdctConfig<double> cfg(ws);
    const VectorXd x = random_vector(16000, rng);
    std::vector<double> sig(x.data(), x.data() + x.size());
    auto frames = analyze<double>(sig, cfg);
    CHECK(frames.size() == static_cast<std::size_t>(16000 / ws));
    const auto y = synthesize(frames, cfg);
    double worst = 0;
    for (std::size_t n = ws; n + ws < sig.size(); ++n) worst = std::max(worst, std::abs(y[n + ws] - sig[n]));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("streaming analysis equals batch analysis exactly") {
  std::mt19937_64 rng(4);
  MdctConfig<double> cfg(40);
  const VectorXd x = random_vector(400, rng);
  std::vector<double> sig(x.data(), x.data() + x.size());
  const auto batch = analyze<double>(sig, cfg);
  AnalysisState<double> st(40);
  for (std::size_t t = 0; t < batch.size(); ++t) {
    const auto f = analysis_push<double>(st, x.segment(static_cast<Eigen::Index>(t) * 40, 40), cfg);
    CHECK(f.frame_index == static_cast<std::int64_t>(t));
    CHECK(f.coefficients == batch[t].coefficients);
  }
  CHECK_THROWS_AS(analysis_push<double>(st, VectorXd::Zero(39), cfg), StreamError);
}

TEST_CASE("synthesis rejects out-of-order frames") {
  MdctConfig<double> cfg(40);
  OlaState<double> st(40);
  CHECK(synthesis_push(st, MdctFrame<double>{VectorXd::Zero(40), 0}, cfg).isZero(0));
  CHECK_THROWS_AS(synthesis_push(st, MdctFrame<double>{VectorXd::Zero(40), 5}, cfg), StreamError);
  CHECK(st.carry.size() == 40);
}

TEST_CASE("frame count") {
  MdctConfig<double> cfg(40);
  std::vector<double> sig(16000, 0.0);
  CHECK(analyze<double>(sig, cfg).size() == 400);
}
