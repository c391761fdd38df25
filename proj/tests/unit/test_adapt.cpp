#include "doctest.h"
#include "test_support.hpp"

using namespace rehmc;
using testing::vec;

namespace {

Matrix random_psd(Eigen::Index d, Rng& rng) {
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = standard_normal(rng);
  return a * a.transpose();
}

}  // namespace

TEST_SUITE("adapt") {

TEST_CASE("dual averaging initialization") {
  DualAveraging da(0.1, 0.7);
  CHECK(da.mu() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(da.h_bar() == 0.0);
  CHECK(da.iteration() == 0);
  CHECK(da.step_size() == doctest::Approx(0.1));
  CHECK(da.final_step_size() == doctest::Approx(0.1));
  CHECK_THROWS_AS(DualAveraging(0.1, 0.0), ConfigError);
  CHECK_THROWS_AS(DualAveraging(0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(DualAveraging(0.1, 1.5), ConfigError);
  CHECK_THROWS_AS(DualAveraging(0.0, 0.7), ConfigError);
}

TEST_CASE("dual averaging first update by hand") {
  DualAveraging da(0.1, 0.7);
  da.update(0.2);
  CHECK(da.h_bar() == doctest::Approx(0.5 / 11.0).epsilon(1e-14));
  CHECK(da.log_step() == doctest::Approx(da.mu() - 0.909091).epsilon(1e-6));
  // kappa-weighted average: weight 1^-0.75 = 1 on the first iterate.
  CHECK(da.log_step_bar() == doctest::Approx(da.log_step()));
}

TEST_CASE("accept statistic at the target is a fixed point") {
  DualAveraging da(0.4, 0.65);
  for (int i = 0; i < 500; ++i) {
    da.update(0.65);
    REQUIRE(da.h_bar() == doctest::Approx(0.0).epsilon(1e-15));
    REQUIRE(da.log_step() == doctest::Approx(da.mu()));
  }
  CHECK(da.final_step_size() == doctest::Approx(4.0));
}

TEST_CASE("out-of-range statistics are clamped and flagged") {
  DualAveraging a(0.1, 0.7);
  DualAveraging b(0.1, 0.7);
  a.update(1.7);
  b.update(1.0);
  CHECK(a.clamped());
  CHECK_FALSE(b.clamped());
  CHECK(a.log_step() == b.log_step());
  DualAveraging c(0.1, 0.7);
  c.update(std::nan(""));
  CHECK(c.clamped());
  CHECK(std::isfinite(c.log_step()));
}

TEST_CASE("identical statistics give identical stepsizes") {
  DualAveraging a(0.3, 0.8);
  DualAveraging b(0.3, 0.8);
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    const double s = uniform01(rng);
    a.update(s);
    b.update(s);
  }
  CHECK(a.final_step_size() == b.final_step_size());
}

TEST_CASE("nuts adaptation reaches the acceptance band") {
  auto t = make_gaussian(GaussianSpec::iid(10));
  auto id = MassMatrix::identity(10);
  auto streams = ChainStreams::from_seed(12);
  Rng init(1);
  auto state = initial_state(*t, id, Vector::Zero(10), init);
  DualAveraging da(1.0, 0.7);
  for (int i = 0; i < 200; ++i) {
    auto b = nuts_iteration(state, da.step_size(), *t, id, 10, {}, streams);
    da.update(b.diagnostics.accept_stat);
    state = b.next;
  }
  double sum = 0.0;
  const int post = 500;
  for (int i = 0; i < post; ++i) {
    auto b = nuts_iteration(state, da.final_step_size(), *t, id, 10, {}, streams);
    sum += b.diagnostics.accept_stat;
    state = b.next;
  }
  const double rate = sum / post;
  CHECK(rate >= 0.6);
  CHECK(rate <= 0.8);
}

TEST_CASE("covariance accumulator hand values") {
  CovarianceAccumulator one(2);
  one.update(vec({3.0, -1.0}));
  CHECK(one.covariance().isZero(0.0));
  CovarianceAccumulator pair(2);
  pair.update(vec({0.0, 0.0}));
  pair.update(vec({2.0, 0.0}));
  CHECK(pair.mean() == vec({1.0, 0.0}));
  Matrix want = Matrix::Zero(2, 2);
  want(0, 0) = 1.0;
  CHECK((pair.covariance() - want).norm() < 1e-15);
  CHECK(CovarianceAccumulator(3).covariance().isZero(0.0));
}

TEST_CASE("weights act as duplication") {
  Rng rng(2);
  for (auto mode : {CovarianceAccumulator::Mode::Dense, CovarianceAccumulator::Mode::Diagonal}) {
    CovarianceAccumulator w(3, mode);
    CovarianceAccumulator dup(3, mode);
    for (int i = 0; i < 40; ++i) {
      const Vector x = vec({standard_normal(rng), standard_normal(rng), standard_normal(rng)});
      const int m = 1 + i % 3;
      w.update(x, m);
      for (int k = 0; k < m; ++k) dup.update(x);
    }
    CHECK((w.mean() - dup.mean()).norm() < 1e-12);
    CHECK((w.covariance() - dup.covariance()).norm() < 1e-12);
    CHECK(w.total_weight() == dup.total_weight());
  }
  CovarianceAccumulator a(2);
  a.update(vec({1, 1}), 1.0);
  a.update(vec({3, 5}), 1.0);
  CovarianceAccumulator b(2);
  b.update(vec({1, 1}), 0.5);
  b.update(vec({3, 5}), 0.5);
  CHECK((a.covariance() - b.covariance()).norm() < 1e-14);
}

TEST_CASE("accumulator matches a two-pass computation") {
  Rng rng(3);
  CovarianceAccumulator acc(3);
  std::vector<Vector> xs;
  std::vector<double> ws;
  for (int i = 0; i < 200; ++i) {
    xs.push_back(vec({standard_normal(rng), 2.0 * standard_normal(rng) + 5.0, standard_normal(rng)}));
    ws.push_back(0.1 + uniform01(rng));
    acc.update(xs.back(), ws.back());
  }
  double total = 0.0;
  Vector mean = Vector::Zero(3);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    total += ws[i];
    mean += ws[i] * xs[i];
  }
  mean /= total;
  Matrix cov = Matrix::Zero(3, 3);
  for (std::size_t i = 0; i < xs.size(); ++i) cov += ws[i] * (xs[i] - mean) * (xs[i] - mean).transpose();
  cov /= total;
  CHECK((acc.mean() - mean).norm() < 1e-12);
  CHECK((acc.covariance() - cov).norm() < 1e-12);
  CovarianceAccumulator diag(3, CovarianceAccumulator::Mode::Diagonal);
  for (std::size_t i = 0; i < xs.size(); ++i) diag.update(xs[i], ws[i]);
  CHECK((diag.covariance() - Matrix(cov.diagonal().asDiagonal())).norm() < 1e-12);
}

TEST_CASE("accumulator rejects bad input") {
  CovarianceAccumulator acc(2);
  CHECK_THROWS_AS(acc.update(vec({1.0})), DomainError);
  CHECK_THROWS_AS(acc.update(vec({1.0, 2.0}), 0.0), DomainError);
  CHECK_THROWS_AS(acc.update(vec({1.0, std::nan("")})), DomainError);
  CHECK_THROWS_AS(CovarianceAccumulator(0), ConfigError);
}

TEST_CASE("shrinkage hand values") {
  const Matrix id = Matrix::Identity(3, 3);
  CHECK((finalize_shrinkage(Matrix::Zero(3, 3), 0) - 1e-3 * id).norm() == 0.0);
  CHECK((finalize_shrinkage(4.0 * id, 0) - 1e-3 * id).norm() == 0.0);
  CHECK((finalize_shrinkage(id, 5) - 0.5005 * id).norm() < 1e-12);
  Matrix s(2, 2);
  s << 2.0, 0.3, 0.3, 1.0;
  Matrix want = (400.0 / 405.0) * s;
  want.diagonal().array() += (5.0 / 405.0) * 1e-3;
  CHECK((finalize_shrinkage(s, 400) - want).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(finalize_shrinkage(s, -1), ConfigError);
}

TEST_CASE("shrinkage equals the direct formula on random inputs") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 1 + trial % 6;
    const Matrix s = random_psd(d, rng);
    const long n = trial * 7;
    const Matrix got = finalize_shrinkage(s, n);
    const Matrix want = static_cast<double>(n) / (5.0 + n) * s + 5.0 / (5.0 + n) * 1e-3 * Matrix::Identity(d, d);
    REQUIRE((got - want).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, s.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("tuning schedule phase counts and zero-data limit") {
  auto t = make_gaussian(GaussianSpec::correlated_pair(0.5));
  NutsKernel k{0.1, 10, RecycleStrategy::rao_blackwell()};
  for (bool rec : {false, true}) {
    TuningOptions opt;
    opt.n_adap = 0;
    opt.use_recycling = rec;
    auto streams = ChainStreams::from_seed(3);
    auto r = tuning_schedule(*t, k, vec({0, 0}), opt, streams);
    CHECK(r.iterations == 125);
    CHECK((r.covariance - 1e-3 * Matrix::Identity(2, 2)).norm() == 0.0);
    CHECK((r.mass.matrix() - 1e3 * Matrix::Identity(2, 2)).norm() < 1e-9);
    CHECK(r.eps > 0.0);
  }
  TuningOptions opt;
  opt.n_adap = 40;
  auto streams = ChainStreams::from_seed(3);
  auto r = tuning_schedule(*t, k, vec({0, 0}), opt, streams);
  CHECK(r.iterations == 50 + 40 + 75);
  CHECK(r.gradient_evaluations > r.iterations);
}

TEST_CASE("tuning with recycling is deterministic and keeps the chain stream") {
  auto t = make_gaussian(GaussianSpec::diagonal(vec({1.0, 9.0})));
  HmcKernel k{0.1, PathLengthDistribution::fixed(8), HmcRecycling{}};
  TuningOptions opt;
  opt.n_adap = 60;
  opt.use_recycling = true;
  auto s1 = ChainStreams::from_seed(5);
  auto s2 = ChainStreams::from_seed(5);
  auto a = tuning_schedule(*t, k, vec({0, 0}), opt, s1);
  auto b = tuning_schedule(*t, k, vec({0, 0}), opt, s2);
  CHECK(a.eps == b.eps);
  CHECK(a.covariance == b.covariance);
  // HMC recycling does not alter the chain, so only the covariance differs.
  opt.use_recycling = false;
  auto s3 = ChainStreams::from_seed(5);
  auto c = tuning_schedule(*t, k, vec({0, 0}), opt, s3);
  CHECK(c.covariance != a.covariance);
  CHECK(c.gradient_evaluations == a.gradient_evaluations);
}

TEST_CASE("recycled covariance estimates are closer to the truth") {
  Matrix cov(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) cov(i, j) = std::pow(0.7, std::abs(i - j)) * std::sqrt((i + 1.0) * (j + 1.0));
  auto spec = GaussianSpec::dense(cov);
  auto t = make_gaussian(spec);
  NutsKernel k{0.1, 10, RecycleStrategy::rao_blackwell()};
  TuningOptions opt;
  opt.n_adap = 100;
  int wins = 0;
  const int reps = 50;
  for (int r = 0; r < reps; ++r) {
    Rng init(derive_seed(6, static_cast<std::uint64_t>(r)));
    const Vector start = spec.sample(init);
    double err[2];
    for (int arm = 0; arm < 2; ++arm) {
      opt.use_recycling = arm == 0;
      auto streams = ChainStreams::from_seed(derive_seed(7, static_cast<std::uint64_t>(r)));
      auto res = tuning_schedule(*t, k, start, opt, streams);
      err[arm] = (res.covariance - cov).norm();
    }
    if (err[0] <= err[1]) ++wins;
  }
  CHECK(wins >= 30);
}

}
