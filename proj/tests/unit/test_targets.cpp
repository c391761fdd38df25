#include <filesystem>
#include <fstream>

#include <boost/math/constants/constants.hpp>

#include "doctest.h"
#include "test_support.hpp"

using namespace rehmc;
using testing::vec;

namespace {

const std::filesystem::path kData = REHMC_TEST_DATA_DIR;

// Direct transcription of the hierarchical logistic posterior, written from
// scratch with a plain loop over observations.
double logistic_oracle(const LogisticRegressionData& d, const Vector& theta) {
  const Eigen::Index q = d.design.cols();
  const double sigma = std::exp(theta[0]);
  double lp = 0.0;
  for (Eigen::Index i = 0; i < d.design.rows(); ++i) {
    double eta = 0.0;
    for (Eigen::Index j = 0; j < q; ++j) eta += d.design(i, j) * theta[1 + j];
    const double p = 1.0 / (1.0 + std::exp(-eta));
    lp += d.outcomes[i] > 0.5 ? std::log(p) : std::log1p(-p);
  }
  for (Eigen::Index j = 0; j < q; ++j) lp += -std::log(sigma) - 0.5 * theta[1 + j] * theta[1 + j] / (sigma * sigma);
  return lp + theta[0];
}

LogisticRegressionData small_logistic(int raw, int n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, raw);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < raw; ++j) {
      x(i, j) = standard_normal(rng);
      s += 0.5 * x(i, j);
    }
    y[i] = uniform01(rng) < 1.0 / (1.0 + std::exp(-s)) ? 1.0 : 0.0;
  }
  return LogisticRegressionData::from_raw(x, y);
}

void check_gradient_at_random_points(const TargetDensity& t, double scale, std::uint64_t seed, double shift = 0.0) {
  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    Vector x(t.dim());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = shift + scale * standard_normal(rng);
    worst = std::max(worst, testing::relative_error(t.gradient(x), testing::fd_gradient(t, x)));
  }
  CHECK(worst <= 1e-5);
}

}  // namespace

TEST_SUITE("targets") {

TEST_CASE("iid gaussian at the mode") {
  auto t = make_gaussian(GaussianSpec::iid(1));
  CHECK(t->log_density(vec({0.0})) == 0.0);
  CHECK(t->gradient(vec({0.0}))[0] == 0.0);
}

TEST_CASE("diagonal gaussian hand values") {
  auto t = make_gaussian(GaussianSpec::diagonal(vec({1.0, 4.0})));
  Vector g;
  const double lp = t->evaluate(vec({2.0, 2.0}), g);
  CHECK(lp == doctest::Approx(-2.5).epsilon(1e-15));
  CHECK(g[0] == doctest::Approx(-2.0));
  CHECK(g[1] == doctest::Approx(-0.5));
}

TEST_CASE("correlated pair gradient matches the explicit inverse") {
  auto spec = GaussianSpec::correlated_pair(0.9);
  auto t = make_gaussian(spec);
  const double det = 1.0 - 0.81;
  Matrix inv(2, 2);
  inv << 1.0 / det, -0.9 / det, -0.9 / det, 1.0 / det;
  const Vector want = -inv * vec({1.0, 1.0});
  const Vector got = t->gradient(vec({1.0, 1.0}));
  CHECK((got - want).norm() < 1e-12);
  CHECK(spec.variance(0) == 1.0);
  CHECK(spec.eigenvalues()[0] == doctest::Approx(1.9));
  CHECK(spec.eigenvalues()[1] == doctest::Approx(0.1));
}

TEST_CASE("gaussian truth accessors") {
  auto spec = GaussianSpec::diagonal(vec({1.0, 4.0, 9.0}));
  CHECK(spec.quantile(0, 0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(spec.quantile(2, 0.975) == doctest::Approx(3 * 1.959963984540054).epsilon(1e-12));
  CHECK(spec.quantile(1, 0.5) == doctest::Approx(0.0));
  CHECK(spec.covariance()(1, 1) == 4.0);
  CHECK(spec.eigenvalues()[0] == doctest::Approx(9.0));
}

TEST_CASE("dense gaussian rejects an indefinite covariance") {
  Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(GaussianSpec::dense(bad), ConfigError);
  CHECK_THROWS_AS(GaussianSpec::diagonal(vec({1.0, -1.0})), ConfigError);
}

TEST_CASE("exact gaussian draws have the stated covariance") {
  auto spec = GaussianSpec::correlated_pair(0.9);
  Rng rng(5);
  double sxy = 0.0;
  double sxx = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Vector x = spec.sample(rng);
    sxy += x[0] * x[1];
    sxx += x[0] * x[0];
  }
  CHECK(sxx / n == doctest::Approx(1.0).epsilon(0.03));
  CHECK(sxy / n == doctest::Approx(0.9).epsilon(0.03));
}

TEST_CASE("non-finite input raises a domain error") {
  auto t = make_gaussian(GaussianSpec::iid(2));
  CHECK_THROWS_AS(t->log_density(vec({0.0, std::nan("")})), DomainError);
  CHECK_THROWS_AS(t->log_density(vec({0.0, 0.0, 0.0})), Error);
}

TEST_CASE("logistic parameter counts") {
  CHECK(1 + LogisticRegressionData::coefficient_count(3) == 8);
  CHECK(LogisticRegressionData::coefficient_count(24) == 301);
  auto d = small_logistic(3, 40, 1);
  CHECK(make_logistic_model(d)->dim() == 8);
  auto big = small_logistic(24, 60, 2);
  CHECK(make_logistic_model(big)->dim() == 302);
}

TEST_CASE("logistic likelihood at zero coefficients") {
  auto d = small_logistic(3, 40, 3);
  auto t = make_logistic_model(d);
  Vector theta = Vector::Zero(8);
  // Prior terms vanish at beta = 0, log sigma = 0.
  CHECK(t->log_density(theta) == doctest::Approx(-40.0 * std::log(2.0)).epsilon(1e-13));
}

TEST_CASE("logistic density matches an independent transcription") {
  auto d = small_logistic(3, 50, 4);
  auto t = make_logistic_model(d);
  Rng rng(9);
  for (int k = 0; k < 20; ++k) {
    Vector theta(8);
    for (Eigen::Index i = 0; i < 8; ++i) theta[i] = 0.5 * standard_normal(rng);
    const double a = t->log_density(theta);
    const double b = logistic_oracle(d, theta);
    CHECK(a == doctest::Approx(b).epsilon(1e-10));
  }
}

TEST_CASE("logistic design is standardized with interactions and an intercept") {
  auto d = small_logistic(3, 200, 5);
  REQUIRE(d.design.cols() == 7);
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(d.design.col(j).mean()) < 1e-12);
    CHECK((d.design.col(j).array().square().mean()) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK((d.design.col(3) - d.design.col(0).cwiseProduct(d.design.col(1))).norm() < 1e-12);
  CHECK((d.design.col(5) - d.design.col(1).cwiseProduct(d.design.col(2))).norm() < 1e-12);
  CHECK((d.design.col(6).array() == 1.0).all());
  CHECK(d.names[3] == "x1:x2");
}

TEST_CASE("logistic csv loading and data errors") {
  auto d = LogisticRegressionData::from_csv(kData / "logistic_small.csv");
  CHECK(d.raw_predictors == 3);
  CHECK(d.names[0] == "age");
  CHECK(load_logistic_model(kData / "logistic_small.csv")->dim() == 8);
  CHECK_THROWS_AS(LogisticRegressionData::from_csv(kData / "does_not_exist.csv"), DataError);
  CHECK_THROWS_AS(LogisticRegressionData::from_csv(kData / "logistic_bad_outcome.csv"), DataError);
  CHECK_THROWS_AS(read_numeric_csv(kData / "ragged.csv"), DataError);
}

TEST_CASE("sv constant prices reduce the observation terms to minus sum log s") {
  Vector closing = Vector::Constant(6, 100.0);
  auto series = ReturnsSeries::from_closing(closing);
  CHECK(series.returns.isZero(0.0));
  SvPriors priors;
  auto t = make_sv_model(series, priors);
  REQUIRE(t->dim() == 6);
  // Flat log-volatility path: increments vanish, so everything left is
  // -sum_{i>=1} x_i, the tau term at zero increments and the s0 prior.
  Vector x = Vector::Constant(6, 0.3);
  const double shape = priors.tau_shape + 2.5;
  const double want = -5 * 0.3 - shape * std::log(priors.tau_rate) + 0.3 - std::exp(0.3) / priors.s0_mean;
  CHECK(t->log_density(x) == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("sv dimension follows the series length") {
  Vector closing(3001);
  Rng rng(2);
  closing[0] = 100.0;
  for (Eigen::Index i = 1; i < closing.size(); ++i) closing[i] = closing[i - 1] * std::exp(0.01 * standard_normal(rng));
  CHECK(make_sv_model(ReturnsSeries::from_closing(closing))->dim() == 3001);
  CHECK_THROWS_AS(ReturnsSeries::from_closing(vec({1.0})), DataError);
  CHECK_THROWS_AS(ReturnsSeries::from_closing(vec({1.0, -2.0})), DataError);
  auto csv = ReturnsSeries::from_csv(kData / "prices_small.csv");
  CHECK(csv.returns.size() == csv.closing.size() - 1);
}

TEST_CASE("log-gamma moments") {
  CHECK(log_gamma_mean(1.0) == doctest::Approx(-0.5772156649015329).epsilon(1e-12));
  CHECK(log_gamma_variance(1.0) == doctest::Approx(boost::math::constants::pi_sqr<double>() / 6).epsilon(1e-12));
  auto t = make_log_gamma(2.0);
  CHECK(t->log_density(vec({0.0})) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(make_log_gamma(0.0), ConfigError);
}

TEST_CASE("function target forwards the callable") {
  FunctionTarget t(1, [](const Vector& x, Vector& g) {
    g = -2.0 * x;
    return -x.squaredNorm();
  });
  CHECK(t.log_density(vec({3.0})) == -9.0);
  CHECK(t.gradient(vec({3.0}))[0] == -6.0);
}

TEST_CASE("gradients agree with finite differences at 100 random points") {
  SUBCASE("gaussian iid") { check_gradient_at_random_points(*make_gaussian(GaussianSpec::iid(4)), 1.0, 1); }
  SUBCASE("gaussian diagonal") {
    check_gradient_at_random_points(*make_gaussian(GaussianSpec::diagonal(vec({1, 4, 9, 0.25}))), 2.0, 2);
  }
  SUBCASE("gaussian dense") {
    Matrix c(3, 3);
    c << 2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 1.5;
    check_gradient_at_random_points(*make_gaussian(GaussianSpec::dense(c)), 1.0, 3);
  }
  SUBCASE("logistic flat prior") {
    check_gradient_at_random_points(*make_logistic_model(small_logistic(3, 60, 6)), 0.5, 4);
  }
  SUBCASE("logistic exponential prior") {
    SigmaPrior p{SigmaPrior::Kind::Exponential, 2.0};
    check_gradient_at_random_points(*make_logistic_model(small_logistic(4, 60, 7), p), 0.5, 5);
  }
  SUBCASE("stochastic volatility") {
    auto series = ReturnsSeries::from_csv(kData / "prices_small.csv");
    check_gradient_at_random_points(*make_sv_model(series), 0.02, 6, -4.0);
  }
  SUBCASE("log-gamma") { check_gradient_at_random_points(*make_log_gamma(1.5), 1.0, 7); }
}

}
