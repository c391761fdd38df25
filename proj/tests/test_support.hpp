#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "rehmc/bench.hpp"

namespace testing {

using rehmc::Matrix;
using rehmc::Vector;

inline rehmc::TargetPtr standard_normal_1d() { return rehmc::make_gaussian(rehmc::GaussianSpec::iid(1)); }

inline Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

/// Centered finite-difference gradient.
inline Vector fd_gradient(const rehmc::TargetDensity& t, const Vector& x, double h = 1e-6) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector a = x;
    Vector b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (t.log_density(a) - t.log_density(b)) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Vector& got, const Vector& want) {
  return (got - want).norm() / std::max(want.norm(), 1.0);
}

/// Upper-tail p-value of Pearson's statistic for observed counts vs expected
/// probabilities.
inline double chi_square_pvalue(const std::vector<long>& counts, const std::vector<double>& probs) {
  const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), 0L));
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = n * probs[i];
    stat += (static_cast<double>(counts[i]) - e) * (static_cast<double>(counts[i]) - e) / e;
  }
  boost::math::chi_squared_distribution<double> dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

/// Two-sided exact binomial p-value (doubling the smaller tail).
inline double binomial_pvalue(long successes, long trials, double p) {
  boost::math::binomial_distribution<double> dist(static_cast<double>(trials), p);
  const double lower = boost::math::cdf(dist, static_cast<double>(successes));
  const double upper = successes == 0 ? 1.0 : boost::math::cdf(boost::math::complement(dist, static_cast<double>(successes - 1)));
  return std::min(1.0, 2.0 * std::min(lower, upper));
}

/// Kolmogorov-Smirnov statistic against Uniform(0, 1).
inline double ks_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - u[i]));
    d = std::max(d, std::abs(u[i] - static_cast<double>(i) / n));
  }
  return d;
}

/// Asymptotic KS critical value at level 0.001.
inline double ks_critical_001(std::size_t n) { return 1.949 / std::sqrt(static_cast<double>(n)); }

inline double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double variance_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return acc / static_cast<double>(x.size() - 1);
}

/// Standard error of the mean of a correlated series by non-overlapping batches.
inline double batch_means_se(const std::vector<double>& x, std::size_t batches = 100) {
  const std::size_t size = x.size() / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) {
    means.push_back(std::accumulate(x.begin() + static_cast<long>(b * size), x.begin() + static_cast<long>((b + 1) * size), 0.0) /
                    static_cast<double>(size));
  }
  return std::sqrt(variance_of(means) / static_cast<double>(batches));
}

/// Wraps a target and counts evaluations.
class CountingTarget final : public rehmc::TargetDensity {
 public:
  explicit CountingTarget(rehmc::TargetPtr inner) : inner_(std::move(inner)) {}
  Eigen::Index dim() const override { return inner_->dim(); }
  double evaluate(const Vector& theta, Vector& grad) const override {
    ++count_;
    return inner_->evaluate(theta, grad);
  }
  std::string name() const override { return "counting"; }
  long count() const { return count_.load(); }
  void reset() { count_ = 0; }

 private:
  rehmc::TargetPtr inner_;
  mutable std::atomic<long> count_{0};
};

}  // namespace testing
