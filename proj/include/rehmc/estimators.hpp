#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rehmc/chain.hpp"
#include "rehmc/targets.hpp"

namespace rehmc {

/// Scalar samples with positive, unnormalized weights.
class WeightedSampleSet {
 public:
  WeightedSampleSet() = default;
  WeightedSampleSet(std::vector<double> values, std::vector<double> weights);
  static WeightedSampleSet unweighted(std::vector<double> values);

  void add(double value, double weight = 1.0);
  void reserve(std::size_t n);

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<double> values_;
  std::vector<double> weights_;
};

double weighted_mean(const WeightedSampleSet& s);
/// Population form: sum w (v - mean)^2 / sum w.
double weighted_variance(const WeightedSampleSet& s);
/// Smallest value whose normalized cumulative weight reaches q.
double weighted_quantile(const WeightedSampleSet& s, double q);

double mse(const std::vector<double>& estimates, double truth);
/// n * mse_iid / mse_chain.
double ess_from_mse(double mse_chain, double mse_iid, double n);

struct Statistic {
  enum class Kind { Mean, Variance, Quantile };
  Kind kind = Kind::Mean;
  double q = 0.5;

  static Statistic mean() { return {Kind::Mean, 0.5}; }
  static Statistic variance() { return {Kind::Variance, 0.5}; }
  static Statistic quantile(double q);

  double apply(const WeightedSampleSet& s) const;
  /// Truth for coordinate i of a Gaussian.
  double truth(const GaussianSpec& g, Eigen::Index i) const;
  /// Stable label, e.g. "mean", "variance", "quantile_0.975".
  std::string label() const;
  /// Parses the labels produced by label(); throws ConfigError otherwise.
  static Statistic parse(const std::string& text);
};

/// MSE of an iid estimator with n draws, using closed forms. The quantile
/// value is the large-n approximation.
double analytic_iid_mse(const Statistic& stat, double variance, long n);

using ExactSampler = std::function<double(Rng&)>;

/// Monte Carlo MSE of the statistic over `replications` iid samples of size n.
double iid_mse_oracle(const Statistic& stat, const ExactSampler& sampler, double truth, long n, long replications,
                      Rng& rng);
double iid_mse_oracle(const Statistic& stat, const GaussianSpec& g, Eigen::Index coordinate, long n,
                      long replications, Rng& rng);

/// The chain's contribution to a weighted empirical measure for one
/// coordinate: chain states with `state_weight` plus recycled atoms.
WeightedSampleSet collect_coordinate(const std::vector<IterationBatch>& batches, Eigen::Index coordinate,
                                     bool recycled);

struct PcaMetrics {
  double top_eigenvalue = 0.0;
  Vector top_eigenvector;
  int span_dim = 0;
  double angle = 0.0;
};

struct PowerIterationResult {
  double eigenvalue;
  Vector eigenvector;
  int iterations;
};

/// Dominant eigenpair of a symmetric matrix, to residual tol.
PowerIterationResult power_iteration(const Matrix& a, double tol = 1e-10, int max_iterations = 10000);

/// One-based index of the first component with variance below half the largest
/// (the dimension when there is none).
int leading_span_dim(const Vector& descending_eigenvalues);
/// Angle between a vector and the span of the orthonormal columns of `basis`.
double angle_to_span(const Vector& v, const Matrix& basis);

PcaMetrics pca_metrics(const Matrix& empirical, const GaussianSpec& truth);

/// tau^{-1/2} times the mean squared jump; the argmax over the grid wins,
/// ties going to the smaller tau.
std::size_t select_tau(const std::vector<double>& taus, const std::vector<double>& scores);

struct EsjdResult {
  double tau;
  std::vector<double> scores;
};

/// Runs `probe_iterations` HMC transitions with path length round(tau/eps) for
/// each tau and returns the highest-scoring tau.
EsjdResult esjd_tune(const TargetDensity& target, const MassMatrix& mass, const Vector& theta0, double eps,
                     const std::vector<double>& taus, long probe_iterations, Rng& rng);

}  // namespace rehmc
