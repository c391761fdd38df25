#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Cholesky>

#include "rehmc/error.hpp"
#include "rehmc/random.hpp"

namespace rehmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Differentiable unnormalized log-density on R^dim.
///
/// Implementations are immutable after construction and may be evaluated
/// concurrently from several chains. All built-in targets drop
/// parameter-independent constants. Non-finite inputs raise DomainError.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;

  virtual Eigen::Index dim() const = 0;

  /// Fused evaluation: returns log pi(theta) and writes the gradient.
  virtual double evaluate(const Vector& theta, Vector& grad) const = 0;

  virtual double log_density(const Vector& theta) const;
  Vector gradient(const Vector& theta) const;

  virtual std::string name() const = 0;

 protected:
  void check_input(const Vector& theta) const;
};

using TargetPtr = std::shared_ptr<const TargetDensity>;

/// Target built from user callables; used for custom models and tests.
class FunctionTarget final : public TargetDensity {
 public:
  using Fused = std::function<double(const Vector&, Vector&)>;

  FunctionTarget(Eigen::Index dim, Fused fn, std::string name = "function");

  Eigen::Index dim() const override { return dim_; }
  double evaluate(const Vector& theta, Vector& grad) const override;
  std::string name() const override { return name_; }

 private:
  Eigen::Index dim_;
  Fused fn_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Gaussian family

/// Zero-mean Gaussian with known truth accessors.
class GaussianSpec {
 public:
  enum class Variant { IidStandard, Diagonal, Dense };

  static GaussianSpec iid(Eigen::Index dim);
  static GaussianSpec diagonal(Vector variances);
  /// Throws ConfigError if the covariance is not symmetric positive-definite.
  static GaussianSpec dense(Matrix covariance);
  /// Bivariate unit-variance Gaussian with the given correlation.
  static GaussianSpec correlated_pair(double rho);

  Variant variant() const { return variant_; }
  Eigen::Index dim() const { return dim_; }

  Vector mean() const { return Vector::Zero(dim_); }
  double variance(Eigen::Index i) const;
  Vector variances() const;
  Matrix covariance() const;
  double quantile(Eigen::Index i, double q) const;
  /// Eigenvalues sorted in decreasing order, with matching eigenvector columns.
  const Vector& eigenvalues() const { return eigenvalues_; }
  const Matrix& eigenvectors() const { return eigenvectors_; }

  /// Exact draw from the distribution.
  Vector sample(Rng& rng) const;

  /// Precision-times-vector, i.e. Sigma^{-1} theta.
  Vector apply_precision(const Vector& theta) const;

 private:
  GaussianSpec() = default;
  void compute_eigensystem();

  Variant variant_ = Variant::IidStandard;
  Eigen::Index dim_ = 0;
  Vector variances_;
  Matrix covariance_;
  Matrix chol_lower_;
  Matrix precision_;
  Vector eigenvalues_;
  Matrix eigenvectors_;
};

/// log pi(theta) = -1/2 theta^T Sigma^{-1} theta.
TargetPtr make_gaussian(const GaussianSpec& spec);

// ---------------------------------------------------------------------------
// Hierarchical logistic regression

struct LogisticRegressionData {
  enum class ColumnKind { Raw, Interaction, Intercept };

  Matrix design;  // n x q
  Vector outcomes;  // n, entries in {0, 1}
  std::vector<ColumnKind> kinds;
  std::vector<std::string> names;
  Eigen::Index raw_predictors = 0;

  /// Standardizes raw columns (population variance), appends all pairwise
  /// interactions and an intercept column.
  static LogisticRegressionData from_raw(const Matrix& raw, const Vector& outcomes,
                                         std::vector<std::string> raw_names = {});
  /// Header row required; the last column is the 0/1 outcome.
  static LogisticRegressionData from_csv(const std::filesystem::path& path);

  static Eigen::Index coefficient_count(Eigen::Index raw) { return raw + raw * (raw - 1) / 2 + 1; }
};

struct SigmaPrior {
  enum class Kind { FlatOnSigma, Exponential };
  Kind kind = Kind::FlatOnSigma;
  double rate = 1.0;  // Exponential only
};

/// Posterior over (log sigma, beta); dimension 1 + q.
TargetPtr make_logistic_model(LogisticRegressionData data, SigmaPrior prior = {});
TargetPtr load_logistic_model(const std::filesystem::path& csv_path, SigmaPrior prior = {});

// ---------------------------------------------------------------------------
// Stochastic volatility

struct ReturnsSeries {
  Vector closing;  // length n + 1, strictly positive
  Vector returns;  // log(y_i / y_{i-1}), length n

  static ReturnsSeries from_closing(Vector closing);
  /// Header row required; one closing value per row.
  static ReturnsSeries from_csv(const std::filesystem::path& path);
};

struct SvPriors {
  double s0_mean = 0.1;     // s0 ~ Exponential(mean)
  double tau_shape = 0.5;   // tau ~ Gamma(shape, rate)
  double tau_rate = 0.5;
  double increment_scale = 100.0;
};

/// Posterior over (log s_0, ..., log s_n) with tau integrated out.
TargetPtr make_sv_model(const ReturnsSeries& series, SvPriors priors = {});

// ---------------------------------------------------------------------------
// Skewed one-dimensional target

/// theta = log x with x ~ Gamma(shape, 1): log pi(theta) = shape*theta - exp(theta).
TargetPtr make_log_gamma(double shape);
double log_gamma_mean(double shape);
double log_gamma_variance(double shape);

// ---------------------------------------------------------------------------

/// Numeric matrix from a CSV file with a header row.
Matrix read_numeric_csv(const std::filesystem::path& path, std::vector<std::string>* header = nullptr);

}  // namespace rehmc
