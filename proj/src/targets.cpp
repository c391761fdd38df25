#include "rehmc/targets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace rehmc {

double TargetDensity::log_density(const Vector& theta) const {
  Vector grad(dim());
  return evaluate(theta, grad);
}

Vector TargetDensity::gradient(const Vector& theta) const {
  Vector grad(dim());
  evaluate(theta, grad);
  return grad;
}

void TargetDensity::check_input(const Vector& theta) const {
  if (theta.size() != dim()) {
    throw DomainError(name() + ": expected dimension " + std::to_string(dim()) + ", got " +
                      std::to_string(theta.size()));
  }
  if (!theta.allFinite()) {
    throw DomainError(name() + ": non-finite parameter value");
  }
}

FunctionTarget::FunctionTarget(Eigen::Index dim, Fused fn, std::string name)
    : dim_(dim), fn_(std::move(fn)), name_(std::move(name)) {
  if (dim_ < 1) throw ConfigError("FunctionTarget: dimension must be positive");
}

double FunctionTarget::evaluate(const Vector& theta, Vector& grad) const {
  check_input(theta);
  grad.resize(dim_);
  return fn_(theta, grad);
}

// ---------------------------------------------------------------------------
// Gaussian

GaussianSpec GaussianSpec::iid(Eigen::Index dim) {
  if (dim < 1) throw ConfigError("GaussianSpec: dimension must be positive");
  GaussianSpec s;
  s.variant_ = Variant::IidStandard;
  s.dim_ = dim;
  s.variances_ = Vector::Ones(dim);
  s.compute_eigensystem();
  return s;
}

GaussianSpec GaussianSpec::diagonal(Vector variances) {
  if (variances.size() < 1) throw ConfigError("GaussianSpec: dimension must be positive");
  for (Eigen::Index i = 0; i < variances.size(); ++i) {
    if (!(variances[i] > 0.0) || !std::isfinite(variances[i])) {
      throw ConfigError("GaussianSpec: diagonal variance " + std::to_string(i) +
                        " must be finite and positive");
    }
  }
  GaussianSpec s;
  s.variant_ = Variant::Diagonal;
  s.dim_ = variances.size();
  s.variances_ = std::move(variances);
  s.compute_eigensystem();
  return s;
}

GaussianSpec GaussianSpec::dense(Matrix covariance) {
  if (covariance.rows() < 1 || covariance.rows() != covariance.cols()) {
    throw ConfigError("GaussianSpec: covariance must be a non-empty square matrix");
  }
  if (!covariance.isApprox(covariance.transpose(), 1e-12)) {
    throw ConfigError("GaussianSpec: covariance is not symmetric");
  }
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw ConfigError("GaussianSpec: Cholesky (LLT) factorization of the covariance failed; "
                      "matrix is not positive-definite");
  }
  GaussianSpec s;
  s.variant_ = Variant::Dense;
  s.dim_ = covariance.rows();
  s.variances_ = covariance.diagonal();
  s.chol_lower_ = llt.matrixL();
  s.precision_ = llt.solve(Matrix::Identity(s.dim_, s.dim_));
  s.precision_ = 0.5 * (s.precision_ + s.precision_.transpose());
  s.covariance_ = std::move(covariance);
  s.compute_eigensystem();
  return s;
}

GaussianSpec GaussianSpec::correlated_pair(double rho) {
  Matrix cov(2, 2);
  cov << 1.0, rho, rho, 1.0;
  return dense(cov);
}

void GaussianSpec::compute_eigensystem() {
  if (variant_ == Variant::Dense) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(covariance_);
    // Eigen returns ascending order.
    eigenvalues_ = es.eigenvalues().reverse();
    eigenvectors_ = es.eigenvectors().rowwise().reverse();
    return;
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(dim_));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return variances_[a] > variances_[b]; });
  eigenvalues_.resize(dim_);
  eigenvectors_ = Matrix::Zero(dim_, dim_);
  for (Eigen::Index j = 0; j < dim_; ++j) {
    eigenvalues_[j] = variances_[order[static_cast<std::size_t>(j)]];
    eigenvectors_(order[static_cast<std::size_t>(j)], j) = 1.0;
  }
}

double GaussianSpec::variance(Eigen::Index i) const { return variances_[i]; }

Vector GaussianSpec::variances() const { return variances_; }

Matrix GaussianSpec::covariance() const {
  if (variant_ == Variant::Dense) return covariance_;
  return variances_.asDiagonal();
}

double GaussianSpec::quantile(Eigen::Index i, double q) const {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("GaussianSpec::quantile: q must lie in (0, 1)");
  boost::math::normal_distribution<double> std_normal;
  return std::sqrt(variances_[i]) * boost::math::quantile(std_normal, q);
}

Vector GaussianSpec::sample(Rng& rng) const {
  Vector z(dim_);
  for (Eigen::Index i = 0; i < dim_; ++i) z[i] = standard_normal(rng);
  switch (variant_) {
    case Variant::IidStandard:
      return z;
    case Variant::Diagonal:
      return variances_.cwiseSqrt().cwiseProduct(z);
    case Variant::Dense:
      return chol_lower_ * z;
  }
  return z;
}

Vector GaussianSpec::apply_precision(const Vector& theta) const {
  switch (variant_) {
    case Variant::IidStandard:
      return theta;
    case Variant::Diagonal:
      return theta.cwiseQuotient(variances_);
    case Variant::Dense:
      return precision_ * theta;
  }
  return theta;
}

namespace {

class GaussianTarget final : public TargetDensity {
 public:
  explicit GaussianTarget(GaussianSpec spec) : spec_(std::move(spec)) {}

  Eigen::Index dim() const override { return spec_.dim(); }

  double evaluate(const Vector& theta, Vector& grad) const override {
    check_input(theta);
    grad = -spec_.apply_precision(theta);
    return 0.5 * theta.dot(grad);
  }

  std::string name() const override { return "gaussian"; }

 private:
  GaussianSpec spec_;
};

}  // namespace

TargetPtr make_gaussian(const GaussianSpec& spec) { return std::make_shared<GaussianTarget>(spec); }

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Matrix read_numeric_csv(const std::filesystem::path& path, std::vector<std::string>* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CSV file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  const auto names = split_fields(line);
  const std::size_t cols = names.size();
  if (cols == 0 || (cols == 1 && names[0].empty())) throw DataError(path.string() + ": empty header row");

  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != cols) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(cols) + " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string& f = fields[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || f.empty() || !std::isfinite(v)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": column '" + names[c] +
                        "' is not a finite number: '" + f + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[r * cols + c];
  if (header) *header = names;
  return m;
}

// ---------------------------------------------------------------------------
// Logistic regression

LogisticRegressionData LogisticRegressionData::from_raw(const Matrix& raw, const Vector& outcomes,
                                                        std::vector<std::string> raw_names) {
  const Eigen::Index n = raw.rows();
  const Eigen::Index r = raw.cols();
  if (n < 1) throw DataError("logistic data: at least one observation is required");
  if (outcomes.size() != n) throw DataError("logistic data: outcome length does not match design rows");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (outcomes[i] != 0.0 && outcomes[i] != 1.0) {
      throw DataError("logistic data: outcome in row " + std::to_string(i + 1) + " is not 0 or 1");
    }
  }
  if (raw_names.empty()) {
    for (Eigen::Index j = 0; j < r; ++j) raw_names.push_back("x" + std::to_string(j + 1));
  }

  Matrix standardized(n, r);
  for (Eigen::Index j = 0; j < r; ++j) {
    const double mean = raw.col(j).mean();
    const double var = (raw.col(j).array() - mean).square().mean();
    if (!(var > 0.0)) {
      throw DataError("logistic data: raw column '" + raw_names[static_cast<std::size_t>(j)] +
                      "' is constant and cannot be standardized");
    }
    standardized.col(j) = (raw.col(j).array() - mean) / std::sqrt(var);
  }

  LogisticRegressionData data;
  data.raw_predictors = r;
  const Eigen::Index q = coefficient_count(r);
  data.design.resize(n, q);
  Eigen::Index c = 0;
  for (Eigen::Index j = 0; j < r; ++j, ++c) {
    data.design.col(c) = standardized.col(j);
    data.kinds.push_back(ColumnKind::Raw);
    data.names.push_back(raw_names[static_cast<std::size_t>(j)]);
  }
  for (Eigen::Index j = 0; j < r; ++j) {
    for (Eigen::Index k = j + 1; k < r; ++k, ++c) {
      data.design.col(c) = standardized.col(j).cwiseProduct(standardized.col(k));
      data.kinds.push_back(ColumnKind::Interaction);
      data.names.push_back(raw_names[static_cast<std::size_t>(j)] + ":" +
                           raw_names[static_cast<std::size_t>(k)]);
    }
  }
  data.design.col(c).setOnes();
  data.kinds.push_back(ColumnKind::Intercept);
  data.names.emplace_back("(intercept)");
  data.outcomes = outcomes;
  return data;
}

LogisticRegressionData LogisticRegressionData::from_csv(const std::filesystem::path& path) {
  std::vector<std::string> header;
  const Matrix m = read_numeric_csv(path, &header);
  if (m.cols() < 2) throw DataError(path.string() + ": expected predictor columns and one outcome column");
  if (m.rows() < 1) throw DataError(path.string() + ": no observations");
  header.pop_back();
  return from_raw(m.leftCols(m.cols() - 1), m.col(m.cols() - 1), std::move(header));
}

namespace {

// log(1 + exp(x)) without overflow.
double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class LogisticTarget final : public TargetDensity {
 public:
  LogisticTarget(LogisticRegressionData data, SigmaPrior prior)
      : data_(std::move(data)), prior_(prior) {}

  Eigen::Index dim() const override { return 1 + data_.design.cols(); }

  double evaluate(const Vector& theta, Vector& grad) const override {
    check_input(theta);
    const Eigen::Index q = data_.design.cols();
    const double log_sigma = theta[0];
    const auto beta = theta.tail(q);
    const Vector eta = data_.design * beta;

    double loglik = 0.0;
    Vector resid(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      loglik += data_.outcomes[i] * eta[i] - log1p_exp(eta[i]);
      resid[i] = data_.outcomes[i] - sigmoid(eta[i]);
    }

    const double inv_var = std::exp(-2.0 * log_sigma);
    const double beta_sq = beta.squaredNorm();
    // beta ~ N(0, sigma^2 I): -q log sigma - |beta|^2 / (2 sigma^2).
    // Flat prior on sigma in the log parameterization adds the Jacobian + log sigma.
    double lp = loglik - 0.5 * beta_sq * inv_var - static_cast<double>(q) * log_sigma + log_sigma;
    double dlog_sigma = beta_sq * inv_var - static_cast<double>(q) + 1.0;
    if (prior_.kind == SigmaPrior::Kind::Exponential) {
      const double sigma = std::exp(log_sigma);
      lp -= prior_.rate * sigma;
      dlog_sigma -= prior_.rate * sigma;
    }

    grad.resize(dim());
    grad[0] = dlog_sigma;
    grad.tail(q) = data_.design.transpose() * resid - beta * inv_var;
    if (!std::isfinite(lp) || !grad.allFinite()) throw DomainError("logistic: non-finite log density");
    return lp;
  }

  std::string name() const override { return "logistic"; }

 private:
  LogisticRegressionData data_;
  SigmaPrior prior_;
};

}  // namespace

TargetPtr make_logistic_model(LogisticRegressionData data, SigmaPrior prior) {
  if (prior.kind == SigmaPrior::Kind::Exponential && !(prior.rate > 0.0)) {
    throw ConfigError("logistic: exponential sigma prior needs a positive rate");
  }
  return std::make_shared<LogisticTarget>(std::move(data), prior);
}

TargetPtr load_logistic_model(const std::filesystem::path& csv_path, SigmaPrior prior) {
  return make_logistic_model(LogisticRegressionData::from_csv(csv_path), prior);
}

// ---------------------------------------------------------------------------
// Stochastic volatility

ReturnsSeries ReturnsSeries::from_closing(Vector closing) {
  if (closing.size() < 2) throw DataError("returns series: need at least two closing values (n >= 1)");
  for (Eigen::Index i = 0; i < closing.size(); ++i) {
    if (!(closing[i] > 0.0) || !std::isfinite(closing[i])) {
      throw DataError("returns series: closing value " + std::to_string(i + 1) + " is not positive");
    }
  }
  ReturnsSeries s;
  s.returns.resize(closing.size() - 1);
  for (Eigen::Index i = 1; i < closing.size(); ++i) s.returns[i - 1] = std::log(closing[i] / closing[i - 1]);
  if (!s.returns.allFinite()) throw DataError("returns series: non-finite log return");
  s.closing = std::move(closing);
  return s;
}

ReturnsSeries ReturnsSeries::from_csv(const std::filesystem::path& path) {
  const Matrix m = read_numeric_csv(path);
  if (m.cols() != 1) throw DataError(path.string() + ": expected a single column of closing values");
  return from_closing(m.col(0));
}

namespace {

// Parameters x_i = log s_i, i = 0..n.
//   returns r_i ~ N(0, s_i^2)                      i = 1..n
//   e_i = c (x_i - x_{i-1}) ~ N(0, 1/tau)          i = 1..n
//   tau ~ Gamma(a, b) integrated out:  -(a + n/2) log(b + sum e_i^2 / 2)
//   s_0 ~ Exp(mean m) with Jacobian:    x_0 - exp(x_0) / m
class SvTarget final : public TargetDensity {
 public:
  SvTarget(Vector returns, SvPriors priors) : returns_sq_(returns.array().square()), priors_(priors) {}

  Eigen::Index dim() const override { return returns_sq_.size() + 1; }

  double evaluate(const Vector& x, Vector& grad) const override {
    check_input(x);
    const Eigen::Index n = returns_sq_.size();
    const double c = priors_.increment_scale;
    grad.setZero(n + 1);

    double lp = 0.0;
    for (Eigen::Index i = 1; i <= n; ++i) {
      const double scaled = returns_sq_[i - 1] * std::exp(-2.0 * x[i]);
      lp += -x[i] - 0.5 * scaled;
      grad[i] += -1.0 + scaled;
    }

    double sum_sq = 0.0;
    for (Eigen::Index i = 1; i <= n; ++i) {
      const double e = c * (x[i] - x[i - 1]);
      sum_sq += e * e;
    }
    const double shape = priors_.tau_shape + 0.5 * static_cast<double>(n);
    const double denom = priors_.tau_rate + 0.5 * sum_sq;
    lp -= shape * std::log(denom);
    const double coef = shape / denom;
    for (Eigen::Index i = 1; i <= n; ++i) {
      const double e = c * (x[i] - x[i - 1]);
      grad[i] -= coef * c * e;
      grad[i - 1] += coef * c * e;
    }

    const double s0 = std::exp(x[0]);
    lp += x[0] - s0 / priors_.s0_mean;
    grad[0] += 1.0 - s0 / priors_.s0_mean;

    if (!std::isfinite(lp) || !grad.allFinite()) throw DomainError("sv: non-finite log density");
    return lp;
  }

  std::string name() const override { return "stochastic_volatility"; }

 private:
  Vector returns_sq_;
  SvPriors priors_;
};

class LogGammaTarget final : public TargetDensity {
 public:
  explicit LogGammaTarget(double shape) : shape_(shape) {}
  Eigen::Index dim() const override { return 1; }
  double evaluate(const Vector& theta, Vector& grad) const override {
    check_input(theta);
    const double e = std::exp(theta[0]);
    grad.resize(1);
    grad[0] = shape_ - e;
    const double lp = shape_ * theta[0] - e;
    if (!std::isfinite(lp)) throw DomainError("log_gamma: non-finite log density");
    return lp;
  }
  std::string name() const override { return "log_gamma"; }

 private:
  double shape_;
};

}  // namespace

TargetPtr make_sv_model(const ReturnsSeries& series, SvPriors priors) {
  if (series.returns.size() < 1) throw DataError("sv: series has no returns (n = 0)");
  if (!(priors.s0_mean > 0.0) || !(priors.tau_shape > 0.0) || !(priors.tau_rate > 0.0) ||
      !(priors.increment_scale > 0.0)) {
    throw ConfigError("sv: prior hyperparameters must be positive");
  }
  return std::make_shared<SvTarget>(series.returns, priors);
}

TargetPtr make_log_gamma(double shape) {
  if (!(shape > 0.0)) throw ConfigError("log_gamma: shape must be positive");
  return std::make_shared<LogGammaTarget>(shape);
}

double log_gamma_mean(double shape) { return boost::math::digamma(shape); }
double log_gamma_variance(double shape) { return boost::math::trigamma(shape); }

}  // namespace rehmc
