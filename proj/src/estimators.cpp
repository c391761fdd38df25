#include "rehmc/estimators.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

namespace rehmc {

WeightedSampleSet::WeightedSampleSet(std::vector<double> values, std::vector<double> weights) {
  if (values.size() != weights.size()) throw DomainError("weighted samples: length mismatch");
  reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) add(values[i], weights[i]);
}

WeightedSampleSet WeightedSampleSet::unweighted(std::vector<double> values) {
  std::vector<double> w(values.size(), 1.0);
  return WeightedSampleSet(std::move(values), std::move(w));
}

void WeightedSampleSet::add(double value, double weight) {
  if (!(weight > 0.0) || !std::isfinite(weight)) throw DomainError("weighted samples: weights must be positive");
  if (!std::isfinite(value)) throw DomainError("weighted samples: non-finite value");
  values_.push_back(value);
  weights_.push_back(weight);
}

void WeightedSampleSet::reserve(std::size_t n) {
  values_.reserve(n);
  weights_.reserve(n);
}

namespace {
void require_nonempty(const WeightedSampleSet& s, const char* what) {
  if (s.empty()) throw DomainError(std::string(what) + ": empty sample set");
}
}  // namespace

double weighted_mean(const WeightedSampleSet& s) {
  require_nonempty(s, "weighted_mean");
  const auto& v = s.values();
  const auto& w = s.weights();
  double total = 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    total += w[i];
    acc += w[i] * v[i];
  }
  return acc / total;
}

double weighted_variance(const WeightedSampleSet& s) {
  const double m = weighted_mean(s);
  const auto& v = s.values();
  const auto& w = s.weights();
  double total = 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    total += w[i];
    acc += w[i] * (v[i] - m) * (v[i] - m);
  }
  return acc / total;
}

double weighted_quantile(const WeightedSampleSet& s, double q) {
  require_nonempty(s, "weighted_quantile");
  if (!(q > 0.0 && q < 1.0)) throw DomainError("weighted_quantile: q must lie in (0, 1)");
  const auto& v = s.values();
  const auto& w = s.weights();
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double cum = 0.0;
  for (std::size_t idx : order) {
    cum += w[idx];
    if (cum / total >= q) return v[idx];
  }
  return v[order.back()];
}

double mse(const std::vector<double>& estimates, double truth) {
  if (estimates.empty()) throw DomainError("mse: no estimates");
  double acc = 0.0;
  for (double e : estimates) acc += (e - truth) * (e - truth);
  return acc / static_cast<double>(estimates.size());
}

double ess_from_mse(double mse_chain, double mse_iid, double n) {
  if (!(mse_chain > 0.0)) throw NumericalError("ess: chain MSE must be positive");
  if (!(mse_iid > 0.0)) throw DomainError("ess: iid MSE must be positive");
  if (!(n >= 1.0)) throw DomainError("ess: sample size must be at least 1");
  return n * mse_iid / mse_chain;
}

Statistic Statistic::quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("statistic: quantile level must lie in (0, 1)");
  return {Kind::Quantile, q};
}

double Statistic::apply(const WeightedSampleSet& s) const {
  switch (kind) {
    case Kind::Mean:
      return weighted_mean(s);
    case Kind::Variance:
      return weighted_variance(s);
    case Kind::Quantile:
      return weighted_quantile(s, q);
  }
  return 0.0;
}

double Statistic::truth(const GaussianSpec& g, Eigen::Index i) const {
  switch (kind) {
    case Kind::Mean:
      return 0.0;
    case Kind::Variance:
      return g.variance(i);
    case Kind::Quantile:
      return g.quantile(i, q);
  }
  return 0.0;
}

std::string Statistic::label() const {
  switch (kind) {
    case Kind::Mean:
      return "mean";
    case Kind::Variance:
      return "variance";
    case Kind::Quantile: {
      char buf[32];
      auto r = std::to_chars(buf, buf + sizeof buf, q);
      return "quantile_" + std::string(buf, r.ptr);
    }
  }
  return {};
}

Statistic Statistic::parse(const std::string& text) {
  if (text == "mean") return mean();
  if (text == "variance") return variance();
  const std::string prefix = "quantile_";
  if (text.rfind(prefix, 0) == 0) {
    double q = 0.0;
    const char* first = text.data() + prefix.size();
    const char* last = text.data() + text.size();
    auto r = std::from_chars(first, last, q);
    if (r.ec == std::errc() && r.ptr == last) return quantile(q);
  }
  throw ConfigError("unknown statistic '" + text + "'");
}

double analytic_iid_mse(const Statistic& stat, double variance, long n) {
  if (n < 1) throw DomainError("analytic_iid_mse: n must be at least 1");
  const double nn = static_cast<double>(n);
  switch (stat.kind) {
    case Statistic::Kind::Mean:
      return variance / nn;
    case Statistic::Kind::Variance:
      return (2.0 * nn - 1.0) * variance * variance / (nn * nn);
    case Statistic::Kind::Quantile: {
      boost::math::normal_distribution<double> std_normal;
      const double z = boost::math::quantile(std_normal, stat.q);
      const double phi = boost::math::pdf(std_normal, z);
      return stat.q * (1.0 - stat.q) * variance / (nn * phi * phi);
    }
  }
  return 0.0;
}

double iid_mse_oracle(const Statistic& stat, const ExactSampler& sampler, double truth, long n, long replications,
                      Rng& rng) {
  if (!sampler) throw ConfigError("iid_mse_oracle: no exact sampler for this target");
  if (n < 1 || replications < 1) throw DomainError("iid_mse_oracle: n and replications must be positive");
  std::vector<double> estimates;
  estimates.reserve(static_cast<std::size_t>(replications));
  std::vector<double> values(static_cast<std::size_t>(n));
  for (long r = 0; r < replications; ++r) {
    for (auto& v : values) v = sampler(rng);
    estimates.push_back(stat.apply(WeightedSampleSet::unweighted(values)));
  }
  return mse(estimates, truth);
}

double iid_mse_oracle(const Statistic& stat, const GaussianSpec& g, Eigen::Index coordinate, long n,
                      long replications, Rng& rng) {
  const double sd = std::sqrt(g.variance(coordinate));
  return iid_mse_oracle(
      stat, [sd](Rng& r) { return sd * standard_normal(r); }, stat.truth(g, coordinate), n, replications, rng);
}

WeightedSampleSet collect_coordinate(const std::vector<IterationBatch>& batches, Eigen::Index coordinate,
                                     bool recycled) {
  WeightedSampleSet s;
  std::size_t atoms = batches.size();
  if (recycled) {
    for (const auto& b : batches) atoms += b.recycled.size();
  }
  s.reserve(atoms);
  for (const auto& b : batches) {
    if (!recycled) {
      s.add(b.next.theta()(coordinate), 1.0);
      continue;
    }
    if (b.state_weight > 0.0) s.add(b.next.theta()(coordinate), b.state_weight);
    for (const auto& r : b.recycled) {
      if (r.weight > 0.0) s.add(r.theta(coordinate), r.weight);
    }
  }
  return s;
}

PowerIterationResult power_iteration(const Matrix& a, double tol, int max_iterations) {
  if (a.rows() != a.cols() || a.rows() < 1) throw DomainError("power iteration: matrix must be square");
  const Eigen::Index d = a.rows();
  if (d == 1) return {a(0, 0), Vector::Ones(1), 0};
  // Deterministic start with every component nonzero.
  Vector v = Vector::LinSpaced(d, 1.0, 2.0).normalized();
  double lambda = 0.0;
  for (int it = 1; it <= max_iterations; ++it) {
    Vector w = a * v;
    const double norm = w.norm();
    if (norm == 0.0) return {0.0, v, it};
    v = w / norm;
    lambda = v.dot(a * v);
    const double residual = (a * v - lambda * v).norm();
    if (residual <= tol * std::max(1.0, std::abs(lambda))) return {lambda, v, it};
  }
  throw NumericalError("power iteration did not converge");
}

int leading_span_dim(const Vector& eig) {
  if (eig.size() == 0) throw DomainError("leading span: no eigenvalues");
  const double half = eig(0) / 2.0;
  for (Eigen::Index j = 0; j < eig.size(); ++j) {
    if (eig(j) < half) return static_cast<int>(j) + 1;
  }
  return static_cast<int>(eig.size());
}

double angle_to_span(const Vector& v, const Matrix& basis) {
  const Vector u = v.normalized();
  const double proj = std::min(1.0, (basis.transpose() * u).norm());
  return std::acos(proj);
}

PcaMetrics pca_metrics(const Matrix& empirical, const GaussianSpec& truth) {
  if (empirical.rows() != truth.dim() || empirical.cols() != truth.dim()) {
    throw DomainError("pca metrics: dimension mismatch");
  }
  if (!empirical.isApprox(empirical.transpose(), 1e-10)) throw DomainError("pca metrics: matrix is not symmetric");
  PowerIterationResult top = power_iteration(empirical);
  PcaMetrics m;
  m.top_eigenvalue = top.eigenvalue;
  m.top_eigenvector = top.eigenvector;
  m.span_dim = leading_span_dim(truth.eigenvalues());
  m.angle = angle_to_span(top.eigenvector, truth.eigenvectors().leftCols(m.span_dim));
  return m;
}

std::size_t select_tau(const std::vector<double>& taus, const std::vector<double>& scores) {
  if (taus.empty() || taus.size() != scores.size()) throw ConfigError("esjd: grid and scores must match");
  std::size_t best = 0;
  for (std::size_t i = 1; i < taus.size(); ++i) {
    if (scores[i] > scores[best] || (scores[i] == scores[best] && taus[i] < taus[best])) best = i;
  }
  return best;
}

EsjdResult esjd_tune(const TargetDensity& target, const MassMatrix& mass, const Vector& theta0, double eps,
                     const std::vector<double>& taus, long probe_iterations, Rng& rng) {
  if (taus.empty()) throw ConfigError("esjd: empty grid");
  if (probe_iterations < 1) throw ConfigError("esjd: probe iterations must be positive");
  const std::uint64_t seed = rng();
  EsjdResult out;
  for (double tau : taus) {
    if (!(tau > 0.0)) throw ConfigError("esjd: grid values must be positive");
    HmcKernel k{eps, PathLengthDistribution::fixed(std::max(1, static_cast<int>(std::lround(tau / eps)))), {}};
    double jumps = 0.0;
    Vector prev = theta0;
    ChainOptions opts;
    opts.iterations = probe_iterations;
    opts.keep_batches = false;
    run_chain(target, mass, theta0, k, opts, seed, [&](long, bool, const IterationBatch& b) {
      jumps += (b.next.theta() - prev).squaredNorm();
      prev = b.next.theta();
    });
    out.scores.push_back(jumps / static_cast<double>(probe_iterations) / std::sqrt(tau));
  }
  if (std::all_of(out.scores.begin(), out.scores.end(), [](double s) { return s == 0.0; })) {
    throw NumericalError("esjd: every candidate produced zero displacement");
  }
  out.tau = taus[select_tau(taus, out.scores)];
  return out;
}

}  // namespace rehmc
