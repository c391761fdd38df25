#include "rehmc/adapt.hpp"

#include <algorithm>
#include <cmath>

namespace rehmc {

DualAveraging::DualAveraging(double eps0, double delta, DualAveragingConstants constants)
    : c_(constants), delta_(delta) {
  if (!(eps0 > 0.0) || !std::isfinite(eps0)) throw ConfigError("dual averaging: eps0 must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("dual averaging: delta must lie in (0, 1)");
  if (!(c_.gamma > 0.0) || !(c_.t0 >= 0.0) || !(c_.kappa > 0.0)) {
    throw ConfigError("dual averaging: invalid constants");
  }
  mu_ = std::log(10.0 * eps0);
  log_eps_ = std::log(eps0);
}

void DualAveraging::update(double accept_stat) {
  if (!(accept_stat >= 0.0 && accept_stat <= 1.0)) {
    clamped_ = true;
    accept_stat = std::isnan(accept_stat) ? 0.0 : std::clamp(accept_stat, 0.0, 1.0);
  }
  ++t_;
  const double t = static_cast<double>(t_);
  const double eta = 1.0 / (t + c_.t0);
  h_bar_ = (1.0 - eta) * h_bar_ + eta * (delta_ - accept_stat);
  log_eps_ = mu_ - std::sqrt(t) / c_.gamma * h_bar_;
  const double w = std::pow(t, -c_.kappa);
  log_eps_bar_ = w * log_eps_ + (1.0 - w) * log_eps_bar_;
}

double DualAveraging::step_size() const { return std::exp(log_eps_); }

double DualAveraging::final_step_size() const { return t_ == 0 ? std::exp(log_eps_) : std::exp(log_eps_bar_); }

CovarianceAccumulator::CovarianceAccumulator(Eigen::Index dim, Mode mode) : mode_(mode) {
  if (dim < 1) throw ConfigError("covariance: dimension must be positive");
  mean_ = Vector::Zero(dim);
  if (mode_ == Mode::Dense) {
    cross_ = Matrix::Zero(dim, dim);
  } else {
    diag_ = Vector::Zero(dim);
  }
}

void CovarianceAccumulator::update(const Vector& draw, double weight) {
  if (draw.size() != mean_.size()) throw DomainError("covariance: dimension mismatch");
  if (!(weight > 0.0) || !std::isfinite(weight)) throw DomainError("covariance: weight must be positive");
  if (!draw.allFinite()) throw DomainError("covariance: non-finite draw");
  weight_ += weight;
  ++count_;
  const Vector before = draw - mean_;
  mean_ += (weight / weight_) * before;
  const Vector after = draw - mean_;
  if (mode_ == Mode::Dense) {
    cross_.noalias() += weight * before * after.transpose();
  } else {
    diag_.array() += weight * before.array() * after.array();
  }
}

Matrix CovarianceAccumulator::covariance() const {
  const Eigen::Index d = mean_.size();
  if (weight_ == 0.0) return Matrix::Zero(d, d);
  if (mode_ == Mode::Diagonal) return (diag_ / weight_).asDiagonal();
  Matrix s = cross_ / weight_;
  return 0.5 * (s + s.transpose());
}

Matrix finalize_shrinkage(const Matrix& empirical, long n_adap) {
  if (n_adap < 0) throw ConfigError("shrinkage: n_adap must be nonnegative");
  if (empirical.rows() != empirical.cols() || empirical.rows() < 1) {
    throw DomainError("shrinkage: covariance must be square");
  }
  const double n = static_cast<double>(n_adap);
  const double a = n / (kShrinkagePrior + n);
  const double b = kShrinkagePrior / (kShrinkagePrior + n) * kShrinkageRidge;
  Matrix out = a * empirical;
  out.diagonal().array() += b;
  if (Eigen::LLT<Matrix>(out).info() != Eigen::Success) {
    throw NumericalError("shrinkage: result is not positive definite");
  }
  return out;
}

Matrix finalize_shrinkage(const CovarianceAccumulator& acc, long n_adap) {
  return finalize_shrinkage(acc.covariance(), n_adap);
}

namespace {

PhasePoint run_dual_averaging(const TargetDensity& target, const KernelSpec& plain, const MassMatrix& mass,
                              PhasePoint state, long iterations, DualAveraging& da, ChainStreams& streams,
                              TuningResult& result) {
  for (long i = 0; i < iterations; ++i) {
    IterationBatch b = transition(with_epsilon(plain, da.step_size()), state, target, mass, streams);
    da.update(b.diagnostics.accept_stat);
    result.gradient_evaluations += b.diagnostics.gradient_evaluations;
    if (b.diagnostics.divergent) ++result.divergences;
    state = std::move(b.next);
  }
  result.iterations += iterations;
  return state;
}

}  // namespace

TuningResult tuning_schedule(const TargetDensity& target, const KernelSpec& kernel, const Vector& theta0,
                             const TuningOptions& options, ChainStreams& streams) {
  if (options.n_adap < 0) throw ConfigError("tuning: n_adap must be nonnegative");
  if (options.initial_da_iterations < 0 || options.final_da_iterations < 0) {
    throw ConfigError("tuning: phase lengths must be nonnegative");
  }
  const KernelSpec plain = without_recycling(kernel);
  const KernelSpec collecting = options.use_recycling ? kernel : plain;
  const Eigen::Index d = target.dim();

  TuningResult result;
  MassMatrix identity = MassMatrix::identity(d);
  PhasePoint state = initial_state(target, identity, theta0, streams.momentum);

  DualAveraging first(options.eps0, options.delta, options.constants);
  state = run_dual_averaging(target, plain, identity, std::move(state), options.initial_da_iterations, first,
                             streams, result);
  const double eps_fixed = first.final_step_size();

  CovarianceAccumulator acc(d, options.covariance_mode);
  const KernelSpec fixed = with_epsilon(collecting, eps_fixed);
  for (long i = 0; i < options.n_adap; ++i) {
    IterationBatch b = transition(fixed, state, target, identity, streams);
    result.gradient_evaluations += b.diagnostics.gradient_evaluations;
    if (b.diagnostics.divergent) ++result.divergences;
    if (options.use_recycling) {
      if (b.state_weight > 0.0) acc.update(b.next.theta(), b.state_weight);
      for (const auto& r : b.recycled) {
        if (r.weight > 0.0) acc.update(r.theta, r.weight);
      }
    } else {
      acc.update(b.next.theta(), 1.0);
    }
    state = std::move(b.next);
  }
  result.iterations += options.n_adap;

  result.covariance = finalize_shrinkage(acc, options.n_adap);
  result.mass = MassMatrix::from_inverse(result.covariance);
  state = state.with_momentum(result.mass.draw(streams.momentum), result.mass);

  DualAveraging second(eps_fixed, options.delta, options.constants);
  state = run_dual_averaging(target, plain, result.mass, std::move(state), options.final_da_iterations, second,
                             streams, result);
  result.eps = second.final_step_size();
  result.state = std::move(state);
  return result;
}

}  // namespace rehmc
