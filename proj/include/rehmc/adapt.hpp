#pragma once

#include <cstdint>

#include "rehmc/chain.hpp"

namespace rehmc {

struct DualAveragingConstants {
  double gamma = 0.05;
  double t0 = 10.0;
  double kappa = 0.75;
};

/// Nesterov-style dual averaging of log stepsize toward a target acceptance.
class DualAveraging {
 public:
  DualAveraging(double eps0, double delta, DualAveragingConstants constants = {});

  /// Out-of-range statistics are clamped to [0, 1] and flagged.
  void update(double accept_stat);

  long iteration() const { return t_; }
  double h_bar() const { return h_bar_; }
  double mu() const { return mu_; }
  double delta() const { return delta_; }
  double log_step() const { return log_eps_; }
  double log_step_bar() const { return log_eps_bar_; }
  double step_size() const;
  /// exp of the averaged iterate; the stepsize to use once adaptation stops.
  double final_step_size() const;
  bool clamped() const { return clamped_; }

 private:
  DualAveragingConstants c_;
  double delta_;
  double mu_;
  long t_ = 0;
  double h_bar_ = 0.0;
  double log_eps_;
  double log_eps_bar_ = 0.0;
  bool clamped_ = false;
};

/// Weighted single-pass mean and centered cross-product accumulator.
class CovarianceAccumulator {
 public:
  enum class Mode { Diagonal, Dense };

  CovarianceAccumulator(Eigen::Index dim, Mode mode = Mode::Dense);

  void update(const Vector& draw, double weight = 1.0);

  Mode mode() const { return mode_; }
  Eigen::Index dim() const { return mean_.size(); }
  double total_weight() const { return weight_; }
  long count() const { return count_; }
  const Vector& mean() const { return mean_; }
  /// Population covariance (divides by the weight sum). Diagonal mode returns
  /// a diagonal matrix. Zero before any update.
  Matrix covariance() const;

 private:
  Mode mode_;
  double weight_ = 0.0;
  long count_ = 0;
  Vector mean_;
  Vector diag_;
  Matrix cross_;
};

inline constexpr double kShrinkagePrior = 5.0;
inline constexpr double kShrinkageRidge = 1e-3;

/// n/(5+n) S + 5/(5+n) 1e-3 I, where n is the number of adaptation iterations.
Matrix finalize_shrinkage(const Matrix& empirical, long n_adap);
Matrix finalize_shrinkage(const CovarianceAccumulator& acc, long n_adap);

struct TuningOptions {
  long n_adap = 0;
  bool use_recycling = false;
  double delta = 0.7;
  double eps0 = 0.1;
  long initial_da_iterations = 50;
  long final_da_iterations = 75;
  CovarianceAccumulator::Mode covariance_mode = CovarianceAccumulator::Mode::Dense;
  DualAveragingConstants constants;
};

struct TuningResult {
  double eps = 0.0;
  MassMatrix mass = MassMatrix::identity(1);
  /// The shrunk estimate used as the inverse mass matrix.
  Matrix covariance;
  PhasePoint state;
  long iterations = 0;
  long gradient_evaluations = 0;
  long divergences = 0;
};

/// Three-phase warmup: dual averaging under the identity metric, covariance
/// collection at the averaged stepsize, then dual averaging under the shrunk
/// metric. The kernel's own stepsize is ignored. With use_recycling the
/// covariance is fed every atom of the recycled measure; otherwise only chain
/// states, and the kernel runs with recycling off.
TuningResult tuning_schedule(const TargetDensity& target, const KernelSpec& kernel, const Vector& theta0,
                             const TuningOptions& options, ChainStreams& streams);

}  // namespace rehmc
