#pragma once

#include <Eigen/Cholesky>

#include "rehmc/random.hpp"
#include "rehmc/targets.hpp"

namespace rehmc {

/// Momentum covariance M. Immutable; safe to share across chains.
class MassMatrix {
 public:
  enum class Variant { Identity, Diagonal, Dense };

  static MassMatrix identity(Eigen::Index dim);
  static MassMatrix diagonal(Vector masses);
  /// Throws ConfigError if the LLT factorization of M fails.
  static MassMatrix dense(const Matrix& mass);
  /// Mass matrix whose inverse is the given covariance estimate.
  static MassMatrix from_inverse(const Matrix& inverse_mass);

  Variant variant() const { return variant_; }
  Eigen::Index dim() const { return dim_; }

  /// Draws p ~ N(0, M).
  Vector draw(Rng& rng) const;
  Vector apply_inverse(const Vector& p) const;
  /// 1/2 p^T M^{-1} p.
  double kinetic_energy(const Vector& p) const;

  Matrix matrix() const;
  Matrix inverse_matrix() const;

 private:
  MassMatrix() = default;

  Variant variant_ = Variant::Identity;
  Eigen::Index dim_ = 0;
  Vector diag_;
  Vector diag_sqrt_;
  Matrix dense_;
  Eigen::LLT<Matrix> llt_;
};

/// Draws a fresh momentum; deterministic given the rng state.
Vector draw_momentum(const MassMatrix& mass, Rng& rng);

/// log pi_theta(theta) - 1/2 p^T M^{-1} p.
double joint_log_density(const Vector& theta, const Vector& p, const TargetDensity& target,
                         const MassMatrix& mass);

/// Position-momentum pair with cached log target, gradient and joint log density.
///
/// Caches are filled on construction and there is no mutating setter, so they
/// always describe the stored (theta, p).
class PhasePoint {
 public:
  PhasePoint() = default;

  /// Evaluates the target at theta. Throws DomainError for non-finite values.
  static PhasePoint make(Vector theta, Vector p, const TargetDensity& target, const MassMatrix& mass);
  /// Assembles a point from an already evaluated target; used by the integrator.
  static PhasePoint from_evaluated(Vector theta, Vector p, double log_target, Vector grad,
                                   const MassMatrix& mass);

  /// Same position with a new momentum; the target caches are reused.
  PhasePoint with_momentum(Vector p, const MassMatrix& mass) const;

  const Vector& theta() const { return theta_; }
  const Vector& momentum() const { return p_; }
  const Vector& grad() const { return grad_; }
  double log_target() const { return log_target_; }
  double log_joint() const { return log_joint_; }
  /// Hamiltonian, -log_joint.
  double energy() const { return -log_joint_; }
  Eigen::Index dim() const { return theta_.size(); }

 private:
  Vector theta_;
  Vector p_;
  Vector grad_;
  double log_target_ = 0.0;
  double log_joint_ = 0.0;
};

}  // namespace rehmc
