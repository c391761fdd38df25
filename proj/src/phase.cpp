#include "rehmc/phase.hpp"

#include <cmath>

namespace rehmc {

MassMatrix MassMatrix::identity(Eigen::Index dim) {
  if (dim < 1) throw ConfigError("MassMatrix: dimension must be positive");
  MassMatrix m;
  m.variant_ = Variant::Identity;
  m.dim_ = dim;
  return m;
}

MassMatrix MassMatrix::diagonal(Vector masses) {
  if (masses.size() < 1) throw ConfigError("MassMatrix: dimension must be positive");
  for (Eigen::Index i = 0; i < masses.size(); ++i) {
    if (!(masses[i] > 0.0) || !std::isfinite(masses[i])) {
      throw ConfigError("MassMatrix: diagonal entries must be finite and positive");
    }
  }
  MassMatrix m;
  m.variant_ = Variant::Diagonal;
  m.dim_ = masses.size();
  m.diag_sqrt_ = masses.cwiseSqrt();
  m.diag_ = std::move(masses);
  return m;
}

MassMatrix MassMatrix::dense(const Matrix& mass) {
  if (mass.rows() < 1 || mass.rows() != mass.cols()) {
    throw ConfigError("MassMatrix: dense mass must be a non-empty square matrix");
  }
  MassMatrix m;
  m.variant_ = Variant::Dense;
  m.dim_ = mass.rows();
  m.dense_ = 0.5 * (mass + mass.transpose());
  m.llt_.compute(m.dense_);
  if (m.llt_.info() != Eigen::Success) {
    throw ConfigError("MassMatrix: Cholesky (LLT) factorization failed; mass is not positive-definite");
  }
  return m;
}

MassMatrix MassMatrix::from_inverse(const Matrix& inverse_mass) {
  Eigen::LLT<Matrix> llt(inverse_mass);
  if (inverse_mass.rows() < 1 || llt.info() != Eigen::Success) {
    throw ConfigError("MassMatrix: Cholesky (LLT) factorization of the inverse mass failed");
  }
  return dense(llt.solve(Matrix::Identity(inverse_mass.rows(), inverse_mass.cols())));
}

Vector MassMatrix::draw(Rng& rng) const {
  Vector z(dim_);
  for (Eigen::Index i = 0; i < dim_; ++i) z[i] = standard_normal(rng);
  switch (variant_) {
    case Variant::Identity:
      return z;
    case Variant::Diagonal:
      return diag_sqrt_.cwiseProduct(z);
    case Variant::Dense:
      return llt_.matrixL() * z;
  }
  return z;
}

Vector MassMatrix::apply_inverse(const Vector& p) const {
  switch (variant_) {
    case Variant::Identity:
      return p;
    case Variant::Diagonal:
      return p.cwiseQuotient(diag_);
    case Variant::Dense:
      return llt_.solve(p);
  }
  return p;
}

double MassMatrix::kinetic_energy(const Vector& p) const {
  if (variant_ == Variant::Identity) return 0.5 * p.squaredNorm();
  return 0.5 * p.dot(apply_inverse(p));
}

Matrix MassMatrix::matrix() const {
  switch (variant_) {
    case Variant::Identity:
      return Matrix::Identity(dim_, dim_);
    case Variant::Diagonal:
      return diag_.asDiagonal();
    case Variant::Dense:
      return dense_;
  }
  return {};
}

Matrix MassMatrix::inverse_matrix() const {
  switch (variant_) {
    case Variant::Identity:
      return Matrix::Identity(dim_, dim_);
    case Variant::Diagonal:
      return diag_.cwiseInverse().asDiagonal();
    case Variant::Dense:
      return llt_.solve(Matrix::Identity(dim_, dim_));
  }
  return {};
}

Vector draw_momentum(const MassMatrix& mass, Rng& rng) { return mass.draw(rng); }

double joint_log_density(const Vector& theta, const Vector& p, const TargetDensity& target,
                         const MassMatrix& mass) {
  if (theta.size() != target.dim() || p.size() != theta.size() || mass.dim() != theta.size()) {
    throw ConfigError("joint_log_density: dimension mismatch");
  }
  return target.log_density(theta) - mass.kinetic_energy(p);
}

PhasePoint PhasePoint::make(Vector theta, Vector p, const TargetDensity& target, const MassMatrix& mass) {
  if (theta.size() != target.dim() || p.size() != theta.size() || mass.dim() != theta.size()) {
    throw ConfigError("PhasePoint: dimension mismatch");
  }
  Vector grad(theta.size());
  const double lt = target.evaluate(theta, grad);
  if (!std::isfinite(lt) || !grad.allFinite()) {
    throw DomainError("PhasePoint: non-finite log density or gradient at the given position");
  }
  return from_evaluated(std::move(theta), std::move(p), lt, std::move(grad), mass);
}

PhasePoint PhasePoint::from_evaluated(Vector theta, Vector p, double log_target, Vector grad,
                                      const MassMatrix& mass) {
  PhasePoint z;
  z.log_joint_ = log_target - mass.kinetic_energy(p);
  z.theta_ = std::move(theta);
  z.p_ = std::move(p);
  z.grad_ = std::move(grad);
  z.log_target_ = log_target;
  return z;
}

PhasePoint PhasePoint::with_momentum(Vector p, const MassMatrix& mass) const {
  if (p.size() != theta_.size()) throw ConfigError("PhasePoint: momentum dimension mismatch");
  return from_evaluated(theta_, std::move(p), log_target_, grad_, mass);
}

}  // namespace rehmc
