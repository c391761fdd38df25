#include "rehmc/integrator.hpp"

#include <cmath>
#include <string>

namespace rehmc {

LeapfrogConfig::LeapfrogConfig(double eps) : epsilon(eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("leapfrog stepsize must be positive and finite");
}

std::optional<PhasePoint> try_leapfrog_step(const PhasePoint& z, double eps, const TargetDensity& target,
                                            const MassMatrix& mass) {
  Vector p_half = z.momentum() + (0.5 * eps) * z.grad();
  Vector theta = z.theta() + eps * mass.apply_inverse(p_half);
  if (!theta.allFinite()) return std::nullopt;
  Vector grad(theta.size());
  double log_target;
  try {
    log_target = target.evaluate(theta, grad);
  } catch (const DomainError&) {
    return std::nullopt;
  }
  if (!std::isfinite(log_target) || !grad.allFinite()) return std::nullopt;
  p_half += (0.5 * eps) * grad;
  return PhasePoint::from_evaluated(std::move(theta), std::move(p_half), log_target, std::move(grad), mass);
}

PhasePoint leapfrog_step(const PhasePoint& z, double eps, const TargetDensity& target, const MassMatrix& mass) {
  auto next = try_leapfrog_step(z, eps, target, mass);
  if (!next) {
    throw DivergenceError("leapfrog: non-finite density or gradient",
                          z.theta() + eps * mass.apply_inverse(z.momentum() + 0.5 * eps * z.grad()));
  }
  return std::move(*next);
}

TrajectoryPrefix simulate_prefix(const PhasePoint& z0, double eps, int steps, const TargetDensity& target,
                                 const MassMatrix& mass) {
  TrajectoryPrefix out;
  out.points.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  const PhasePoint* current = &z0;
  for (int k = 0; k < steps; ++k) {
    auto next = try_leapfrog_step(*current, eps, target, mass);
    if (!next) {
      out.diverged = true;
      break;
    }
    out.points.push_back(std::move(*next));
    current = &out.points.back();
  }
  return out;
}

std::vector<PhasePoint> simulate_trajectory(const PhasePoint& z0, double eps, int steps,
                                            const TargetDensity& target, const MassMatrix& mass) {
  if (steps < 1) throw ConfigError("simulate_trajectory: steps must be at least 1");
  std::vector<PhasePoint> out;
  out.reserve(static_cast<std::size_t>(steps));
  const PhasePoint* current = &z0;
  for (int k = 1; k <= steps; ++k) {
    try {
      out.push_back(leapfrog_step(*current, eps, target, mass));
    } catch (const DivergenceError& e) {
      throw DivergenceError("leapfrog diverged at step " + std::to_string(k), e.theta(), k);
    }
    current = &out.back();
  }
  return out;
}

}  // namespace rehmc
