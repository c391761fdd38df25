#pragma once

#include <optional>
#include <vector>

#include "rehmc/phase.hpp"

namespace rehmc {

/// Validated leapfrog stepsize.
struct LeapfrogConfig {
  double epsilon;

  explicit LeapfrogConfig(double eps);
};

/// One leapfrog step F_eps: half kick, drift, half kick.
///
/// Uses the cached gradient of z and evaluates the target exactly once, at the
/// new position. A negative eps integrates backward in time. Throws
/// DivergenceError if the new position has a non-finite density or gradient.
PhasePoint leapfrog_step(const PhasePoint& z, double eps, const TargetDensity& target,
                         const MassMatrix& mass);

/// Non-throwing variant; std::nullopt signals divergence.
std::optional<PhasePoint> try_leapfrog_step(const PhasePoint& z, double eps, const TargetDensity& target,
                                            const MassMatrix& mass);

/// F_eps^k(z0) for k = 1..steps. Throws DivergenceError carrying the step index.
std::vector<PhasePoint> simulate_trajectory(const PhasePoint& z0, double eps, int steps,
                                            const TargetDensity& target, const MassMatrix& mass);

/// Finite prefix of a trajectory that may stop early on divergence.
struct TrajectoryPrefix {
  std::vector<PhasePoint> points;
  bool diverged = false;
};

TrajectoryPrefix simulate_prefix(const PhasePoint& z0, double eps, int steps, const TargetDensity& target,
                                 const MassMatrix& mass);

}  // namespace rehmc
