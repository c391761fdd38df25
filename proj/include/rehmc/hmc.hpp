#pragma once

#include <variant>

#include "rehmc/batch.hpp"
#include "rehmc/integrator.hpp"

namespace rehmc {

/// Distribution of the number of leapfrog steps per iteration.
class PathLengthDistribution {
 public:
  struct Fixed {
    int steps;
  };
  struct UniformSteps {
    int min_steps;
    int max_steps;
  };
  /// steps = max(1, round(tau / eps)) with tau ~ Uniform[tau_lo, tau_hi].
  struct TimeJitter {
    double tau_lo;
    double tau_hi;
    double eps;
  };

  static PathLengthDistribution fixed(int steps);
  static PathLengthDistribution uniform(int min_steps, int max_steps);
  static PathLengthDistribution time_jitter(double tau_lo, double tau_hi, double eps);

  int sample(Rng& rng) const;
  /// Largest value in the support (K).
  int max_steps() const;
  /// Same distribution with a time-based jitter rebound to a new stepsize.
  PathLengthDistribution with_step(double eps) const;

 private:
  explicit PathLengthDistribution(std::variant<Fixed, UniformSteps, TimeJitter> v) : v_(v) {}
  std::variant<Fixed, UniformSteps, TimeJitter> v_;
};

/// Which slots of a trajectory are recycled, drawn independently per iteration.
class SubsetScheme {
 public:
  enum class Kind { All, Random, Strided };

  static SubsetScheme all() { return SubsetScheme(Kind::All, 0); }
  /// m slots without replacement (all slots when fewer than m exist).
  static SubsetScheme random(int m);
  /// Every stride-th slot counting back from the last one, so the endpoint is
  /// always kept. stride must be a power of two.
  static SubsetScheme strided(int stride);

  Kind kind() const { return kind_; }
  int parameter() const { return param_; }

  /// Sorted 1-based slot indices drawn from {1, ..., slots}.
  std::vector<int> select(int slots, Rng& rng) const;

 private:
  SubsetScheme(Kind k, int p) : kind_(k), param_(p) {}
  Kind kind_;
  int param_;
};

enum class RecycleMode {
  /// Simulate all K steps and recycle slots 1..K.
  FullTrajectory,
  /// Simulate only the L sampled steps and recycle slots 1..L (default).
  SampledLength,
};

struct HmcRecycling {
  RecycleMode mode = RecycleMode::SampledLength;
  SubsetScheme subset = SubsetScheme::all();
  bool keep_momentum = false;
};

/// exp(min(0, log pi(to) - log pi(from))); 0 for a non-finite target.
double accept_probability(const PhasePoint& from, const PhasePoint& to);
double accept_probability(double log_joint_from, double log_joint_to);

/// Metropolis test. Always consumes exactly one uniform from rng.
bool metropolis_accept(double log_ratio, Rng& rng);

/// Standard HMC: draw L, integrate L steps, accept the endpoint, refresh momentum.
IterationBatch hmc_iteration_standard(const PhasePoint& state, const PathLengthDistribution& plen, double eps,
                                      const TargetDensity& target, const MassMatrix& mass, ChainStreams& streams);

/// Recycled HMC. Intermediate states are accepted or rejected against the
/// start state with independent uniforms from the recycle stream; the slot
/// equal to the endpoint shares the endpoint's decision. The next state is
/// identical to hmc_iteration_standard for the same streams.
IterationBatch hmc_iteration_recycled(const PhasePoint& state, const PathLengthDistribution& plen, double eps,
                                      const TargetDensity& target, const MassMatrix& mass,
                                      const HmcRecycling& recycling, ChainStreams& streams);

}  // namespace rehmc
