#pragma once

#include <memory>
#include <vector>

#include "rehmc/batch.hpp"
#include "rehmc/integrator.hpp"

namespace rehmc {

/// Slice level, stored as log u.
struct SliceVariable {
  double log_u;
};

/// log u = log pi(z0) - e with e ~ Exp(1), i.e. u ~ Uniform(0, pi(z0)).
SliceVariable draw_slice(const PhasePoint& z0, Rng& rng);

/// Hoffman-Gelman termination criterion with strict inequalities:
/// (theta+ - theta-)^T M^{-1} p- < 0 or (theta+ - theta-)^T M^{-1} p+ < 0.
bool uturn(const Vector& theta_minus, const Vector& p_minus, const Vector& theta_plus, const Vector& p_plus,
           const MassMatrix& mass);
bool uturn(const PhasePoint& left, const PhasePoint& right, const MassMatrix& mass);

struct RecycleStrategy {
  enum class Kind {
    None,
    /// K draws without replacement from the acceptable states.
    Simple,
    /// Every acceptable state with weight 1/|A|.
    RaoBlackwell,
    /// K draws spread along the trajectory by recursive proportional allocation.
    EvenlySpread,
    /// Every trajectory state regardless of the slice. Not a valid sampler;
    /// kept as a negative control.
    NaiveAll,
  };

  Kind kind = Kind::None;
  int k = 0;

  static RecycleStrategy none() { return {}; }
  static RecycleStrategy simple(int k);
  static RecycleStrategy rao_blackwell() { return {Kind::RaoBlackwell, 0}; }
  static RecycleStrategy evenly_spread(int k);
  static RecycleStrategy naive_all() { return {Kind::NaiveAll, 0}; }
};

using PointRef = std::shared_ptr<const PhasePoint>;

/// Acceptable-state bookkeeping for one subtree.
struct AcceptSummary {
  long acceptable = 0;
  long states = 0;
  /// Uniformly selected acceptable state (null when acceptable == 0).
  PointRef candidate;
  /// Strategy-dependent: a without-replacement sample of min(K, |A|) states
  /// (simple), an ordered list of K slots (evenly spread), all acceptable
  /// states (Rao-Blackwell) or all states (naive).
  std::vector<PointRef> reservoir;
};

/// State of one NUTS subtree.
struct NutsTree {
  PointRef leftmost;
  PointRef rightmost;
  AcceptSummary summary;
  int depth = 0;
  bool terminated = false;
  bool diverged = false;
  long steps = 0;
  double accept_sum = 0.0;
  double max_energy_error = 0.0;
};

struct NutsRngs {
  Rng& selection;
  Rng& recycle;
};

/// Divergence threshold in log-density units.
inline constexpr double kMaxEnergyError = 1000.0;

/// Builds a subtree of 2^depth leapfrog steps from z in `direction` (+1/-1).
/// log_joint0 is the log joint density of the iteration's starting state.
NutsTree build_tree(const PhasePoint& z, const SliceVariable& slice, int direction, int depth, double eps,
                    const TargetDensity& target, const MassMatrix& mass, const RecycleStrategy& strategy,
                    double log_joint0, NutsRngs rngs);

/// One NUTS iteration with uniform selection over the acceptable states.
IterationBatch nuts_iteration(const PhasePoint& state, double eps, const TargetDensity& target,
                              const MassMatrix& mass, int max_depth, const RecycleStrategy& strategy,
                              ChainStreams& streams);

/// A finished trajectory in leaf order; size must be a power of two.
struct FrozenTree {
  std::vector<PhasePoint> leaves;
  std::vector<bool> acceptable;

  static FrozenTree from_slice(std::vector<PhasePoint> leaves, const SliceVariable& slice);
  long acceptable_count() const;
};

/// Evenly-spread recycling: K draws allocated recursively with
/// n = floor(w) + Bernoulli(w - floor(w)), w = K |A'| / (|A'| + |A''|).
std::vector<RecycledDraw> recycle_evenly(const FrozenTree& tree, int k, Rng& rng);
/// Uniform selection from the acceptable states by progressive merging.
PhasePoint select_uniform(const FrozenTree& tree, Rng& rng);
/// K draws without replacement by reservoir merging.
std::vector<RecycledDraw> recycle_simple(const FrozenTree& tree, int k, Rng& rng);

}  // namespace rehmc
