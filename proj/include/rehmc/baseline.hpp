#pragma once

#include <vector>

#include "rehmc/batch.hpp"
#include "rehmc/integrator.hpp"

namespace rehmc {

/// The K+1 states F^k(z), k = -L..K-L, with density-proportional weights.
struct ProposalWindow {
  std::vector<PhasePoint> states;
  /// Number of backward steps L; states[offset] is the current state.
  int offset = 0;
  std::vector<double> weights;
};

/// Normalized exp(log_joint) over the states, computed with log-sum-exp.
std::vector<double> window_weights(const std::vector<PhasePoint>& states);

/// Offset of the proposal: K - L if K - L >= L, otherwise -L.
int calderhead_offset(int k, int backward_steps);

/// Materializes the window from `state` with `backward_steps` backward and
/// k - backward_steps forward leapfrog steps. Returns false on divergence.
bool build_window(const PhasePoint& state, int k, int backward_steps, double eps, const TargetDensity& target,
                  const MassMatrix& mass, ProposalWindow& window);

struct CalderheadResult {
  IterationBatch batch;
  ProposalWindow window;
};

/// Multi-proposal baseline: uniform L in {0..K}, Metropolis test against the
/// offset state, K independent draws from the window weights.
CalderheadResult calderhead_iteration(const PhasePoint& state, int k, double eps, const TargetDensity& target,
                                      const MassMatrix& mass, ChainStreams& streams);

/// Rao-Blackwellized draws: every window state with its weight.
std::vector<RecycledDraw> calderhead_rao_blackwell(const ProposalWindow& window);

}  // namespace rehmc
