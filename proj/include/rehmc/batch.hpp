#pragma once

#include <vector>

#include "rehmc/phase.hpp"

namespace rehmc {

/// One atom of the recycled empirical measure.
struct RecycledDraw {
  Vector theta;
  double weight = 1.0;
  long iteration = 0;
  int slot = 0;
  /// Only filled when momenta retention is requested.
  Vector momentum;
};

struct IterationDiagnostics {
  /// HMC: endpoint acceptance probability. NUTS: mean over leaves of
  /// min(1, pi(leaf) / pi(start)).
  double accept_stat = 0.0;
  double max_energy_error = 0.0;
  long gradient_evaluations = 0;
  int steps = 0;
  bool divergent = false;
  bool accepted = false;
  // NUTS only.
  int tree_depth = 0;
  long acceptable_states = 0;
  bool max_depth_reached = false;
};

/// Output of one transition.
struct IterationBatch {
  PhasePoint next;
  std::vector<RecycledDraw> recycled;
  IterationDiagnostics diagnostics;
  /// Weight the recycled-arm estimator gives to `next`; zero when the recycled
  /// draws already account for the chain state.
  double state_weight = 1.0;
};

}  // namespace rehmc
