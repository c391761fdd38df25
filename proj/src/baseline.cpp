#include "rehmc/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rehmc/hmc.hpp"

namespace rehmc {

std::vector<double> window_weights(const std::vector<PhasePoint>& states) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (const auto& z : states) max_log = std::max(max_log, z.log_joint());
  std::vector<double> w(states.size());
  double total = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    w[i] = std::exp(states[i].log_joint() - max_log);
    total += w[i];
  }
  for (auto& x : w) x /= total;
  return w;
}

int calderhead_offset(int k, int backward_steps) {
  return (k - backward_steps >= backward_steps) ? k - backward_steps : -backward_steps;
}

bool build_window(const PhasePoint& state, int k, int backward_steps, double eps, const TargetDensity& target,
                  const MassMatrix& mass, ProposalWindow& window) {
  window.states.clear();
  window.offset = backward_steps;
  window.states.reserve(static_cast<std::size_t>(k + 1));

  // Backward in time: flip momentum, integrate forward, flip back.
  const PhasePoint flipped = state.with_momentum(-state.momentum(), mass);
  TrajectoryPrefix back = simulate_prefix(flipped, eps, backward_steps, target, mass);
  if (back.diverged) return false;
  for (auto it = back.points.rbegin(); it != back.points.rend(); ++it) {
    window.states.push_back(it->with_momentum(-it->momentum(), mass));
  }
  window.states.push_back(state);
  TrajectoryPrefix fwd = simulate_prefix(state, eps, k - backward_steps, target, mass);
  if (fwd.diverged) return false;
  for (auto& z : fwd.points) window.states.push_back(std::move(z));
  window.weights = window_weights(window.states);
  return true;
}

CalderheadResult calderhead_iteration(const PhasePoint& state, int k, double eps, const TargetDensity& target,
                                      const MassMatrix& mass, ChainStreams& streams) {
  if (k < 0) throw ConfigError("calderhead: K must be nonnegative");
  std::uniform_int_distribution<int> pick_l(0, k);
  const int backward = pick_l(streams.momentum);
  const int offset = calderhead_offset(k, backward);

  CalderheadResult out;
  auto& diag = out.batch.diagnostics;
  diag.steps = k;
  diag.gradient_evaluations = k;

  const PhasePoint* chosen = &state;
  if (build_window(state, k, backward, eps, target, mass, out.window)) {
    const PhasePoint& proposal = out.window.states[static_cast<std::size_t>(backward + offset)];
    const double log_ratio = proposal.log_joint() - state.log_joint();
    diag.accept_stat = accept_probability(state, proposal);
    diag.accepted = metropolis_accept(log_ratio, streams.accept);
    if (diag.accepted) chosen = &proposal;
    for (const auto& z : out.window.states) {
      diag.max_energy_error = std::max(diag.max_energy_error, std::abs(z.energy() - state.energy()));
    }
  } else {
    metropolis_accept(-std::numeric_limits<double>::infinity(), streams.accept);
    diag.divergent = true;
    out.window.states.assign(1, state);
    out.window.offset = 0;
    out.window.weights.assign(1, 1.0);
  }

  // K independent categorical draws from the window weights.
  const auto& w = out.window.weights;
  for (int i = 0; i < k; ++i) {
    const double u = uniform01(streams.recycle);
    double cum = 0.0;
    std::size_t idx = w.size() - 1;
    for (std::size_t j = 0; j < w.size(); ++j) {
      cum += w[j];
      if (u < cum) {
        idx = j;
        break;
      }
    }
    RecycledDraw d;
    d.theta = out.window.states[idx].theta();
    d.weight = 1.0;
    d.slot = i + 1;
    out.batch.recycled.push_back(std::move(d));
  }
  out.batch.state_weight = k == 0 ? 1.0 : 0.0;
  out.batch.next = chosen->with_momentum(mass.draw(streams.momentum), mass);
  return out;
}

std::vector<RecycledDraw> calderhead_rao_blackwell(const ProposalWindow& window) {
  std::vector<RecycledDraw> out;
  out.reserve(window.states.size());
  for (std::size_t i = 0; i < window.states.size(); ++i) {
    RecycledDraw d;
    d.theta = window.states[i].theta();
    d.weight = window.weights[i];
    d.slot = static_cast<int>(i) - window.offset;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace rehmc
