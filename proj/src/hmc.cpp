#include "rehmc/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rehmc {

PathLengthDistribution PathLengthDistribution::fixed(int steps) {
  if (steps < 1) throw ConfigError("path length: fixed steps must be at least 1");
  return PathLengthDistribution(Fixed{steps});
}

PathLengthDistribution PathLengthDistribution::uniform(int min_steps, int max_steps) {
  if (min_steps < 1 || max_steps < min_steps) {
    throw ConfigError("path length: uniform range must satisfy 1 <= min <= max");
  }
  return PathLengthDistribution(UniformSteps{min_steps, max_steps});
}

PathLengthDistribution PathLengthDistribution::time_jitter(double tau_lo, double tau_hi, double eps) {
  if (!(tau_lo > 0.0) || !(tau_hi >= tau_lo) || !(eps > 0.0) || !std::isfinite(tau_hi)) {
    throw ConfigError("path length: jitter needs 0 < tau_lo <= tau_hi and eps > 0");
  }
  return PathLengthDistribution(TimeJitter{tau_lo, tau_hi, eps});
}

namespace {
int steps_for_time(double tau, double eps) { return std::max(1, static_cast<int>(std::lround(tau / eps))); }
}  // namespace

int PathLengthDistribution::sample(Rng& rng) const {
  return std::visit(
      [&rng](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Fixed>) {
          return v.steps;
        } else if constexpr (std::is_same_v<T, UniformSteps>) {
          std::uniform_int_distribution<int> dist(v.min_steps, v.max_steps);
          return dist(rng);
        } else {
          const double tau = v.tau_lo + (v.tau_hi - v.tau_lo) * uniform01(rng);
          return steps_for_time(tau, v.eps);
        }
      },
      v_);
}

int PathLengthDistribution::max_steps() const {
  return std::visit(
      [](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Fixed>) {
          return v.steps;
        } else if constexpr (std::is_same_v<T, UniformSteps>) {
          return v.max_steps;
        } else {
          return steps_for_time(v.tau_hi, v.eps);
        }
      },
      v_);
}

PathLengthDistribution PathLengthDistribution::with_step(double eps) const {
  if (const auto* j = std::get_if<TimeJitter>(&v_)) return time_jitter(j->tau_lo, j->tau_hi, eps);
  return *this;
}

SubsetScheme SubsetScheme::random(int m) {
  if (m < 1) throw ConfigError("subset: random subset size must be at least 1");
  return SubsetScheme(Kind::Random, m);
}

SubsetScheme SubsetScheme::strided(int stride) {
  if (stride < 1 || (stride & (stride - 1)) != 0) throw ConfigError("subset: stride must be a power of two");
  return SubsetScheme(Kind::Strided, stride);
}

std::vector<int> SubsetScheme::select(int slots, Rng& rng) const {
  std::vector<int> out;
  if (slots < 1) return out;
  switch (kind_) {
    case Kind::All:
      out.resize(static_cast<std::size_t>(slots));
      std::iota(out.begin(), out.end(), 1);
      break;
    case Kind::Random: {
      // Selection sampling (Knuth's Algorithm S): ordered output.
      int needed = std::min(param_, slots);
      for (int k = 1; k <= slots && needed > 0; ++k) {
        const int remaining = slots - k + 1;
        if (uniform01(rng) * remaining < needed) {
          out.push_back(k);
          --needed;
        }
      }
      break;
    }
    case Kind::Strided:
      for (int k = slots; k >= 1; k -= param_) out.push_back(k);
      std::reverse(out.begin(), out.end());
      break;
  }
  return out;
}

double accept_probability(double log_joint_from, double log_joint_to) {
  const double diff = log_joint_to - log_joint_from;
  if (std::isnan(diff) || diff == -std::numeric_limits<double>::infinity()) return 0.0;
  return std::exp(std::min(0.0, diff));
}

double accept_probability(const PhasePoint& from, const PhasePoint& to) {
  return accept_probability(from.log_joint(), to.log_joint());
}

bool metropolis_accept(double log_ratio, Rng& rng) {
  const double u = uniform01(rng);
  return std::log(u) < log_ratio;
}

namespace {

IterationBatch hmc_core(const PhasePoint& state, const PathLengthDistribution& plen, double eps,
                        const TargetDensity& target, const MassMatrix& mass, const HmcRecycling* recycling,
                        ChainStreams& streams) {
  const int length = plen.sample(streams.momentum);
  const bool full = recycling != nullptr && recycling->mode == RecycleMode::FullTrajectory;
  const int simulated = full ? std::max(length, plen.max_steps()) : length;

  TrajectoryPrefix traj = simulate_prefix(state, eps, simulated, target, mass);
  const int survived = static_cast<int>(traj.points.size());

  IterationBatch batch;
  auto& diag = batch.diagnostics;
  diag.steps = survived;
  diag.gradient_evaluations = survived + (traj.diverged ? 1 : 0);
  diag.divergent = traj.diverged && survived < length;
  for (const auto& z : traj.points) {
    diag.max_energy_error = std::max(diag.max_energy_error, std::abs(z.energy() - state.energy()));
  }

  const double endpoint_log_ratio = survived >= length
                                        ? traj.points[static_cast<std::size_t>(length - 1)].log_joint() -
                                              state.log_joint()
                                        : -std::numeric_limits<double>::infinity();
  diag.accepted = metropolis_accept(endpoint_log_ratio, streams.accept);
  diag.accept_stat = survived >= length ? accept_probability(state.log_joint(),
                                                             state.log_joint() + endpoint_log_ratio)
                                        : 0.0;
  const PhasePoint& chosen = diag.accepted ? traj.points[static_cast<std::size_t>(length - 1)] : state;

  if (recycling != nullptr) {
    const std::vector<int> slots = recycling->subset.select(simulated, streams.subset);
    batch.recycled.reserve(slots.size());
    for (int k : slots) {
      const PhasePoint* pick = &state;
      if (k == length) {
        pick = &chosen;
      } else {
        const double u = uniform01(streams.recycle);
        if (k <= survived) {
          const auto& proposal = traj.points[static_cast<std::size_t>(k - 1)];
          if (std::log(u) < proposal.log_joint() - state.log_joint()) pick = &proposal;
        }
      }
      RecycledDraw d;
      d.theta = pick->theta();
      d.weight = 1.0;
      d.slot = k;
      if (recycling->keep_momentum) d.momentum = pick->momentum();
      batch.recycled.push_back(std::move(d));
    }
    batch.state_weight = 0.0;
  }

  batch.next = chosen.with_momentum(mass.draw(streams.momentum), mass);
  return batch;
}

}  // namespace

IterationBatch hmc_iteration_standard(const PhasePoint& state, const PathLengthDistribution& plen, double eps,
                                      const TargetDensity& target, const MassMatrix& mass, ChainStreams& streams) {
  return hmc_core(state, plen, eps, target, mass, nullptr, streams);
}

IterationBatch hmc_iteration_recycled(const PhasePoint& state, const PathLengthDistribution& plen, double eps,
                                      const TargetDensity& target, const MassMatrix& mass,
                                      const HmcRecycling& recycling, ChainStreams& streams) {
  return hmc_core(state, plen, eps, target, mass, &recycling, streams);
}

}  // namespace rehmc
