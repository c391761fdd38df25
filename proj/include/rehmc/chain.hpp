#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "rehmc/baseline.hpp"
#include "rehmc/hmc.hpp"
#include "rehmc/nuts.hpp"

namespace rehmc {

using MassPtr = std::shared_ptr<const MassMatrix>;

struct HmcKernel {
  double eps = 0.1;
  PathLengthDistribution path_length;
  std::optional<HmcRecycling> recycling;
};

struct NutsKernel {
  double eps = 0.1;
  int max_depth = 10;
  RecycleStrategy strategy;
};

struct CalderheadKernel {
  double eps = 0.1;
  int k = 1;
  bool rao_blackwell = false;
};

using KernelSpec = std::variant<NutsKernel, HmcKernel, CalderheadKernel>;

/// Stepsize of a kernel spec.
double kernel_epsilon(const KernelSpec& kernel);
KernelSpec with_epsilon(KernelSpec kernel, double eps);
/// True when the kernel emits recycled draws.
bool kernel_recycles(const KernelSpec& kernel);
/// The same kernel with recycling switched off.
KernelSpec without_recycling(KernelSpec kernel);

/// One transition of any supported kernel.
IterationBatch transition(const KernelSpec& kernel, const PhasePoint& state, const TargetDensity& target,
                          const MassMatrix& mass, ChainStreams& streams);

struct ChainOptions {
  long iterations = 1;
  long burn_in = 0;
  bool keep_batches = true;
};

/// Called for every iteration, burn-in included; `iteration` is 0-based and
/// counts burn-in.
using ChainObserver = std::function<void(long iteration, bool burn_in, const IterationBatch& batch)>;

struct ChainOutput {
  /// Post-burn-in batches (empty when keep_batches is false).
  std::vector<IterationBatch> batches;
  long divergences = 0;
  long gradient_evaluations = 0;
  PhasePoint final_state;
};

/// Runs one chain from theta0. The initial momentum is drawn from the
/// momentum stream. Throws DomainError if the initial log density is not finite.
ChainOutput run_chain(const TargetDensity& target, const MassMatrix& mass, const Vector& theta0,
                      const KernelSpec& kernel, const ChainOptions& options, std::uint64_t seed,
                      const ChainObserver& observer = {});

/// Continues a chain from an existing state and streams.
ChainOutput continue_chain(const TargetDensity& target, const MassMatrix& mass, PhasePoint state,
                           const KernelSpec& kernel, const ChainOptions& options, ChainStreams& streams,
                           const ChainObserver& observer = {});

/// Initial phase point with a fresh momentum.
PhasePoint initial_state(const TargetDensity& target, const MassMatrix& mass, const Vector& theta0, Rng& rng);

}  // namespace rehmc
