#include "rehmc/chain.hpp"

#include <cmath>

namespace rehmc {

double kernel_epsilon(const KernelSpec& kernel) {
  return std::visit([](const auto& k) { return k.eps; }, kernel);
}

KernelSpec with_epsilon(KernelSpec kernel, double eps) {
  std::visit([eps](auto& k) { k.eps = eps; }, kernel);
  if (auto* h = std::get_if<HmcKernel>(&kernel)) h->path_length = h->path_length.with_step(eps);
  return kernel;
}

bool kernel_recycles(const KernelSpec& kernel) {
  if (const auto* h = std::get_if<HmcKernel>(&kernel)) return h->recycling.has_value();
  if (const auto* n = std::get_if<NutsKernel>(&kernel)) return n->strategy.kind != RecycleStrategy::Kind::None;
  return true;
}

KernelSpec without_recycling(KernelSpec kernel) {
  if (auto* h = std::get_if<HmcKernel>(&kernel)) h->recycling.reset();
  if (auto* n = std::get_if<NutsKernel>(&kernel)) n->strategy = RecycleStrategy::none();
  return kernel;
}

IterationBatch transition(const KernelSpec& kernel, const PhasePoint& state, const TargetDensity& target,
                          const MassMatrix& mass, ChainStreams& streams) {
  if (const auto* h = std::get_if<HmcKernel>(&kernel)) {
    if (h->recycling) {
      return hmc_iteration_recycled(state, h->path_length, h->eps, target, mass, *h->recycling, streams);
    }
    return hmc_iteration_standard(state, h->path_length, h->eps, target, mass, streams);
  }
  if (const auto* n = std::get_if<NutsKernel>(&kernel)) {
    return nuts_iteration(state, n->eps, target, mass, n->max_depth, n->strategy, streams);
  }
  const auto& c = std::get<CalderheadKernel>(kernel);
  CalderheadResult r = calderhead_iteration(state, c.k, c.eps, target, mass, streams);
  if (c.rao_blackwell) r.batch.recycled = calderhead_rao_blackwell(r.window);
  return std::move(r.batch);
}

PhasePoint initial_state(const TargetDensity& target, const MassMatrix& mass, const Vector& theta0, Rng& rng) {
  if (theta0.size() != target.dim()) throw ConfigError("initial state: dimension mismatch");
  Vector grad(theta0.size());
  double lt = 0.0;
  try {
    lt = target.evaluate(theta0, grad);
  } catch (const DomainError& e) {
    throw DomainError(std::string("initial state: ") + e.what());
  }
  if (!std::isfinite(lt) || !grad.allFinite()) throw DomainError("initial state: non-finite log density");
  return PhasePoint::from_evaluated(theta0, mass.draw(rng), lt, std::move(grad), mass);
}

ChainOutput continue_chain(const TargetDensity& target, const MassMatrix& mass, PhasePoint state,
                           const KernelSpec& kernel, const ChainOptions& options, ChainStreams& streams,
                           const ChainObserver& observer) {
  if (options.iterations < 1) throw ConfigError("run_chain: iterations must be at least 1");
  if (options.burn_in < 0) throw ConfigError("run_chain: burn-in must be nonnegative");
  if (!(kernel_epsilon(kernel) > 0.0)) throw ConfigError("run_chain: stepsize must be positive");
  ChainOutput out;
  if (options.keep_batches) out.batches.reserve(static_cast<std::size_t>(options.iterations));
  const long total = options.burn_in + options.iterations;
  for (long i = 0; i < total; ++i) {
    IterationBatch batch = transition(kernel, state, target, mass, streams);
    const bool burn = i < options.burn_in;
    for (auto& d : batch.recycled) d.iteration = i;
    out.gradient_evaluations += batch.diagnostics.gradient_evaluations;
    if (batch.diagnostics.divergent) ++out.divergences;
    if (observer) observer(i, burn, batch);
    state = batch.next;
    if (!burn && options.keep_batches) out.batches.push_back(std::move(batch));
  }
  out.final_state = std::move(state);
  return out;
}

ChainOutput run_chain(const TargetDensity& target, const MassMatrix& mass, const Vector& theta0,
                      const KernelSpec& kernel, const ChainOptions& options, std::uint64_t seed,
                      const ChainObserver& observer) {
  ChainStreams streams = ChainStreams::from_seed(seed);
  PhasePoint state = initial_state(target, mass, theta0, streams.momentum);
  return continue_chain(target, mass, std::move(state), kernel, options, streams, observer);
}

}  // namespace rehmc
