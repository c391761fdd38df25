#include "rehmc/nuts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rehmc/hmc.hpp"

namespace rehmc {

SliceVariable draw_slice(const PhasePoint& z0, Rng& rng) {
  return SliceVariable{z0.log_joint() - standard_exponential(rng)};
}

bool uturn(const Vector& theta_minus, const Vector& p_minus, const Vector& theta_plus, const Vector& p_plus,
           const MassMatrix& mass) {
  const Vector span = theta_plus - theta_minus;
  return span.dot(mass.apply_inverse(p_minus)) < 0.0 || span.dot(mass.apply_inverse(p_plus)) < 0.0;
}

bool uturn(const PhasePoint& left, const PhasePoint& right, const MassMatrix& mass) {
  return uturn(left.theta(), left.momentum(), right.theta(), right.momentum(), mass);
}

RecycleStrategy RecycleStrategy::simple(int k) {
  if (k < 1) throw ConfigError("recycle strategy: K must be at least 1");
  return {Kind::Simple, k};
}

RecycleStrategy RecycleStrategy::evenly_spread(int k) {
  if (k < 1) throw ConfigError("recycle strategy: K must be at least 1");
  return {Kind::EvenlySpread, k};
}

namespace {

AcceptSummary leaf_summary(const PointRef& point, bool acceptable, const RecycleStrategy& strategy) {
  AcceptSummary out;
  out.states = 1;
  out.acceptable = acceptable ? 1 : 0;
  if (acceptable) out.candidate = point;
  switch (strategy.kind) {
    case RecycleStrategy::Kind::None:
      break;
    case RecycleStrategy::Kind::Simple:
    case RecycleStrategy::Kind::RaoBlackwell:
      if (acceptable) out.reservoir.push_back(point);
      break;
    case RecycleStrategy::Kind::EvenlySpread:
      if (acceptable) out.reservoir.assign(static_cast<std::size_t>(strategy.k), point);
      break;
    case RecycleStrategy::Kind::NaiveAll:
      out.reservoir.push_back(point);
      break;
  }
  return out;
}

// Keeps a uniformly random subset of m elements.
void subsample(std::vector<PointRef>& items, std::size_t m, Rng& rng) {
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
  items.resize(m);
}

// Both inputs are without-replacement samples of min(k, n) states from their
// subtrees. The split is hypergeometric, so the result is a without-replacement
// sample of min(k, na + nb) states from the union.
std::vector<PointRef> merge_without_replacement(std::vector<PointRef> a, long na, std::vector<PointRef> b, long nb,
                                                int k, Rng& rng) {
  const long total = std::min<long>(k, na + nb);
  long remaining_a = na;
  long remaining_b = nb;
  long from_a = 0;
  for (long i = 0; i < total; ++i) {
    if (uniform01(rng) * static_cast<double>(remaining_a + remaining_b) < static_cast<double>(remaining_a)) {
      ++from_a;
      --remaining_a;
    } else {
      --remaining_b;
    }
  }
  subsample(a, static_cast<std::size_t>(from_a), rng);
  subsample(b, static_cast<std::size_t>(total - from_a), rng);
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Each input is an ordered list of K slots whose length-m prefix is a draw of
// the recursive allocation with budget m. One uniform per node gives
// n(m) = floor(m a'/(a'+a'') + u), which is nondecreasing in m with unit
// increments, so the parent list keeps the same prefix property.
std::vector<PointRef> merge_evenly(const std::vector<PointRef>& left, long n_left, const std::vector<PointRef>& right,
                                   long n_right, int k, Rng& rng) {
  if (n_left == 0) return right;
  if (n_right == 0) return left;
  const long total = n_left + n_right;
  const double u_scaled = uniform01(rng) * static_cast<double>(total);
  std::vector<PointRef> out;
  out.reserve(static_cast<std::size_t>(k));
  std::size_t il = 0;
  std::size_t ir = 0;
  long taken_left = 0;
  for (long m = 1; m <= k; ++m) {
    const long whole = (m * n_left) / total;
    const long rem = (m * n_left) % total;
    const long n_m = whole + (u_scaled >= static_cast<double>(total - rem) ? 1 : 0);
    if (n_m > taken_left) {
      out.push_back(left[il++]);
      taken_left = n_m;
    } else {
      out.push_back(right[ir++]);
    }
  }
  return out;
}

// `older` was built first; `newer` extends it on the right when newer_is_right.
AcceptSummary merge_summaries(AcceptSummary older, AcceptSummary newer, bool newer_is_right,
                              const RecycleStrategy& strategy, NutsRngs rngs) {
  AcceptSummary out;
  out.acceptable = older.acceptable + newer.acceptable;
  out.states = older.states + newer.states;

  out.candidate = older.candidate;
  if (newer.acceptable > 0) {
    if (older.acceptable == 0) {
      out.candidate = newer.candidate;
    } else if (uniform01(rngs.selection) * static_cast<double>(out.acceptable) <
               static_cast<double>(newer.acceptable)) {
      out.candidate = newer.candidate;
    }
  }

  AcceptSummary& left = newer_is_right ? older : newer;
  AcceptSummary& right = newer_is_right ? newer : older;
  switch (strategy.kind) {
    case RecycleStrategy::Kind::None:
      break;
    case RecycleStrategy::Kind::Simple:
      out.reservoir = merge_without_replacement(std::move(left.reservoir), left.acceptable,
                                                std::move(right.reservoir), right.acceptable, strategy.k, rngs.recycle);
      break;
    case RecycleStrategy::Kind::EvenlySpread:
      out.reservoir = merge_evenly(left.reservoir, left.acceptable, right.reservoir, right.acceptable, strategy.k,
                                   rngs.recycle);
      break;
    case RecycleStrategy::Kind::RaoBlackwell:
    case RecycleStrategy::Kind::NaiveAll:
      out.reservoir = std::move(left.reservoir);
      out.reservoir.insert(out.reservoir.end(), right.reservoir.begin(), right.reservoir.end());
      break;
  }
  return out;
}

// Appends `newer` to `older` along `direction`.
void join_trees(NutsTree& older, NutsTree&& newer, int direction, const RecycleStrategy& strategy, NutsRngs rngs) {
  const bool newer_is_right = direction > 0;
  older.summary = merge_summaries(std::move(older.summary), std::move(newer.summary), newer_is_right, strategy, rngs);
  if (newer_is_right) {
    older.rightmost = std::move(newer.rightmost);
  } else {
    older.leftmost = std::move(newer.leftmost);
  }
  older.steps += newer.steps;
  older.accept_sum += newer.accept_sum;
  older.max_energy_error = std::max(older.max_energy_error, newer.max_energy_error);
  older.depth += 1;
}

}  // namespace

NutsTree build_tree(const PhasePoint& z, const SliceVariable& slice, int direction, int depth, double eps,
                    const TargetDensity& target, const MassMatrix& mass, const RecycleStrategy& strategy,
                    double log_joint0, NutsRngs rngs) {
  if (depth < 0) throw ConfigError("build_tree: depth must be nonnegative");
  if (depth == 0) {
    NutsTree leaf;
    leaf.steps = 1;
    auto next = try_leapfrog_step(z, static_cast<double>(direction) * eps, target, mass);
    if (!next) {
      leaf.terminated = true;
      leaf.diverged = true;
      leaf.max_energy_error = std::numeric_limits<double>::infinity();
      return leaf;
    }
    auto point = std::make_shared<const PhasePoint>(std::move(*next));
    const double log_joint = point->log_joint();
    leaf.accept_sum = accept_probability(log_joint0, log_joint);
    leaf.max_energy_error = std::abs(log_joint - log_joint0);
    if (log_joint0 - log_joint > kMaxEnergyError) {
      leaf.terminated = true;
      leaf.diverged = true;
    }
    leaf.summary = leaf_summary(point, log_joint > slice.log_u, strategy);
    leaf.leftmost = point;
    leaf.rightmost = point;
    return leaf;
  }

  NutsTree first = build_tree(z, slice, direction, depth - 1, eps, target, mass, strategy, log_joint0, rngs);
  if (first.terminated) return first;
  const PhasePoint& outer = direction > 0 ? *first.rightmost : *first.leftmost;
  NutsTree second = build_tree(outer, slice, direction, depth - 1, eps, target, mass, strategy, log_joint0, rngs);
  if (second.terminated) {
    first.steps += second.steps;
    first.accept_sum += second.accept_sum;
    first.max_energy_error = std::max(first.max_energy_error, second.max_energy_error);
    first.terminated = true;
    first.diverged = second.diverged;
    return first;
  }
  join_trees(first, std::move(second), direction, strategy, rngs);
  if (uturn(*first.leftmost, *first.rightmost, mass)) first.terminated = true;
  return first;
}

IterationBatch nuts_iteration(const PhasePoint& state, double eps, const TargetDensity& target,
                              const MassMatrix& mass, int max_depth, const RecycleStrategy& strategy,
                              ChainStreams& streams) {
  if (max_depth < 1) throw ConfigError("nuts: max_depth must be at least 1");
  NutsRngs rngs{streams.accept, streams.recycle};
  const SliceVariable slice = draw_slice(state, streams.accept);
  const double log_joint0 = state.log_joint();

  auto start = std::make_shared<const PhasePoint>(state);
  NutsTree tree;
  tree.leftmost = start;
  tree.rightmost = start;
  tree.summary = leaf_summary(start, true, strategy);

  IterationBatch batch;
  auto& diag = batch.diagnostics;
  long steps = 0;
  double accept_sum = 0.0;
  int depth = 0;
  for (int j = 0; j < max_depth; ++j) {
    const int direction = uniform01(streams.accept) < 0.5 ? -1 : 1;
    const PhasePoint& from = direction > 0 ? *tree.rightmost : *tree.leftmost;
    NutsTree sub = build_tree(from, slice, direction, j, eps, target, mass, strategy, log_joint0, rngs);
    steps += sub.steps;
    accept_sum += sub.accept_sum;
    diag.max_energy_error = std::max(diag.max_energy_error, sub.max_energy_error);
    depth = j + 1;
    if (sub.terminated) {
      diag.divergent = sub.diverged;
      break;
    }
    join_trees(tree, std::move(sub), direction, strategy, rngs);
    if (uturn(*tree.leftmost, *tree.rightmost, mass)) break;
    if (j == max_depth - 1) diag.max_depth_reached = true;
  }

  diag.steps = static_cast<int>(steps);
  diag.gradient_evaluations = steps;
  diag.accept_stat = steps > 0 ? accept_sum / static_cast<double>(steps) : 0.0;
  diag.tree_depth = depth;
  diag.acceptable_states = tree.summary.acceptable;
  diag.accepted = tree.summary.candidate.get() != start.get();

  auto emit = [&batch](const std::vector<PointRef>& refs, double weight) {
    batch.recycled.reserve(refs.size());
    int slot = 0;
    for (const auto& r : refs) {
      RecycledDraw d;
      d.theta = r->theta();
      d.weight = weight;
      d.slot = ++slot;
      batch.recycled.push_back(std::move(d));
    }
  };
  auto& res = tree.summary.reservoir;
  if (strategy.kind == RecycleStrategy::Kind::Simple || strategy.kind == RecycleStrategy::Kind::EvenlySpread) {
    // Random slot labels make each slot a single uniform draw from A.
    subsample(res, res.size(), streams.recycle);
  }
  switch (strategy.kind) {
    case RecycleStrategy::Kind::None:
      break;
    case RecycleStrategy::Kind::Simple:
      emit(res, static_cast<double>(strategy.k) / static_cast<double>(res.size()));
      break;
    case RecycleStrategy::Kind::EvenlySpread:
      emit(res, 1.0);
      break;
    case RecycleStrategy::Kind::RaoBlackwell:
    case RecycleStrategy::Kind::NaiveAll:
      emit(res, 1.0 / static_cast<double>(res.size()));
      batch.state_weight = 0.0;
      break;
  }

  batch.next = tree.summary.candidate->with_momentum(mass.draw(streams.momentum), mass);
  return batch;
}

// ---------------------------------------------------------------------------
// Frozen trees

FrozenTree FrozenTree::from_slice(std::vector<PhasePoint> leaves, const SliceVariable& slice) {
  FrozenTree t;
  for (const auto& z : leaves) t.acceptable.push_back(z.log_joint() > slice.log_u);
  t.leaves = std::move(leaves);
  return t;
}

long FrozenTree::acceptable_count() const {
  return static_cast<long>(std::count(acceptable.begin(), acceptable.end(), true));
}

namespace {

AcceptSummary reduce_frozen(const FrozenTree& tree, const RecycleStrategy& strategy, Rng& rng) {
  const std::size_t n = tree.leaves.size();
  if (n == 0 || (n & (n - 1)) != 0 || tree.acceptable.size() != n) {
    throw ConfigError("frozen tree: leaf count must be a power of two with one flag per leaf");
  }
  if (tree.acceptable_count() < 1) throw ConfigError("frozen tree: at least one acceptable state is required");
  std::vector<AcceptSummary> level;
  level.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    level.push_back(leaf_summary(std::make_shared<const PhasePoint>(tree.leaves[i]), tree.acceptable[i], strategy));
  }
  NutsRngs rngs{rng, rng};
  while (level.size() > 1) {
    std::vector<AcceptSummary> up;
    up.reserve(level.size() / 2);
    for (std::size_t i = 0; i < level.size(); i += 2) {
      up.push_back(merge_summaries(std::move(level[i]), std::move(level[i + 1]), true, strategy, rngs));
    }
    level = std::move(up);
  }
  return std::move(level.front());
}

std::vector<RecycledDraw> to_draws(const std::vector<PointRef>& refs) {
  std::vector<RecycledDraw> out;
  int slot = 0;
  for (const auto& r : refs) {
    RecycledDraw d;
    d.theta = r->theta();
    d.slot = ++slot;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

std::vector<RecycledDraw> recycle_evenly(const FrozenTree& tree, int k, Rng& rng) {
  return to_draws(reduce_frozen(tree, RecycleStrategy::evenly_spread(k), rng).reservoir);
}

PhasePoint select_uniform(const FrozenTree& tree, Rng& rng) {
  return *reduce_frozen(tree, RecycleStrategy::none(), rng).candidate;
}

std::vector<RecycledDraw> recycle_simple(const FrozenTree& tree, int k, Rng& rng) {
  return to_draws(reduce_frozen(tree, RecycleStrategy::simple(k), rng).reservoir);
}

}  // namespace rehmc
