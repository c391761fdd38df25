#pragma once

#include <cstdint>
#include <random>

namespace rehmc {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to expand a master seed into stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives a seed for (master, a, b). Distinct tuples give distinct,
/// well-mixed seeds.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

double uniform01(Rng& rng);
double standard_normal(Rng& rng);
double standard_exponential(Rng& rng);

/// Independent random streams owned by one chain.
///
/// The momentum/path-length stream and the endpoint-acceptance stream fully
/// determine the next-state sequence; recycling and subset selection draw from
/// their own streams so that enabling recycling never perturbs the chain.
struct ChainStreams {
  Rng momentum;
  Rng accept;
  Rng recycle;
  Rng subset;

  static ChainStreams from_seed(std::uint64_t seed);
};

}  // namespace rehmc
