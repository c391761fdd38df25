#include "rehmc/random.hpp"

namespace rehmc {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(master) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

double uniform01(Rng& rng) {
  // 53 random mantissa bits, in [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist;
  return dist(rng);
}

double standard_exponential(Rng& rng) {
  std::exponential_distribution<double> dist(1.0);
  return dist(rng);
}

ChainStreams ChainStreams::from_seed(std::uint64_t seed) {
  return ChainStreams{Rng(derive_seed(seed, 1)), Rng(derive_seed(seed, 2)),
                      Rng(derive_seed(seed, 3)), Rng(derive_seed(seed, 4))};
}

}  // namespace rehmc
