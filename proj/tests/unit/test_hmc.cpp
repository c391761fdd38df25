#include <map>

#include "doctest.h"
#include "test_support.hpp"

using namespace rehmc;
using testing::vec;

namespace {

// log pi = slope * theta with the gradient reported as zero, so the drift is
// ballistic and the log-ratio is slope * eps * L * p.
std::shared_ptr<FunctionTarget> tilted(double slope) {
  return std::make_shared<FunctionTarget>(1, [slope](const Vector& x, Vector& g) {
    g.setZero();
    return slope * x[0];
  });
}

struct Moments {
  double mean;
  double mean_se;
  double var;
  double var_se;
};

Moments chain_moments(const std::vector<double>& x) {
  std::vector<double> sq;
  for (double v : x) sq.push_back(v * v);
  return {testing::mean_of(x), testing::batch_means_se(x), testing::mean_of(sq), testing::batch_means_se(sq)};
}

}  // namespace

TEST_SUITE("hmc") {

TEST_CASE("acceptance probability hand values") {
  CHECK(accept_probability(-2.0, -2.0) == 1.0);
  CHECK(accept_probability(0.0, 3.2) == 1.0);
  CHECK(accept_probability(0.0, -1.0) == doctest::Approx(0.367879).epsilon(1e-6));
  CHECK(accept_probability(0.0, -std::numeric_limits<double>::infinity()) == 0.0);
  CHECK(accept_probability(0.0, std::nan("")) == 0.0);
}

TEST_CASE("metropolis test consumes exactly one uniform") {
  Rng a(5);
  Rng b(5);
  metropolis_accept(-std::numeric_limits<double>::infinity(), a);
  uniform01(b);
  CHECK(a() == b());
  Rng c(1);
  CHECK(metropolis_accept(0.0, c));
}

TEST_CASE("path length distributions") {
  Rng rng(2);
  CHECK(PathLengthDistribution::fixed(7).sample(rng) == 7);
  CHECK(PathLengthDistribution::fixed(7).max_steps() == 7);
  auto u = PathLengthDistribution::uniform(4, 6);
  std::map<int, int> counts;
  for (int i = 0; i < 30000; ++i) ++counts[u.sample(rng)];
  CHECK(counts.size() == 3);
  CHECK(testing::chi_square_pvalue({counts[4], counts[5], counts[6]}, {1. / 3, 1. / 3, 1. / 3}) > 1e-3);
  CHECK(u.max_steps() == 6);

  auto j = PathLengthDistribution::time_jitter(1.0, 2.0, 0.1);
  for (int i = 0; i < 1000; ++i) {
    const int s = j.sample(rng);
    CHECK(s >= 10);
    CHECK(s <= 20);
  }
  CHECK(j.max_steps() == 20);
  CHECK(j.with_step(0.5).max_steps() == 4);
  CHECK(u.with_step(0.5).max_steps() == 6);
  CHECK(PathLengthDistribution::time_jitter(0.01, 0.02, 1.0).sample(rng) == 1);

  CHECK_THROWS_AS(PathLengthDistribution::fixed(0), ConfigError);
  CHECK_THROWS_AS(PathLengthDistribution::uniform(5, 4), ConfigError);
  CHECK_THROWS_AS(PathLengthDistribution::time_jitter(1.0, 0.5, 0.1), ConfigError);
}

TEST_CASE("subset schemes") {
  Rng rng(3);
  CHECK(SubsetScheme::all().select(4, rng) == std::vector<int>{1, 2, 3, 4});
  CHECK(SubsetScheme::strided(2).select(5, rng) == std::vector<int>{1, 3, 5});
  CHECK(SubsetScheme::strided(4).select(8, rng) == std::vector<int>{4, 8});
  CHECK(SubsetScheme::random(10).select(3, rng) == std::vector<int>{1, 2, 3});
  CHECK(SubsetScheme::all().select(0, rng).empty());
  CHECK_THROWS_AS(SubsetScheme::strided(3), ConfigError);
  CHECK_THROWS_AS(SubsetScheme::random(0), ConfigError);

  std::vector<long> counts(6, 0);
  const int trials = 60000;
  for (int i = 0; i < trials; ++i) {
    auto s = SubsetScheme::random(2).select(6, rng);
    REQUIRE(s.size() == 2);
    REQUIRE(s[0] < s[1]);
    for (int k : s) ++counts[static_cast<std::size_t>(k - 1)];
  }
  // Each slot is included with probability 1/3; check the marginal counts.
  for (long c : counts) CHECK(testing::binomial_pvalue(c, trials, 1.0 / 3.0) > 1e-3);
}

TEST_CASE("uphill proposal is accepted") {
  auto t = tilted(1.0);
  auto id = MassMatrix::identity(1);
  auto z = PhasePoint::make(vec({0.0}), vec({1.0}), *t, id);
  auto streams = ChainStreams::from_seed(1);
  auto b = hmc_iteration_standard(z, PathLengthDistribution::fixed(5), 0.1, *t, id, streams);
  CHECK(b.diagnostics.accepted);
  CHECK(b.diagnostics.accept_stat == 1.0);
  CHECK(b.next.theta()[0] == doctest::Approx(0.5));
  CHECK(b.diagnostics.gradient_evaluations == 5);
}

TEST_CASE("divergent proposal is rejected and the momentum refreshed") {
  FunctionTarget cliff(1, [](const Vector& x, Vector& g) {
    g = -x;
    if (std::abs(x[0]) > 0.5) return -std::numeric_limits<double>::infinity();
    return -0.5 * x.squaredNorm();
  });
  auto id = MassMatrix::identity(1);
  auto z = PhasePoint::make(vec({0.2}), vec({3.0}), cliff, id);
  auto streams = ChainStreams::from_seed(2);
  auto b = hmc_iteration_standard(z, PathLengthDistribution::fixed(5), 0.2, cliff, id, streams);
  CHECK_FALSE(b.diagnostics.accepted);
  CHECK(b.diagnostics.divergent);
  CHECK(b.diagnostics.accept_stat == 0.0);
  CHECK(b.next.theta()[0] == 0.2);
  CHECK(b.next.momentum()[0] != 3.0);
}

TEST_CASE("single step accepted yields one recycled draw at the next state") {
  auto t = tilted(1.0);
  auto id = MassMatrix::identity(1);
  auto z = PhasePoint::make(vec({0.0}), vec({1.0}), *t, id);
  auto streams = ChainStreams::from_seed(3);
  auto b = hmc_iteration_recycled(z, PathLengthDistribution::fixed(1), 0.1, *t, id, HmcRecycling{}, streams);
  REQUIRE(b.recycled.size() == 1);
  CHECK(b.recycled[0].theta == b.next.theta());
  CHECK(b.recycled[0].slot == 1);
  CHECK(b.state_weight == 0.0);
}

TEST_CASE("all proposals rejected recycles the current state") {
  auto t = tilted(-200.0);
  auto id = MassMatrix::identity(1);
  auto z = PhasePoint::make(vec({0.0}), vec({1.0}), *t, id);
  auto streams = ChainStreams::from_seed(4);
  auto b = hmc_iteration_recycled(z, PathLengthDistribution::fixed(6), 0.1, *t, id, HmcRecycling{}, streams);
  REQUIRE(b.recycled.size() == 6);
  for (const auto& d : b.recycled) CHECK(d.theta[0] == 0.0);
  CHECK(b.next.theta()[0] == 0.0);
}

TEST_CASE("full-trajectory mode recycles every slot up to the maximum") {
  auto t = testing::standard_normal_1d();
  auto id = MassMatrix::identity(1);
  auto z = PhasePoint::make(vec({0.3}), vec({0.5}), *t, id);
  HmcRecycling full{RecycleMode::FullTrajectory, SubsetScheme::all(), true};
  auto streams = ChainStreams::from_seed(5);
  auto b = hmc_iteration_recycled(z, PathLengthDistribution::uniform(2, 9), 0.2, *t, id, full, streams);
  CHECK(b.recycled.size() == 9);
  CHECK(b.diagnostics.gradient_evaluations == 9);
  CHECK(b.recycled[0].momentum.size() == 1);
}

TEST_CASE("recycling never changes the next-state stream") {
  auto t = make_gaussian(GaussianSpec::correlated_pair(0.9));
  auto id = MassMatrix::identity(2);
  auto plen = PathLengthDistribution::uniform(4, 6);
  HmcRecycling rec{RecycleMode::SampledLength, SubsetScheme::random(2), false};
  for (auto mode : {RecycleMode::SampledLength, RecycleMode::FullTrajectory}) {
    rec.mode = mode;
    auto a = ChainStreams::from_seed(9);
    auto b = ChainStreams::from_seed(9);
    Rng init(1);
    auto za = initial_state(*t, id, vec({0.5, 0.1}), init);
    auto zb = za;
    for (int i = 0; i < 500; ++i) {
      za = hmc_iteration_standard(za, plen, 0.486, *t, id, a).next;
      zb = hmc_iteration_recycled(zb, plen, 0.486, *t, id, rec, b).next;
      REQUIRE(za.theta() == zb.theta());
      REQUIRE(za.momentum() == zb.momentum());
    }
  }
}

TEST_CASE("standard hmc is stationary on the 1D gaussian") {
  auto t = testing::standard_normal_1d();
  HmcKernel k{0.1, PathLengthDistribution::fixed(10), std::nullopt};
  ChainOptions opt{100000, 0, false};
  std::vector<double> xs;
  xs.reserve(100000);
  Rng rng(2);
  const Vector start = vec({standard_normal(rng)});
  run_chain(*t, MassMatrix::identity(1), start, k, opt, 77,
            [&](long, bool, const IterationBatch& b) { xs.push_back(b.next.theta()[0]); });
  const auto m = chain_moments(xs);
  CHECK(std::abs(m.mean) < 4 * m.mean_se);
  CHECK(std::abs(m.var - 1.0) < 4 * m.var_se);
}

TEST_CASE("recycled hmc pooled draws are stationary on the 1D gaussian") {
  auto t = testing::standard_normal_1d();
  HmcKernel k{0.3, PathLengthDistribution::uniform(3, 8), HmcRecycling{}};
  std::vector<double> per_iter;
  std::vector<double> per_iter_sq;
  Rng rng(3);
  run_chain(*t, MassMatrix::identity(1), vec({standard_normal(rng)}), k, ChainOptions{50000, 0, false}, 78,
            [&](long, bool, const IterationBatch& b) {
              double s = 0.0;
              double s2 = 0.0;
              for (const auto& d : b.recycled) {
                s += d.theta[0];
                s2 += d.theta[0] * d.theta[0];
              }
              per_iter.push_back(s / static_cast<double>(b.recycled.size()));
              per_iter_sq.push_back(s2 / static_cast<double>(b.recycled.size()));
            });
  // Per-iteration averages keep the batch-means error honest; slot weights
  // differ across iterations only through L, which is independent of theta.
  CHECK(std::abs(testing::mean_of(per_iter)) < 4 * testing::batch_means_se(per_iter));
  CHECK(std::abs(testing::mean_of(per_iter_sq) - 1.0) < 4 * testing::batch_means_se(per_iter_sq));
}

}
