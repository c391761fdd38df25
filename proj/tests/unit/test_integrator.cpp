#include "doctest.h"
#include "test_support.hpp"

using namespace rehmc;
using testing::vec;

namespace {

double max_energy_error(const PhasePoint& z0, double eps, int steps, const TargetDensity& t, const MassMatrix& m) {
  double worst = 0.0;
  for (const auto& z : simulate_trajectory(z0, eps, steps, t, m)) worst = std::max(worst, std::abs(z.energy() - z0.energy()));
  return worst;
}

}  // namespace

TEST_SUITE("integrator") {

TEST_CASE("fixed point at the mode") {
  auto t = testing::standard_normal_1d();
  auto id = MassMatrix::identity(1);
  auto z = PhasePoint::make(vec({0.0}), vec({0.0}), *t, id);
  for (double eps : {0.1, 1.0, 7.0}) {
    auto n = leapfrog_step(z, eps, *t, id);
    CHECK(n.theta()[0] == 0.0);
    CHECK(n.momentum()[0] == 0.0);
  }
}

TEST_CASE("one step hand values") {
  auto t = testing::standard_normal_1d();
  auto id = MassMatrix::identity(1);
  auto n = leapfrog_step(PhasePoint::make(vec({1.0}), vec({0.0}), *t, id), 0.1, *t, id);
  CHECK(n.theta()[0] == doctest::Approx(0.995).epsilon(1e-15));
  CHECK(n.momentum()[0] == doctest::Approx(-0.09975).epsilon(1e-15));
}

TEST_CASE("zero step is the identity") {
  auto t = make_gaussian(GaussianSpec::iid(2));
  auto id = MassMatrix::identity(2);
  auto z = PhasePoint::make(vec({0.3, -1.0}), vec({0.5, 2.0}), *t, id);
  auto n = leapfrog_step(z, 0.0, *t, id);
  CHECK(n.theta() == z.theta());
  CHECK(n.momentum() == z.momentum());
}

TEST_CASE("one-step trajectory equals a single step") {
  auto t = testing::standard_normal_1d();
  auto id = MassMatrix::identity(1);
  auto z = PhasePoint::make(vec({0.4}), vec({-1.2}), *t, id);
  auto traj = simulate_trajectory(z, 0.3, 1, *t, id);
  REQUIRE(traj.size() == 1);
  auto one = leapfrog_step(z, 0.3, *t, id);
  CHECK(traj[0].theta() == one.theta());
  CHECK(traj[0].momentum() == one.momentum());
}

TEST_CASE("harmonic flow over a quarter period") {
  auto t = testing::standard_normal_1d();
  auto id = MassMatrix::identity(1);
  const double th0 = 0.8;
  const double p0 = -0.3;
  auto z = PhasePoint::make(vec({th0}), vec({p0}), *t, id);
  const double eps = 0.01;
  auto traj = simulate_trajectory(z, eps, 157, *t, id);
  const double time = 157 * eps;
  const double exact_th = th0 * std::cos(time) + p0 * std::sin(time);
  const double exact_p = -th0 * std::sin(time) + p0 * std::cos(time);
  CHECK(std::abs(traj.back().theta()[0] - exact_th) < 1e-3);
  CHECK(std::abs(traj.back().momentum()[0] - exact_p) < 1e-3);
  CHECK(std::abs(traj.back().theta()[0] - p0) < 2e-3);
  CHECK(std::abs(traj.back().momentum()[0] + th0) < 2e-3);
}

TEST_CASE("energy error scales with the square of the stepsize") {
  auto t = make_gaussian(GaussianSpec::diagonal(vec({1.0, 2.0, 0.5, 3.0, 1.5})));
  auto id = MassMatrix::identity(5);
  auto z = PhasePoint::make(vec({1.0, -0.5, 0.3, 2.0, -1.0}), vec({0.4, 1.0, -0.7, 0.2, 0.5}), *t, id);
  const double coarse = max_energy_error(z, 0.2, 10, *t, id);
  const double fine = max_energy_error(z, 0.1, 20, *t, id);
  const double ratio = coarse / fine;
  CHECK(ratio >= 3.2);
  CHECK(ratio <= 4.8);
}

TEST_CASE("reversibility under momentum flip") {
  Matrix c(3, 3);
  c << 2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 1.5;
  auto t = make_gaussian(GaussianSpec::dense(c));
  auto mass = MassMatrix::diagonal(vec({1.0, 2.0, 0.5}));
  Rng rng(8);
  for (int k : {1, 10, 100}) {
    auto z0 = PhasePoint::make(vec({1.0, -0.5, 0.3}), mass.draw(rng), *t, mass);
    auto fwd = simulate_trajectory(z0, 0.15, k, *t, mass);
    auto flipped = fwd.back().with_momentum(-fwd.back().momentum(), mass);
    auto back = simulate_trajectory(flipped, 0.15, k, *t, mass);
    CHECK((back.back().theta() - z0.theta()).norm() / z0.theta().norm() <= 1e-9);
    CHECK((back.back().momentum() + z0.momentum()).norm() <= 1e-9 * std::max(1.0, z0.momentum().norm()));
  }
}

TEST_CASE("negative stepsize integrates backward") {
  auto t = testing::standard_normal_1d();
  auto id = MassMatrix::identity(1);
  auto z = PhasePoint::make(vec({0.6}), vec({0.9}), *t, id);
  auto back = leapfrog_step(leapfrog_step(z, 0.2, *t, id), -0.2, *t, id);
  CHECK(back.theta()[0] == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(back.momentum()[0] == doctest::Approx(0.9).epsilon(1e-14));
}

TEST_CASE("one-dimensional linear map has unit determinant") {
  auto t = testing::standard_normal_1d();
  auto id = MassMatrix::identity(1);
  const double eps = 0.37;
  auto col = [&](double th, double p) {
    auto n = leapfrog_step(PhasePoint::make(vec({th}), vec({p}), *t, id), eps, *t, id);
    return std::pair{n.theta()[0], n.momentum()[0]};
  };
  const auto [a, c] = col(1.0, 0.0);
  const auto [b, d] = col(0.0, 1.0);
  CHECK(std::abs(a * d - b * c - 1.0) <= 1e-12);
  // Closed-form entries of the map.
  CHECK(a == doctest::Approx(1 - eps * eps / 2));
  CHECK(b == doctest::Approx(eps));
  CHECK(c == doctest::Approx(-eps * (1 - eps * eps / 4)));
}

TEST_CASE("one gradient evaluation per step") {
  auto counting = std::make_shared<testing::CountingTarget>(make_gaussian(GaussianSpec::iid(3)));
  auto id = MassMatrix::identity(3);
  auto z = PhasePoint::make(vec({1.0, 0.0, -1.0}), vec({0.0, 1.0, 0.5}), *counting, id);
  counting->reset();
  simulate_trajectory(z, 0.1, 25, *counting, id);
  CHECK(counting->count() == 25);
}

TEST_CASE("divergence is reported with the step index") {
  FunctionTarget cliff(1, [](const Vector& x, Vector& g) {
    g = -x;
    if (std::abs(x[0]) > 1.0) return -std::numeric_limits<double>::infinity();
    return -0.5 * x.squaredNorm();
  });
  auto id = MassMatrix::identity(1);
  auto z = PhasePoint::make(vec({0.0}), vec({1.0}), cliff, id);
  CHECK(try_leapfrog_step(z, 0.1, cliff, id).has_value());
  CHECK_FALSE(try_leapfrog_step(z, 5.0, cliff, id).has_value());
  try {
    simulate_trajectory(z, 0.3, 20, cliff, id);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() >= 2);
    CHECK(std::abs(e.theta()[0]) > 1.0);
  }
  auto prefix = simulate_prefix(z, 0.3, 20, cliff, id);
  CHECK(prefix.diverged);
  CHECK(prefix.points.size() < 20);
  CHECK_THROWS_AS(LeapfrogConfig(0.0), ConfigError);
}

}
