#include <cmath>
#include <sstream>

#include "doctest.h"
#include "evanflow/integrate.hpp"
#include "oracles.hpp"

using namespace evanflow;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

const Rhs decay = [](const Vector& y, Vector& d) { d = -y; };

IntegratorOptions adaptive(double horizon, double rtol = 1e-9) {
  IntegratorOptions o;
  o.horizon = horizon;
  o.rtol = rtol;
  return o;
}

}  // namespace

TEST_CASE("rk4_fixed closed forms") {
  auto r = rk4_fixed(decay, vec({1}), 1.0, 1e-3);
  CHECK(std::abs(r.ys.back()[0] - std::exp(-1.0)) < 1e-10);
  CHECK(r.times.back() == 1.0);
  CHECK(r.termination == Termination::horizon_reached);

  auto c = rk4_fixed([](const Vector&, Vector& d) { d = Vector::Zero(1); },
                     vec({7}), 3.0, 0.1);
  CHECK(c.ys.back()[0] == 7.0);

  auto lin = rk4_fixed([](const Vector&, Vector& d) { d = Vector::Ones(1); },
                       vec({0}), 2.0, 0.3);
  CHECK(std::abs(lin.ys.back()[0] - 2.0) < 1e-12);
  CHECK(lin.times.back() == 2.0);  // partial last step
  for (std::size_t k = 1; k < lin.times.size(); ++k) {
    CHECK(lin.times[k] > lin.times[k - 1]);
  }
}

TEST_CASE("rk4_fixed is fourth order") {
  const double e1 = std::abs(rk4_fixed(decay, vec({1}), 1.0, 0.1).ys.back()[0] -
                             std::exp(-1.0));
  const double e2 = std::abs(rk4_fixed(decay, vec({1}), 1.0, 0.05).ys.back()[0] -
                             std::exp(-1.0));
  CHECK(e1 / e2 >= 12.0);
  CHECK(e1 / e2 <= 20.0);
}

TEST_CASE("rk4_fixed error paths") {
  auto blow = rk4_fixed(
      [](const Vector& y, Vector& d) { d = Vector::Constant(1, 1e300 * y[0] * y[0]); },
      vec({1e10}), 1.0, 0.1);
  CHECK(blow.termination == Termination::diverged);

  CHECK_THROWS_AS(
      rk4_fixed([](const Vector& y, Vector& d) { d = Vector::Constant(1, std::sqrt(-y[0] - 1)); },
                vec({1}), 1.0, 0.1),
      NumericDomainError);
  CHECK_THROWS_AS(rk4_fixed(decay, vec({1}), 1.0, 0.0), InputError);
}

TEST_CASE("rk_adaptive closed forms") {
  auto r = rk_adaptive(decay, vec({1}), 10.0, 1e-9, 1e-14);
  CHECK(std::abs(r.ys.back()[0] - std::exp(-10.0)) < 1e-12);
  CHECK(r.times.back() == 10.0);

  auto c = rk_adaptive([](const Vector&, Vector& d) { d = Vector::Zero(1); },
                       vec({7}), 5.0, 1e-9, 1e-12);
  CHECK(c.meta.n_rejected == 0);
  CHECK(c.ys.back()[0] == 7.0);

  CHECK_THROWS_AS(rk_adaptive(decay, vec({1}), 1.0, 1e-1, 1e-12), InputError);
  CHECK_THROWS_AS(rk_adaptive(decay, vec({1}), 1.0, 1e-9, 0.0), InputError);
}

TEST_CASE("rk_adaptive reports finite-time blow-up") {
  // y' = y², y(0) = 1 blows up at t = 1.
  auto r = rk_adaptive([](const Vector& y, Vector& d) { d = y.cwiseProduct(y); },
                       vec({1}), 2.0, 1e-9, 1e-12);
  CHECK((r.termination == Termination::step_collapse ||
         r.termination == Termination::diverged));
  CHECK(r.times.back() < 1.0);
}

TEST_CASE("gradient_flow on neg_square diverges") {
  auto pair = make_counterexample(CounterexampleKind::neg_square);
  auto traj = gradient_flow(pair, vec({1}), adaptive(20));
  CHECK(traj.termination == Termination::diverged);
  CHECK(traj.states.back().norm() > 1e6);
  // u(t) = e^{2t} crosses 1e6 at t = ln(1e6)/2 ≈ 6.91
  CHECK(traj.end_time() == doctest::Approx(std::log(1e6) / 2).epsilon(0.01));
}

TEST_CASE("gradient_flow closed forms") {
  auto e = make_example_one();
  auto t1 = gradient_flow(e, vec({0}), adaptive(4));
  CHECK(std::abs(t1.states.back()[0] - oracle::example_one_orbit(4)) < 1e-6);
  CHECK(std::abs(t1.states.back()[0] + 2.0) < 1e-6);

  auto id = make_quadratic(Matrix::Identity(2, 2));
  auto t2 = gradient_flow(id, vec({1, 0}), adaptive(1));
  CHECK((t2.states.back() - vec({std::exp(-1.0), 0})).norm() < 1e-8);

  // Recomputed velocities are exact.
  for (std::size_t k = 0; k < t2.size(); ++k) {
    CHECK((t2.velocities[k] + id.psi.gradient(t2.states[k])).norm() == 0.0);
  }

  auto eq = gradient_flow(id, vec({0, 0}), adaptive(3));
  CHECK(eq.termination == Termination::critical_point_reached);
  CHECK(eq.times.front() == 0.0);
  CHECK(eq.times.back() == 3.0);
  for (const auto& s : eq.states) CHECK(s.norm() == 0.0);
}

TEST_CASE("second_order_flow closed forms") {
  // ψ = −x²: V = 2x², v(t) = e^{2t} from (1, 2).
  auto neg = make_counterexample(CounterexampleKind::neg_square);
  auto t1 = second_order_flow(neg.v, vec({1}), vec({2}), adaptive(2));
  CHECK(std::abs(t1.states.back()[0] / std::exp(4.0) - 1.0) < 1e-4);

  auto half = make_quadratic(Matrix::Identity(1, 1));
  auto t2 = second_order_flow(half.v, vec({1}), vec({-1}), adaptive(3));
  CHECK(std::abs(t2.states.back()[0] - std::exp(-3.0)) < 1e-7);

  auto zero = f_from_id("zero:2");
  auto tz = second_order_flow(zero, vec({1, 2}), vec({0.5, -1}), adaptive(2));
  for (std::size_t k = 0; k < tz.size(); ++k) {
    const Vector expect = vec({1, 2}) + tz.times[k] * vec({0.5, -1});
    CHECK((tz.states[k] - expect).norm() < 1e-12);
  }

  CHECK_THROWS_AS(second_order_flow(half.v, vec({1}), vec({1, 2}), adaptive(1)),
                  InputError);
}

TEST_CASE("first-order orbits solve the second-order system") {
  for (const char* id : {"quadratic:1,0;0,1", "quadratic:1,0;0,2",
                         "quadratic:2,1;1,2", "example_one"}) {
    CAPTURE(id);
    auto pair = potential_from_id(id);
    const Vector x0 = Vector::Ones(pair.psi.dim()) * (pair.psi.dim() == 1 ? 0.0 : 1.0);
    auto opts = adaptive(5, 1e-12);
    auto u = gradient_flow(pair, x0, opts);
    auto v = second_order_flow(pair.v, x0, -pair.psi.gradient(x0), opts);
    CHECK((u.states.back() - v.states.back()).norm() < 1e-6);
  }
}

TEST_CASE("first integral drift of second_order_flow is small") {
  for (const char* id : {"quadratic:1", "quadratic:1,0;0,2", "quadratic:2,1;1,2"}) {
    CAPTURE(id);
    auto pair = potential_from_id(id);
    const Vector x0 = Vector::Ones(pair.psi.dim());
    auto traj = second_order_flow(pair.v, x0, -pair.psi.gradient(x0), adaptive(10));
    const auto energy = [&](std::size_t k) {
      return 0.5 * traj.velocities[k].squaredNorm() - pair.v.value(traj.states[k]);
    };
    double drift = 0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
      drift = std::max(drift, std::abs(energy(k) - energy(0)));
    }
    CHECK(drift < 1e-7);
  }
}

TEST_CASE("path_integral") {
  auto half = make_quadratic(Matrix::Identity(1, 1));
  auto traj = gradient_flow(half, vec({1}), adaptive(2));
  CHECK(std::abs(path_integral(traj, [](double, const Vector&, const Vector&) {
                   return 1.0;
                 }) - 2.0) < 1e-12);

  auto t20 = gradient_flow(half, vec({1}), adaptive(20));
  const double kinetic = path_integral(
      t20, [](double, const Vector&, const Vector& w) { return w.squaredNorm(); });
  // ∫₀²⁰ e^{−2t} dt
  CHECK(std::abs(kinetic - oracle::simpson([](double t) { return std::exp(-2 * t); }, 0, 20)) < 1e-6);

  const double hardy = path_integral(t20, [&](double t, const Vector& x, const Vector& w) {
    return t == 0.0 ? w.squaredNorm() : (x - t20.states[0]).squaredNorm() / (t * t);
  });
  CHECK(std::isfinite(hardy));
  CHECK(hardy <= 4 * kinetic);

  Trajectory one;
  one.times = {0.0};
  one.states = {vec({1})};
  one.velocities = {vec({0})};
  CHECK_THROWS_AS(path_integral(one, [](double, const Vector&, const Vector&) { return 1.0; }),
                  InputError);
}

TEST_CASE("trajectory CSV") {
  auto half = make_quadratic(Matrix::Identity(2, 2));
  IntegratorOptions o;
  o.method = Method::rk4;
  o.h = 0.5;
  o.horizon = 1.0;
  auto traj = gradient_flow(half, vec({1, 2}), o);
  std::ostringstream os;
  write_trajectory_csv(os, traj);
  const std::string s = os.str();
  CHECK(s.rfind("t,x0,x1,w0,w1\n", 0) == 0);
  CHECK(s.find('\r') == std::string::npos);
  CHECK(s.find("\n0,1,2,-1,-2\n") != std::string::npos);
}

TEST_CASE("integration is deterministic") {
  auto e = make_example_one();
  auto a = gradient_flow(e, vec({0}), adaptive(3));
  auto b = gradient_flow(e, vec({0}), adaptive(3));
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a.times[k] == b.times[k]);
    CHECK(a.states[k][0] == b.states[k][0]);
  }
}
