#include <cmath>

#include "doctest.h"
#include "evanflow/fields.hpp"
#include "oracles.hpp"

using namespace evanflow;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

std::vector<PotentialPair> catalog() {
  return {potential_from_id("quadratic:1,0;0,1"),
          potential_from_id("quadratic:1,0;0,2"),
          potential_from_id("quadratic:2,1;1,2"),
          potential_from_id("quadratic:1,0;0,-3"),
          make_example_one(),
          make_counterexample(CounterexampleKind::neg_square),
          make_counterexample(CounterexampleKind::cubic),
          make_counterexample(CounterexampleKind::quartic_saddle),
          make_counterexample(CounterexampleKind::linear)};
}

}  // namespace

TEST_CASE("make_quadratic values and gradients") {
  auto id = make_quadratic(Matrix::Identity(2, 2));
  CHECK(id.psi.value(vec({1, 1})) == doctest::Approx(1.0));
  CHECK(id.psi.gradient(vec({1, 1})).isApprox(vec({1, 1})));

  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 1;
  d(1, 1) = 2;
  auto diag = make_quadratic(d);
  CHECK(diag.psi.value(vec({1, 1})) == doctest::Approx(1.5));
  CHECK(diag.psi.gradient(vec({1, 1})).isApprox(vec({1, 2})));

  // [[2,1],[1,2]]·(1,0) = (2,1), ½⟨x,Ax⟩ = 1
  auto full = make_quadratic(parse_matrix_literal("2,1;1,2"));
  CHECK(full.psi.value(vec({1, 0})) == doctest::Approx(1.0));
  CHECK(full.psi.gradient(vec({1, 0})).isApprox(vec({2, 1})));
}

TEST_CASE("make_quadratic symmetrizes and sets flags from the spectrum") {
  auto q = make_quadratic(parse_matrix_literal("1,2;0,1"));
  // symmetrized to [[1,1],[1,1]]: psd (eigenvalues 0, 2)
  CHECK(q.psi.gradient(vec({1, 0})).isApprox(vec({1, 1})));
  CHECK(q.psi.flags().claims_convex);
  CHECK(q.psi.flags().claims_bounded_below);

  auto indefinite = make_quadratic(parse_matrix_literal("1,0;0,-1"));
  CHECK_FALSE(indefinite.psi.flags().claims_convex);
  CHECK(indefinite.v.flags().claims_convex);
}

TEST_CASE("make_quadratic rejects bad matrices") {
  CHECK_THROWS_AS(make_quadratic(Matrix::Zero(2, 3)), InputError);
  CHECK_THROWS_AS(parse_matrix_literal("1,0;0"), InputError);
  CHECK_THROWS_AS(parse_matrix_literal("1,x"), InputError);
  auto q = make_quadratic(Matrix::Identity(2, 2));
  CHECK_THROWS_AS(q.psi.value(vec({1, 2, 3})), InputError);
}

TEST_CASE("example_one branches") {
  auto e = make_example_one();
  CHECK(e.psi.value(vec({0})) == 0.0);
  CHECK(e.psi.gradient(vec({0}))[0] == 1.0);
  // −ln(1 − (−3)) = −ln 4
  CHECK(e.psi.value(vec({-3})) == doctest::Approx(-std::log(4.0)));
  CHECK(e.psi.gradient(vec({-3}))[0] == doctest::Approx(0.25));
  CHECK(e.psi.value(vec({1})) == doctest::Approx(1.5));
  CHECK(e.psi.gradient(vec({1}))[0] == doctest::Approx(2.0));
  // C² across 0: second derivative 1 from both sides.
  CHECK(e.psi.hessvec(vec({-1e-12}), vec({1}))[0] == doctest::Approx(1.0));
  CHECK(e.psi.hessvec(vec({0}), vec({1}))[0] == 1.0);
  CHECK(e.psi.flags().claims_convex);
  CHECK_FALSE(e.psi.flags().claims_bounded_below);
}

TEST_CASE("counterexamples") {
  auto cubic = make_counterexample(CounterexampleKind::cubic);
  CHECK(cubic.psi.value(vec({1})) == 1.0);
  CHECK(cubic.v.value(vec({1})) == doctest::Approx(4.5));
  CHECK(cubic.v.flags().claims_convex);
  CHECK_FALSE(cubic.psi.flags().claims_convex);

  auto neg = make_counterexample(CounterexampleKind::neg_square);
  CHECK(neg.psi.value(vec({2})) == -4.0);
  CHECK(neg.psi.gradient(vec({2}))[0] == -4.0);

  auto saddle = make_counterexample(CounterexampleKind::quartic_saddle);
  CHECK(saddle.psi.value(vec({1, 1})) == 0.0);

  CHECK_THROWS_AS(parse_counterexample_kind("quintic"), InputError);
}

TEST_CASE("fd_gradient") {
  auto id = make_quadratic(Matrix::Identity(2, 2));
  CHECK((fd_gradient(id.psi, vec({1, 1})) - vec({1, 1})).norm() < 1e-8);

  auto e = make_example_one();
  CHECK(std::abs(fd_gradient(e.psi, vec({-3}))[0] - 0.25) < 1e-9);

  auto cubic = make_counterexample(CounterexampleKind::cubic);
  CHECK(std::abs(fd_gradient(cubic.psi, vec({2}))[0] - 12.0) < 1e-6);

  DifferentiableField bad(1, "log", [](const Vector& x) { return std::log(x[0]); });
  CHECK_THROWS_AS(fd_gradient(bad, vec({0})), NumericDomainError);
  // Fields without analytic gradients fall back to the oracle.
  DifferentiableField sq(1, "sq", [](const Vector& x) { return x[0] * x[0]; });
  CHECK(sq.gradient(vec({3}))[0] == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("field_from_f") {
  DifferentiableField f(1, "x^2", [](const Vector& x) { return x[0] * x[0]; },
                        [](const Vector& x) -> Vector { return 2.0 * x; });
  auto v = field_from_f(f, {vec({0}), vec({1})});
  CHECK(v.value(vec({1})) == 0.5);
  CHECK(v.gradient(vec({2}))[0] == 2.0);

  auto zero = f_from_id("zero:2");
  auto vz = field_from_f(zero, {vec({1, 1})});
  CHECK(vz.value(vec({3, -1})) == 0.0);
  CHECK(vz.gradient(vec({3, -1})).norm() == 0.0);

  auto neg = f_from_id("field:neg_square");
  CHECK_THROWS_AS(field_from_f(neg, {vec({0}), vec({0.5})}), InputError);
  try {
    field_from_f(neg, {vec({0.5})});
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("0.5") != std::string::npos);
  }
}

TEST_CASE("catalog ids and modifiers") {
  auto p = potential_from_id("quadratic:1,0;0,2@5");
  CHECK(p.psi.value(vec({1, 1})) == doctest::Approx(6.5));
  CHECK(p.psi.gradient(vec({1, 1})).isApprox(vec({1, 2})));

  auto neg = potential_from_id("-linear");
  CHECK(neg.psi.value(vec({2})) == -2.0);
  CHECK(neg.psi.gradient(vec({2}))[0] == -1.0);
  CHECK(neg.v.value(vec({2})) == 0.5);

  auto negq = potential_from_id("-quadratic:1,0;0,2");
  CHECK_FALSE(negq.psi.flags().claims_bounded_below);
  CHECK(negq.psi.value(vec({1, 1})) == doctest::Approx(-1.5));

  CHECK_THROWS_AS(potential_from_id("nope"), InputError);
  CHECK_THROWS_AS(f_from_id("nope"), InputError);

  auto f = f_from_id("gradsq:quadratic:1,0;0,2");
  // f = x₁² + 4x₂²
  CHECK(f.value(vec({1, 1})) == doctest::Approx(5.0));
  CHECK(f.gradient(vec({1, 1})).isApprox(vec({2, 8})));
}

TEST_CASE("catalog gradients agree with finite differences") {
  for (const auto& pair : catalog()) {
    CAPTURE(pair.psi.name());
    for (const auto& x : oracle::random_points(pair.psi.dim(), 100, -2, 2)) {
      const Vector g = pair.psi.gradient(x);
      CHECK((fd_gradient(pair.psi, x) - g).norm() <= 1e-5 * (1 + g.norm()));

      // V = ½‖∇ψ‖² exactly, by construction.
      CHECK(pair.v.value(x) - 0.5 * g.squaredNorm() == 0.0);

      const Vector gv = pair.v.gradient(x);
      CHECK((gv - fd_gradient(pair.v, x)).norm() <= 1e-4 * (1 + gv.norm()));
    }
  }
}

TEST_CASE("Hessian-vector products are symmetric bilinear forms") {
  for (const auto& pair : catalog()) {
    if (!pair.psi.has_hessvec()) continue;
    CAPTURE(pair.psi.name());
    const int n = pair.psi.dim();
    const auto xs = oracle::random_points(n, 20, -2, 2, 1);
    const auto h1s = oracle::random_points(n, 20, -1, 1, 2);
    const auto h2s = oracle::random_points(n, 20, -1, 1, 3);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double lhs = pair.psi.hessvec(xs[k], h1s[k]).dot(h2s[k]);
      const double rhs = h1s[k].dot(pair.psi.hessvec(xs[k], h2s[k]));
      CHECK(std::abs(lhs - rhs) <= 1e-8 * (1 + h1s[k].norm() * h2s[k].norm()));
    }
  }
}
