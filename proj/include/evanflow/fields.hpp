#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace evanflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Malformed user input: bad ids, dimension mismatches, invalid options.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation left the domain of finite doubles (NaN / inf evaluations).
class NumericDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct FieldFlags {
  bool claims_convex = false;
  bool claims_bounded_below = false;
};

/// Scalar field on R^n with value, gradient and an optional Hessian-vector
/// product. Immutable after construction; evaluation is pure.
///
/// When no analytic gradient is supplied, `gradient` falls back to the
/// central finite-difference oracle `fd_gradient`.
class DifferentiableField {
 public:
  using ValueFn = std::function<double(const Vector&)>;
  using GradientFn = std::function<Vector(const Vector&)>;
  using HessVecFn = std::function<Vector(const Vector&, const Vector&)>;

  DifferentiableField(int dim, std::string name, ValueFn value,
                      GradientFn gradient = {}, HessVecFn hessvec = {},
                      FieldFlags flags = {});

  int dim() const { return dim_; }
  const std::string& name() const { return name_; }
  const FieldFlags& flags() const { return flags_; }

  double value(const Vector& x) const;
  Vector gradient(const Vector& x) const;
  bool has_hessvec() const { return static_cast<bool>(hessvec_); }
  bool has_analytic_gradient() const { return static_cast<bool>(gradient_); }
  /// ∇²f(x)·h. Throws when the field carries no Hessian-vector product.
  Vector hessvec(const Vector& x, const Vector& h) const;

  DifferentiableField with_name(std::string name) const;
  DifferentiableField with_flags(FieldFlags flags) const;

 private:
  void check_dim(const Vector& x) const;

  int dim_;
  std::string name_;
  ValueFn value_;
  GradientFn gradient_;
  HessVecFn hessvec_;
  FieldFlags flags_;
};

/// ψ together with its induced potential V = ½‖∇ψ‖².
struct PotentialPair {
  DifferentiableField psi;
  DifferentiableField v;
};

enum class CounterexampleKind { neg_square, cubic, quartic_saddle, linear };

/// Builds V = ½‖∇ψ‖² from ψ. ∇V = ∇²ψ·∇ψ when ψ has a Hessian-vector
/// product, finite differences on V otherwise.
PotentialPair make_pair(DifferentiableField psi);

/// ψ(x) = ½⟨x, Ax⟩ with A symmetrized. Convexity / boundedness flags are set
/// iff the smallest eigenvalue of A is ≥ −1e-10.
PotentialPair make_quadratic(const Matrix& a);

/// The C² convex function −ln(1−x) (x ≤ 0), ½x² + x (x ≥ 0): convex, with
/// inf ‖∇ψ‖ = 0 but unbounded below.
PotentialPair make_example_one();

PotentialPair make_counterexample(CounterexampleKind kind);
CounterexampleKind parse_counterexample_kind(std::string_view name);

/// −ψ, used for ψ₂ = −ψ₁ comparisons. Flags are not inferred; pass them.
PotentialPair negate(const PotentialPair& pair, FieldFlags psi_flags = {});
/// ψ + c. V is unchanged.
PotentialPair shift(const PotentialPair& pair, double c);

/// Central-difference gradient with step h = 1e-5·(1+‖x‖).
Vector fd_gradient(const DifferentiableField& field, const Vector& x);
double fd_step(const Vector& x);

/// V = f/2 for the Eikonal pipeline. Every probe point must satisfy
/// f ≥ −1e-12; the first offending point is reported in the error.
DifferentiableField field_from_f(const DifferentiableField& f,
                                 const std::vector<Vector>& probes);

/// Parses a row-major matrix literal "a,b;c,d".
Matrix parse_matrix_literal(std::string_view literal);

/// Resolves a catalog id to a potential pair.
///
///   quadratic:<matrix>   ½⟨x, Ax⟩
///   example_one | neg_square | cubic | quartic_saddle | linear
///
/// Modifiers: a leading '-' negates ψ, a trailing "@c" adds the constant c.
/// Example: "-linear", "quadratic:1,0;0,2@5".
PotentialPair potential_from_id(std::string_view id);

/// Resolves an f id for reconstruction:
///   gradsq:<potential id>   f = ‖∇ψ‖²
///   field:<potential id>    f = ψ (the catalog value itself)
///   zero:<n>                f ≡ 0 on R^n
DifferentiableField f_from_id(std::string_view id);

}  // namespace evanflow
