#include "evanflow/fields.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "evanflow/util.hpp"

namespace evanflow {

DifferentiableField::DifferentiableField(int dim, std::string name,
                                         ValueFn value, GradientFn gradient,
                                         HessVecFn hessvec, FieldFlags flags)
    : dim_(dim),
      name_(std::move(name)),
      value_(std::move(value)),
      gradient_(std::move(gradient)),
      hessvec_(std::move(hessvec)),
      flags_(flags) {
  if (dim_ <= 0) throw InputError("field dimension must be positive");
  if (!value_) throw InputError("field '" + name_ + "' has no value map");
}

void DifferentiableField::check_dim(const Vector& x) const {
  if (x.size() != dim_) {
    std::ostringstream os;
    os << "field '" << name_ << "' expects dimension " << dim_ << ", got "
       << x.size();
    throw InputError(os.str());
  }
}

double DifferentiableField::value(const Vector& x) const {
  check_dim(x);
  return value_(x);
}

Vector DifferentiableField::gradient(const Vector& x) const {
  check_dim(x);
  if (gradient_) return gradient_(x);
  return fd_gradient(*this, x);
}

Vector DifferentiableField::hessvec(const Vector& x, const Vector& h) const {
  check_dim(x);
  check_dim(h);
  if (!hessvec_) {
    throw InputError("field '" + name_ + "' has no Hessian-vector product");
  }
  return hessvec_(x, h);
}

DifferentiableField DifferentiableField::with_name(std::string name) const {
  DifferentiableField copy = *this;
  copy.name_ = std::move(name);
  return copy;
}

DifferentiableField DifferentiableField::with_flags(FieldFlags flags) const {
  DifferentiableField copy = *this;
  copy.flags_ = flags;
  return copy;
}

double fd_step(const Vector& x) { return 1e-5 * (1.0 + x.norm()); }

Vector fd_gradient(const DifferentiableField& field, const Vector& x) {
  const double h = fd_step(x);
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = field.value(probe);
    probe[i] = x[i] - h;
    const double fm = field.value(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericDomainError("non-finite value of '" + field.name() +
                               "' near " + format_point(x));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

PotentialPair make_pair(DifferentiableField psi) {
  const DifferentiableField& p = psi;
  auto value = [p](const Vector& x) {
    return 0.5 * p.gradient(x).squaredNorm();
  };
  DifferentiableField::GradientFn gradient;
  if (p.has_hessvec()) {
    gradient = [p](const Vector& x) { return p.hessvec(x, p.gradient(x)); };
  }
  DifferentiableField v(p.dim(), "V[" + p.name() + "]", value, gradient, {},
                        FieldFlags{false, true});
  return PotentialPair{std::move(psi), std::move(v)};
}

PotentialPair make_quadratic(const Matrix& a) {
  if (a.rows() == 0 || a.rows() != a.cols()) {
    std::ostringstream os;
    os << "quadratic potential needs a square matrix, got " << a.rows() << "x"
       << a.cols();
    throw InputError(os.str());
  }
  const Matrix sym = 0.5 * (a + a.transpose());
  const double min_eig =
      Eigen::SelfAdjointEigenSolver<Matrix>(sym, Eigen::EigenvaluesOnly)
          .eigenvalues()
          .minCoeff();
  const bool psd = min_eig >= -1e-10;
  const Matrix sq = sym * sym;
  const auto n = static_cast<int>(sym.rows());

  DifferentiableField psi(
      n, "quadratic", [sym](const Vector& x) { return 0.5 * x.dot(sym * x); },
      [sym](const Vector& x) -> Vector { return sym * x; },
      [sym](const Vector&, const Vector& h) -> Vector { return sym * h; },
      FieldFlags{psd, psd});
  // V = ½‖Ax‖² is convex for every symmetric A.
  DifferentiableField v(
      n, "V[quadratic]",
      [sym](const Vector& x) { return 0.5 * (sym * x).squaredNorm(); },
      [sq](const Vector& x) -> Vector { return sq * x; },
      [sq](const Vector&, const Vector& h) -> Vector { return sq * h; },
      FieldFlags{true, true});
  return PotentialPair{std::move(psi), std::move(v)};
}

PotentialPair make_example_one() {
  // x = 0 goes to the right branch; both branches agree to second order.
  auto value = [](const Vector& x) {
    const double t = x[0];
    return t < 0.0 ? -std::log1p(-t) : 0.5 * t * t + t;
  };
  auto gradient = [](const Vector& x) -> Vector {
    const double t = x[0];
    return Vector::Constant(1, t < 0.0 ? 1.0 / (1.0 - t) : t + 1.0);
  };
  auto hessvec = [](const Vector& x, const Vector& h) -> Vector {
    const double t = x[0];
    const double second = t < 0.0 ? 1.0 / ((1.0 - t) * (1.0 - t)) : 1.0;
    return second * h;
  };
  DifferentiableField psi(1, "example_one", value, gradient, hessvec,
                          FieldFlags{true, false});
  auto pair = make_pair(std::move(psi));
  pair.v = pair.v.with_flags(FieldFlags{true, true});
  return pair;
}

PotentialPair make_counterexample(CounterexampleKind kind) {
  using HV = DifferentiableField::HessVecFn;
  switch (kind) {
    case CounterexampleKind::neg_square: {
      DifferentiableField psi(
          1, "neg_square", [](const Vector& x) { return -x[0] * x[0]; },
          [](const Vector& x) -> Vector { return -2.0 * x; },
          HV([](const Vector&, const Vector& h) -> Vector { return -2.0 * h; }),
          FieldFlags{false, false});
      auto pair = make_pair(std::move(psi));
      pair.v = pair.v.with_flags(FieldFlags{true, true});
      return pair;
    }
    case CounterexampleKind::cubic: {
      DifferentiableField psi(
          1, "cubic", [](const Vector& x) { return x[0] * x[0] * x[0]; },
          [](const Vector& x) -> Vector {
            return Vector::Constant(1, 3.0 * x[0] * x[0]);
          },
          HV([](const Vector& x, const Vector& h) -> Vector {
            return 6.0 * x[0] * h;
          }),
          FieldFlags{false, false});
      auto pair = make_pair(std::move(psi));
      // V = (9/2)x⁴
      pair.v = pair.v.with_flags(FieldFlags{true, true});
      return pair;
    }
    case CounterexampleKind::quartic_saddle: {
      DifferentiableField psi(
          2, "quartic_saddle",
          [](const Vector& x) {
            const double a = x[0] * x[0];
            return a * a - x[1] * x[1];
          },
          [](const Vector& x) -> Vector {
            Vector g(2);
            g << 4.0 * x[0] * x[0] * x[0], -2.0 * x[1];
            return g;
          },
          HV([](const Vector& x, const Vector& h) -> Vector {
            Vector r(2);
            r << 12.0 * x[0] * x[0] * h[0], -2.0 * h[1];
            return r;
          }),
          FieldFlags{false, false});
      auto pair = make_pair(std::move(psi));
      // V = 8x₁⁶ + 2x₂²
      pair.v = pair.v.with_flags(FieldFlags{true, true});
      return pair;
    }
    case CounterexampleKind::linear: {
      DifferentiableField psi(
          1, "linear", [](const Vector& x) { return x[0]; },
          [](const Vector&) -> Vector { return Vector::Ones(1); },
          HV([](const Vector&, const Vector& h) -> Vector {
            return Vector::Zero(h.size());
          }),
          FieldFlags{true, false});
      auto pair = make_pair(std::move(psi));
      pair.v = pair.v.with_flags(FieldFlags{true, true});
      return pair;
    }
  }
  throw InputError("unknown counterexample kind");
}

CounterexampleKind parse_counterexample_kind(std::string_view name) {
  if (name == "neg_square") return CounterexampleKind::neg_square;
  if (name == "cubic") return CounterexampleKind::cubic;
  if (name == "quartic_saddle") return CounterexampleKind::quartic_saddle;
  if (name == "linear") return CounterexampleKind::linear;
  throw InputError("unknown counterexample kind '" + std::string(name) + "'");
}

PotentialPair negate(const PotentialPair& pair, FieldFlags psi_flags) {
  const DifferentiableField p = pair.psi;
  DifferentiableField::HessVecFn hessvec;
  if (p.has_hessvec()) {
    hessvec = [p](const Vector& x, const Vector& h) -> Vector {
      return -p.hessvec(x, h);
    };
  }
  DifferentiableField psi(
      p.dim(), "-" + p.name(), [p](const Vector& x) { return -p.value(x); },
      [p](const Vector& x) -> Vector { return -p.gradient(x); }, hessvec,
      psi_flags);
  return PotentialPair{std::move(psi), pair.v};
}

PotentialPair shift(const PotentialPair& pair, double c) {
  const DifferentiableField p = pair.psi;
  DifferentiableField::HessVecFn hessvec;
  if (p.has_hessvec()) {
    hessvec = [p](const Vector& x, const Vector& h) { return p.hessvec(x, h); };
  }
  std::ostringstream name;
  name << p.name() << "@" << c;
  DifferentiableField psi(
      p.dim(), name.str(), [p, c](const Vector& x) { return p.value(x) + c; },
      [p](const Vector& x) { return p.gradient(x); }, hessvec, p.flags());
  return PotentialPair{std::move(psi), pair.v};
}

DifferentiableField field_from_f(const DifferentiableField& f,
                                 const std::vector<Vector>& probes) {
  for (const auto& x : probes) {
    const double fx = f.value(x);
    if (!(fx >= -1e-12)) {
      std::ostringstream os;
      os << "f = '" << f.name() << "' is negative (" << fx << ") at "
         << format_point(x);
      throw InputError(os.str());
    }
  }
  const DifferentiableField src = f;
  DifferentiableField::HessVecFn hessvec;
  if (src.has_hessvec()) {
    hessvec = [src](const Vector& x, const Vector& h) -> Vector {
      return 0.5 * src.hessvec(x, h);
    };
  }
  return DifferentiableField(
      src.dim(), "V[f=" + src.name() + "]",
      [src](const Vector& x) { return 0.5 * src.value(x); },
      [src](const Vector& x) -> Vector { return 0.5 * src.gradient(x); },
      hessvec, FieldFlags{src.flags().claims_convex, true});
}

Matrix parse_matrix_literal(std::string_view literal) {
  std::vector<std::vector<double>> rows;
  for (const auto& row_text : split(literal, ';')) {
    std::vector<double> row;
    for (const auto& entry : split(row_text, ',')) {
      row.push_back(parse_double(entry, "matrix entry"));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("empty matrix literal");
  const auto cols = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) {
      throw InputError("ragged matrix literal '" + std::string(literal) + "'");
    }
    for (std::size_t j = 0; j < cols; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

namespace {

PotentialPair base_potential(std::string_view id) {
  constexpr std::string_view quad = "quadratic:";
  if (id.substr(0, quad.size()) == quad) {
    auto pair = make_quadratic(parse_matrix_literal(id.substr(quad.size())));
    pair.psi = pair.psi.with_name(std::string(id));
    return pair;
  }
  if (id == "example_one") return make_example_one();
  if (id == "neg_square" || id == "cubic" || id == "quartic_saddle" ||
      id == "linear") {
    return make_counterexample(parse_counterexample_kind(id));
  }
  throw InputError("unknown potential id '" + std::string(id) + "'");
}

}  // namespace

PotentialPair potential_from_id(std::string_view id) {
  const std::string full = trim(id);
  std::string_view rest = full;
  if (rest.empty()) throw InputError("empty potential id");

  bool negated = false;
  if (rest.front() == '-') {
    negated = true;
    rest.remove_prefix(1);
  }
  std::optional<double> offset;
  if (const auto at = rest.rfind('@'); at != std::string_view::npos) {
    offset = parse_double(rest.substr(at + 1), "potential offset");
    rest = rest.substr(0, at);
  }

  PotentialPair pair = base_potential(rest);
  if (negated) {
    FieldFlags flags{};
    if (rest.substr(0, 10) == "quadratic:") {
      const auto q = make_quadratic(-parse_matrix_literal(rest.substr(10)));
      flags = q.psi.flags();
    } else if (rest == "linear") {
      flags = FieldFlags{true, false};
    }
    pair = negate(pair, flags);
  }
  if (offset) pair = shift(pair, *offset);
  pair.psi = pair.psi.with_name(full);
  return pair;
}

DifferentiableField f_from_id(std::string_view id) {
  const std::string full = trim(id);
  std::string_view rest = full;
  if (rest.substr(0, 7) == "gradsq:") {
    const auto pair = potential_from_id(rest.substr(7));
    // f = 2V
    const DifferentiableField v = pair.v;
    DifferentiableField::HessVecFn hessvec;
    if (v.has_hessvec()) {
      hessvec = [v](const Vector& x, const Vector& h) -> Vector {
        return 2.0 * v.hessvec(x, h);
      };
    }
    return DifferentiableField(
        v.dim(), full, [v](const Vector& x) { return 2.0 * v.value(x); },
        [v](const Vector& x) -> Vector { return 2.0 * v.gradient(x); },
        hessvec, v.flags());
  }
  if (rest.substr(0, 6) == "field:") {
    return potential_from_id(rest.substr(6)).psi.with_name(full);
  }
  if (rest == "zero" || rest.substr(0, 5) == "zero:") {
    int n = 1;
    if (rest.size() > 5) {
      n = static_cast<int>(parse_double(rest.substr(5), "zero-field dimension"));
    }
    if (n <= 0) throw InputError("zero-field dimension must be positive");
    return DifferentiableField(
        n, full, [](const Vector&) { return 0.0; },
        [](const Vector& x) -> Vector { return Vector::Zero(x.size()); },
        [](const Vector&, const Vector& h) -> Vector {
          return Vector::Zero(h.size());
        },
        FieldFlags{true, true});
  }
  throw InputError("unknown f id '" + full + "'");
}

}  // namespace evanflow
