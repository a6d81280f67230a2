#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "evanflow/cli.hpp"
#include "evanflow/diagnostics.hpp"
#include "evanflow/eikonal.hpp"
#include "evanflow/evanescent.hpp"
#include "evanflow/fields.hpp"
#include "evanflow/integrate.hpp"

namespace py = pybind11;
using namespace evanflow;

namespace {

// Results cross the boundary as plain dicts built from the JSON serializers.
py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

Matrix stack(const std::vector<Vector>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t k = 0; k < rows.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = rows[k];
  return m;
}

std::vector<Vector> unstack(const Matrix& m) {
  std::vector<Vector> rows;
  rows.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index k = 0; k < m.rows(); ++k) rows.emplace_back(m.row(k).transpose());
  return rows;
}

// Python callables may be invoked from worker threads, so each call takes the GIL.
DifferentiableField field_from_python(int dim, std::string name, py::function value,
                                      std::optional<py::function> gradient,
                                      std::optional<py::function> hessvec, bool convex,
                                      bool bounded_below) {
  auto hold = [](py::function f) {
    return std::shared_ptr<py::function>(new py::function(std::move(f)), [](py::function* p) {
      py::gil_scoped_acquire gil;
      delete p;
    });
  };
  auto v = hold(std::move(value));
  DifferentiableField::ValueFn vf = [v](const Vector& x) {
    py::gil_scoped_acquire gil;
    return (*v)(x).cast<double>();
  };
  DifferentiableField::GradientFn gf;
  if (gradient) {
    auto g = hold(std::move(*gradient));
    gf = [g](const Vector& x) {
      py::gil_scoped_acquire gil;
      return (*g)(x).cast<Vector>();
    };
  }
  DifferentiableField::HessVecFn hf;
  if (hessvec) {
    auto h = hold(std::move(*hessvec));
    hf = [h](const Vector& x, const Vector& d) {
      py::gil_scoped_acquire gil;
      return (*h)(x, d).cast<Vector>();
    };
  }
  return DifferentiableField(dim, std::move(name), vf, gf, hf, FieldFlags{convex, bounded_below});
}

IntegratorOptions integrator(const std::string& method, double horizon, double h, double rtol,
                             double atol, double max_step, double r_max, double eps_crit) {
  IntegratorOptions o;
  o.method = parse_method(method);
  o.horizon = horizon;
  o.h = h;
  o.rtol = rtol;
  o.atol = atol;
  o.max_step = max_step;
  o.r_max = r_max;
  o.eps_crit = eps_crit;
  return o;
}

std::vector<std::pair<Vector, Vector>> pairs_from(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InputError("pair arrays must have the same shape");
  }
  std::vector<std::pair<Vector, Vector>> out;
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    out.emplace_back(a.row(k).transpose(), b.row(k).transpose());
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_evanflow, m) {
  m.doc() = "Gradient flows, evanescent orbits and Eikonal reconstruction";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericDomainError>(m, "NumericDomainError", PyExc_ArithmeticError);

  py::class_<DifferentiableField>(m, "Field")
      .def(py::init(&field_from_python), py::arg("dim"), py::arg("name"), py::arg("value"),
           py::arg("gradient") = py::none(), py::arg("hessvec") = py::none(),
           py::arg("convex") = false, py::arg("bounded_below") = false,
           "Field from Python callables. Without a gradient, central differences are used.")
      .def_property_readonly("dim", &DifferentiableField::dim)
      .def_property_readonly("name", &DifferentiableField::name)
      .def_property_readonly("claims_convex",
                             [](const DifferentiableField& f) { return f.flags().claims_convex; })
      .def_property_readonly(
          "claims_bounded_below",
          [](const DifferentiableField& f) { return f.flags().claims_bounded_below; })
      .def("value", &DifferentiableField::value, py::arg("x"))
      .def("gradient", &DifferentiableField::gradient, py::arg("x"))
      .def("hessvec", &DifferentiableField::hessvec, py::arg("x"), py::arg("h"))
      .def("__repr__", [](const DifferentiableField& f) {
        return "<Field " + f.name() + " dim=" + std::to_string(f.dim()) + ">";
      });

  py::class_<PotentialPair>(m, "PotentialPair")
      .def(py::init(&make_pair), py::arg("psi"), "Pairs psi with V = |grad psi|^2 / 2.")
      .def_readonly("psi", &PotentialPair::psi)
      .def_readonly("v", &PotentialPair::v);

  m.def("potential", &potential_from_id, py::arg("id"),
        "Catalog potential, e.g. 'quadratic:1,0;0,2', 'example_one', '-linear', 'cubic@3'.");
  m.def("f_field", &f_from_id, py::arg("id"),
        "Eikonal right-hand side: 'gradsq:<potential>', 'field:<potential>' or 'zero:<n>'.");
  m.def("quadratic", &make_quadratic, py::arg("a"));

  py::class_<Trajectory>(m, "Trajectory")
      .def_property_readonly("times",
                             [](const Trajectory& t) {
                               return Eigen::Map<const Vector>(
                                   t.times.data(), static_cast<Eigen::Index>(t.times.size())).eval();
                             })
      .def_property_readonly("states", [](const Trajectory& t) { return stack(t.states); })
      .def_property_readonly("velocities", [](const Trajectory& t) { return stack(t.velocities); })
      .def_property_readonly("termination",
                             [](const Trajectory& t) { return to_string(t.termination); })
      .def_property_readonly("system", [](const Trajectory& t) { return to_string(t.system); })
      .def("state_at", &state_at, py::arg("t"))
      .def("__len__", &Trajectory::size);

  m.def(
      "gradient_flow",
      [](const PotentialPair& p, const Vector& x0, const std::string& method, double T,
         double h, double rtol, double atol, double max_step, double r_max, double eps_crit) {
        const auto o = integrator(method, T, h, rtol, atol, max_step, r_max, eps_crit);
        py::gil_scoped_release release;
        return gradient_flow(p, x0, o);
      },
      py::arg("pair"), py::arg("x0"), py::arg("method") = "adaptive", py::arg("T") = 10.0,
      py::arg("h") = 1e-3, py::arg("rtol") = 1e-9, py::arg("atol") = 1e-12,
      py::arg("max_step") = 1e-3, py::arg("r_max") = 1e6, py::arg("eps_crit") = 1e-10,
      "Orbit of u' = -grad psi(u) from x0.");
  m.def(
      "second_order_flow",
      [](const DifferentiableField& v, const Vector& x0, const Vector& v0,
         const std::string& method, double T, double h, double rtol, double atol,
         double max_step, double r_max, double eps_crit) {
        const auto o = integrator(method, T, h, rtol, atol, max_step, r_max, eps_crit);
        py::gil_scoped_release release;
        return second_order_flow(v, x0, v0, o);
      },
      py::arg("v"), py::arg("x0"), py::arg("v0"), py::arg("method") = "adaptive",
      py::arg("T") = 10.0, py::arg("h") = 1e-3, py::arg("rtol") = 1e-9,
      py::arg("atol") = 1e-12, py::arg("max_step") = 1e-3, py::arg("r_max") = 1e6,
      py::arg("eps_crit") = 1e-10, "Orbit of v'' = grad V(v) from (x0, v0).");

  m.def(
      "evanescence_measures",
      [](const Trajectory& t, const DifferentiableField& v, double eps_tail) {
        return to_py(to_json(evanescence_measures(t, v, eps_tail)));
      },
      py::arg("trajectory"), py::arg("v"), py::arg("eps_tail") = 1e-4);

  m.def(
      "minimize_action",
      [](const DifferentiableField& v, const Vector& x0, double T, std::size_t n,
         std::optional<double> mu, double tol_opt, std::size_t max_iters) {
        ActionOptions o;
        o.horizon = T;
        o.n = n;
        o.mu = mu;
        o.tol_opt = tol_opt;
        o.max_iters = max_iters;
        EvanescentSolveResult r;
        {
          py::gil_scoped_release release;
          r = minimize_action(v, x0, o);
        }
        return py::make_tuple(to_py(to_json(r)), r.orbit);
      },
      py::arg("v"), py::arg("x0"), py::arg("T") = 12.0, py::arg("N") = 240,
      py::arg("mu") = py::none(), py::arg("tol_opt") = 1e-8, py::arg("max_iters") = 50000,
      "Evanescent orbit by discrete action minimization. Returns (summary, orbit).");
  m.def(
      "shoot_evanescent",
      [](const DifferentiableField& v, const Vector& x0, double T) {
        ShootOptions o;
        o.horizon = T;
        o.first_horizon = std::min(o.first_horizon, T);
        EvanescentSolveResult r;
        {
          py::gil_scoped_release release;
          r = shoot_evanescent(v, x0, o);
        }
        return py::make_tuple(to_py(to_json(r)), r.orbit);
      },
      py::arg("v"), py::arg("x0"), py::arg("T") = 12.0,
      "Evanescent orbit by shooting on the initial velocity. Returns (summary, orbit).");
  m.def(
      "cross_validate",
      [](const PotentialPair& p, const Vector& x0, std::uint64_t seed) {
        CrossValidateOptions o;
        o.seed = seed;
        CrossValidation xv;
        {
          py::gil_scoped_release release;
          xv = cross_validate(p, x0, o);
        }
        return py::dict(py::arg("hypothesis_met") = xv.hypothesis_met,
                        py::arg("report") = to_py(to_json(xv.report)),
                        py::arg("action") = to_py(to_json(xv.action)),
                        py::arg("shooting") = to_py(to_json(xv.shooting)));
      },
      py::arg("pair"), py::arg("x0"), py::arg("seed") = 12345);

  m.def(
      "reconstruct",
      [](const DifferentiableField& f, const Matrix& points, const std::string& method,
         bool renormalize, unsigned workers) {
        ReconstructOptions o;
        o.method = parse_recon_method(method);
        o.renormalize = renormalize;
        o.workers = workers;
        ReconstructionResult r;
        {
          py::gil_scoped_release release;
          r = reconstruct_grid(f, unstack(points), o);
        }
        Vector psi(static_cast<Eigen::Index>(r.per_point.size()));
        for (std::size_t k = 0; k < r.per_point.size(); ++k) {
          psi[static_cast<Eigen::Index>(k)] = r.per_point[k].psi_hat;
        }
        return py::make_tuple(psi, to_py(to_json(r)));
      },
      py::arg("f"), py::arg("points"), py::arg("method") = "action",
      py::arg("renormalize") = true, py::arg("workers") = 0,
      "psi with |grad psi|^2 = f at each row of points. Returns (psi_hat, details).");
  m.def(
      "grid_points", [](const std::string& spec) { return stack(parse_grid_spec(spec).points()); },
      py::arg("spec"), "Tensor grid 'min:max:count,...' with the last axis fastest.");
  m.def("probe_points", [](int dim, std::size_t count, double radius, std::uint64_t seed) {
        return stack(probe_points(dim, count, radius, seed));
      }, py::arg("dim"), py::arg("count") = 50, py::arg("radius") = 2.0, py::arg("seed") = 12345);

  m.def(
      "determination_check",
      [](const DifferentiableField& psi1, const DifferentiableField& psi2, const Matrix& samples,
         bool v_convex_variant, std::uint64_t seed) {
        DeterminationOptions o;
        o.v_convex_variant = v_convex_variant;
        o.seed = seed;
        const auto pts = unstack(samples);
        DeterminationResult r;
        {
          py::gil_scoped_release release;
          r = determination_check(psi1, psi2, pts, o);
        }
        return to_py(to_json(r));
      },
      py::arg("psi1"), py::arg("psi2"), py::arg("samples"), py::arg("v_convex_variant") = false,
      py::arg("seed") = 12345);
  m.def(
      "convexity_criterion_check",
      [](const PotentialPair& p, const Matrix& probes, std::size_t pairs, std::uint64_t seed) {
        const auto pts = unstack(probes);
        ConvexityCriterionResult r;
        {
          py::gil_scoped_release release;
          r = convexity_criterion_check(p, sample_pairs(pts, pairs, seed), pts);
        }
        return to_py(to_json(r));
      },
      py::arg("pair"), py::arg("probes"), py::arg("pairs") = 200, py::arg("seed") = 12345);
  m.def(
      "monotone_gradient",
      [](const DifferentiableField& f, const Matrix& a, const Matrix& b) {
        return to_py(to_json(check_monotone_gradient(f, pairs_from(a, b))));
      },
      py::arg("field"), py::arg("a"), py::arg("b"),
      "Sampled <grad f(a) - grad f(b), a - b> >= 0 over row pairs.");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "evanflow");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process. Returns (code, stdout, stderr).");
}
