#include "evanflow/evanescent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "evanflow/util.hpp"

namespace evanflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---- flat <-> node conversions (node 0 is fixed and excluded) -------------

Vector flatten(const std::vector<Vector>& nodes) {
  const auto n = nodes.front().size();
  Vector flat((static_cast<Eigen::Index>(nodes.size()) - 1) * n);
  for (std::size_t k = 1; k < nodes.size(); ++k) {
    flat.segment((static_cast<Eigen::Index>(k) - 1) * n, n) = nodes[k];
  }
  return flat;
}

void unflatten(const Vector& flat, std::vector<Vector>& nodes) {
  const auto n = nodes.front().size();
  for (std::size_t k = 1; k < nodes.size(); ++k) {
    nodes[k] = flat.segment((static_cast<Eigen::Index>(k) - 1) * n, n);
  }
}

// ---- gradient descent with BB trial steps and Armijo backtracking ---------

// Returns the objective value and fills grad; +inf marks an infeasible point.
using Objective = std::function<double(const Vector&, Vector&)>;

// Symmetric positive definite metric M: descent direction −M⁻¹g.
struct Metric {
  std::function<Vector(const Vector&)> solve;  // M⁻¹x
  std::function<Vector(const Vector&)> apply;  // Mx
};

Metric euclidean() {
  return {[](const Vector& x) { return x; }, [](const Vector& x) { return x; }};
}

struct DescentResult {
  Vector x;
  double value = 0.0;
  double grad_inf = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> history;
};

DescentResult descend(const Objective& obj, Vector x, double tol,
                      std::size_t max_iters, double alpha0, const Metric& metric,
                      bool keep_history) {
  DescentResult r;
  Vector g(x.size());
  double f = obj(x, g);
  if (!std::isfinite(f)) {
    throw NumericDomainError("objective is not finite at the starting point");
  }
  if (keep_history) r.history.push_back(f);
  double alpha = alpha0;
  Vector xn(x.size()), gn(x.size());
  double best_g = g.lpNorm<Eigen::Infinity>();
  std::size_t last_gain = 0;
  std::size_t it = 0;
  for (; it < max_iters; ++it) {
    const double g_inf = g.lpNorm<Eigen::Infinity>();
    if (g_inf < tol) {
      r.converged = true;
      break;
    }
    if (g_inf < 0.99 * best_g) {
      best_g = g_inf;
      last_gain = it;
    } else if (it - last_gain > 500) {
      break;  // stalled: the gradient stopped shrinking
    }
    const Vector d = -metric.solve(g);
    const double slope = g.dot(d);  // < 0
    double fn = kInf;
    bool accepted = false;
    bool secant_tried = false;
    for (int shrink = 0; shrink < 80; ++shrink) {
      xn = x + alpha * d;
      fn = obj(xn, gn);
      if (std::isfinite(fn)) {
        if (fn - f <= 1e-4 * alpha * slope) {
          accepted = true;
          break;
        }
        // Close to the minimizer the Armijo decrease is below rounding in f;
        // use the directional derivative instead, never letting f rise.
        const bool flat = std::abs(fn - f) <=
                          64.0 * std::numeric_limits<double>::epsilon() *
                              std::max(1.0, std::abs(f));
        const double dn = gn.dot(d);
        if (!flat && fn <= f && gn.squaredNorm() < g.squaredNorm()) {
          accepted = true;
          break;
        }
        if (flat && fn <= f && std::abs(dn) <= 0.9 * std::abs(slope)) {
          accepted = true;
          break;
        }
        if (flat && !secant_tried && dn > slope) {
          // minimizer of the quadratic model along d
          alpha *= -slope / (dn - slope);
          secant_tried = true;
          continue;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    const Vector s = xn - x;
    const double sy = s.dot(gn - g);
    alpha = sy > 0.0 ? s.dot(metric.apply(s)) / sy : 2.0 * alpha;
    alpha = std::clamp(alpha, 1e-12, 1e12);
    x.swap(xn);
    g.swap(gn);
    f = fn;
    if (keep_history) r.history.push_back(f);
  }
  if (!r.converged && g.lpNorm<Eigen::Infinity>() < tol) r.converged = true;
  r.x = std::move(x);
  r.value = f;
  r.grad_inf = g.lpNorm<Eigen::Infinity>();
  r.iterations = it;
  return r;
}

// H¹-type metric on nodes 1..N: the kinetic Hessian of the discrete action
// plus the trapezoid mass matrix, applied to each coordinate separately.
Metric sobolev_metric(std::size_t big_n, Eigen::Index dim, double dt) {
  const auto nn = static_cast<Eigen::Index>(big_n);
  Vector diag(nn), off = Vector::Constant(std::max<Eigen::Index>(nn - 1, 0), -1.0 / dt);
  for (Eigen::Index j = 0; j < nn; ++j) {
    diag[j] = j + 1 < nn ? 2.0 / dt + dt : 1.0 / dt + 0.5 * dt;
  }
  auto apply = [=](const Vector& x) {
    Vector y(x.size());
    for (Eigen::Index i = 0; i < dim; ++i) {
      for (Eigen::Index j = 0; j < nn; ++j) {
        double acc = diag[j] * x[j * dim + i];
        if (j > 0) acc += off[j - 1] * x[(j - 1) * dim + i];
        if (j + 1 < nn) acc += off[j] * x[(j + 1) * dim + i];
        y[j * dim + i] = acc;
      }
    }
    return y;
  };
  auto solve = [=](const Vector& b) {
    Vector x(b.size());
    Vector c(nn), d(nn);
    for (Eigen::Index i = 0; i < dim; ++i) {
      // Thomas algorithm
      c[0] = nn > 1 ? off[0] / diag[0] : 0.0;
      d[0] = b[i] / diag[0];
      for (Eigen::Index j = 1; j < nn; ++j) {
        const double m = diag[j] - off[j - 1] * c[j - 1];
        c[j] = j + 1 < nn ? off[j] / m : 0.0;
        d[j] = (b[j * dim + i] - off[j - 1] * d[j - 1]) / m;
      }
      x[(nn - 1) * dim + i] = d[nn - 1];
      for (Eigen::Index j = nn - 2; j >= 0; --j) {
        x[j * dim + i] = d[j] - c[j] * x[(j + 1) * dim + i];
      }
    }
    return x;
  };
  return {solve, apply};
}

// ---- fourth-order finite-difference velocities on a uniform grid ----------

std::vector<Vector> node_velocities(const std::vector<Vector>& w, double dt) {
  const std::size_t m = w.size();
  std::vector<Vector> v(m);
  if (m < 2) {
    for (auto& x : v) x = Vector::Zero(w.front().size());
    return v;
  }
  if (m < 5) {
    // second order: one-sided at the ends, central inside
    for (std::size_t k = 0; k < m; ++k) {
      if (m == 2) {
        v[k] = (w[1] - w[0]) / dt;
      } else if (k == 0) {
        v[k] = (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * dt);
      } else if (k == m - 1) {
        v[k] = (3.0 * w[m - 1] - 4.0 * w[m - 2] + w[m - 3]) / (2.0 * dt);
      } else {
        v[k] = (w[k + 1] - w[k - 1]) / (2.0 * dt);
      }
    }
    return v;
  }
  const double c = 12.0 * dt;
  v[0] = (-25.0 * w[0] + 48.0 * w[1] - 36.0 * w[2] + 16.0 * w[3] - 3.0 * w[4]) / c;
  v[1] = (-3.0 * w[0] - 10.0 * w[1] + 18.0 * w[2] - 6.0 * w[3] + w[4]) / c;
  for (std::size_t k = 2; k + 2 < m; ++k) {
    v[k] = (w[k - 2] - 8.0 * w[k - 1] + 8.0 * w[k + 1] - w[k + 2]) / c;
  }
  const std::size_t e = m - 1;
  v[e - 1] = (3.0 * w[e] + 10.0 * w[e - 1] - 18.0 * w[e - 2] + 6.0 * w[e - 3] -
              w[e - 4]) / c;
  v[e] = (25.0 * w[e] - 48.0 * w[e - 1] + 36.0 * w[e - 2] - 16.0 * w[e - 3] +
          3.0 * w[e - 4]) / c;
  return v;
}

double checked_value(const DifferentiableField& v, const Vector& x) {
  const double val = v.value(x);
  if (!std::isfinite(val)) {
    throw NumericDomainError("V is not finite at " + format_point(x));
  }
  return val;
}

void require_nonnegative(const DifferentiableField& v, const Vector& x) {
  const double val = v.value(x);
  if (val < -1e-12) {
    throw InputError("V is negative (" + format_real(val) + ") at " +
                     format_point(x));
  }
}

// ---- Nelder–Mead ----------------------------------------------------------

struct NmResult {
  Vector x;
  double f = kInf;
  double diameter = 0.0;
  std::size_t evals = 0;
};

NmResult nelder_mead(const std::function<double(const Vector&)>& f,
                     const Vector& start, double step, std::size_t max_evals,
                     double xtol) {
  const auto m = start.size();
  std::vector<Vector> pts(static_cast<std::size_t>(m) + 1, start);
  std::vector<double> val(pts.size());
  for (Eigen::Index i = 0; i < m; ++i) pts[static_cast<std::size_t>(i) + 1][i] += step;
  std::size_t evals = 0;
  auto eval = [&](const Vector& x) {
    ++evals;
    const double y = f(x);
    return std::isnan(y) ? kInf : y;
  };
  for (std::size_t i = 0; i < pts.size(); ++i) val[i] = eval(pts[i]);

  std::vector<std::size_t> order(pts.size());
  auto sort_simplex = [&] {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    std::vector<Vector> p2;
    std::vector<double> v2;
    for (auto i : order) {
      p2.push_back(pts[i]);
      v2.push_back(val[i]);
    }
    pts.swap(p2);
    val.swap(v2);
  };
  auto diameter = [&] {
    double d = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      d = std::max(d, (pts[i] - pts[0]).lpNorm<Eigen::Infinity>());
    }
    return d;
  };

  sort_simplex();
  while (evals < max_evals && diameter() > xtol) {
    const std::size_t worst = pts.size() - 1;
    Vector centroid = Vector::Zero(m);
    for (std::size_t i = 0; i < worst; ++i) centroid += pts[i];
    centroid /= static_cast<double>(worst);

    const Vector xr = centroid + (centroid - pts[worst]);
    const double fr = eval(xr);
    if (fr < val[0]) {
      const Vector xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
    } else if (fr < val[worst - 1]) {
      pts[worst] = xr;
      val[worst] = fr;
    } else {
      const bool outside = fr < val[worst];
      const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid))
                                : Vector(centroid + 0.5 * (pts[worst] - centroid));
      const double fc = eval(xc);
      if (fc < std::min(fr, val[worst])) {
        pts[worst] = xc;
        val[worst] = fc;
      } else {
        for (std::size_t i = 1; i < pts.size(); ++i) {
          pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
          val[i] = eval(pts[i]);
        }
      }
    }
    sort_simplex();
  }
  return {pts[0], val[0], diameter(), evals};
}

// ---- hyperspherical coordinates -------------------------------------------

Vector direction_from_angles(const Vector& phi) {
  const auto n = phi.size() + 1;
  Vector d(n);
  double s = 1.0;
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    d[i] = s * std::cos(phi[i]);
    s *= std::sin(phi[i]);
  }
  d[n - 1] = s;
  return d;
}

Vector angles_from_direction(const Vector& d) {
  const auto n = d.size();
  Vector phi(n - 1);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double rest = d.tail(n - i - 1).norm();
    phi[i] = std::atan2(rest, d[i]);
  }
  // last angle carries the sign of the final component
  if (d[n - 1] < 0.0) phi[n - 2] = 2.0 * std::numbers::pi - phi[n - 2];
  return phi;
}

// Angle grid for the coarse scan: 64 / 16×32 / 12×12×24 points.
std::vector<Vector> angle_grid(Eigen::Index m) {
  std::vector<Vector> grid;
  const double pi = std::numbers::pi;
  if (m == 1) {
    for (int i = 0; i < 64; ++i) grid.push_back(Vector::Constant(1, 2 * pi * i / 64));
    return grid;
  }
  const int polar = m == 2 ? 16 : 12;
  const int azimuth = m == 2 ? 32 : 24;
  const int inner = m == 2 ? 1 : 12;
  for (int a = 0; a < polar; ++a) {
    for (int b = 0; b < inner; ++b) {
      for (int c = 0; c < azimuth; ++c) {
        Vector phi(m);
        phi[0] = pi * (a + 0.5) / polar;
        if (m == 3) phi[1] = pi * (b + 0.5) / inner;
        phi[m - 1] = 2 * pi * c / azimuth;
        grid.push_back(phi);
      }
    }
  }
  return grid;
}

std::vector<double> stage_horizons(double first, double horizon) {
  std::vector<double> hs;
  for (double h = first; h < horizon; h *= 2.0) hs.push_back(h);
  hs.push_back(horizon);
  return hs;
}

void finish_diagnostics(EvanescentSolveResult& r, const DifferentiableField& v,
                        std::optional<double> tol) {
  r.diagnostics.subject = to_string(r.method) + " evanescent orbit";
  r.diagnostics.add(check_first_integral(r.orbit, v, tol));
  r.diagnostics.add(check_modula_equality_v(r.orbit, v, tol));
}

}  // namespace

ActionValue discrete_action(const DifferentiableField& v,
                            const std::vector<Vector>& nodes, double dt,
                            double mu) {
  if (nodes.size() < 3) throw InputError("discrete action needs N >= 2");
  if (!(dt > 0.0)) throw InputError("dt must be positive");
  const std::size_t n_int = nodes.size() - 1;
  ActionValue out;
  out.gradient.assign(n_int, Vector::Zero(nodes.front().size()));
  std::vector<double> vals(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) vals[k] = checked_value(v, nodes[k]);

  // Neumaier summation keeps the value accurate enough for line searches
  // near the optimum, where decreases approach rounding level.
  double sum = 0.0, comp = 0.0;
  auto accumulate = [&](double term) {
    const double t = sum + term;
    comp += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
    sum = t;
  };
  for (std::size_t k = 0; k < n_int; ++k) {
    const Vector diff = nodes[k + 1] - nodes[k];
    accumulate(0.5 * diff.squaredNorm() / dt);
    accumulate(0.5 * dt * (vals[k] + vals[k + 1]));
    // kinetic term couples neighbours; w_0 has no gradient slot
    out.gradient[k] += diff / dt;
    if (k > 0) out.gradient[k - 1] -= diff / dt;
  }
  accumulate(mu * vals.back());
  out.value = sum + comp;
  for (std::size_t k = 1; k <= n_int; ++k) {
    const double weight = k == n_int ? 0.5 * dt + mu : dt;
    out.gradient[k - 1] += weight * v.gradient(nodes[k]);
  }
  return out;
}

double el_residual(const DifferentiableField& v,
                   const std::vector<Vector>& nodes, double dt) {
  double worst = 0.0;
  for (std::size_t k = 1; k + 1 < nodes.size(); ++k) {
    const Vector acc = (nodes[k + 1] - 2.0 * nodes[k] + nodes[k - 1]) / (dt * dt);
    worst = std::max(worst, (acc - v.gradient(nodes[k])).norm());
  }
  return worst;
}

Trajectory path_to_trajectory(const DiscretePath& path) {
  Trajectory t;
  t.system = SystemTag::second_order;
  t.states = path.nodes;
  t.velocities = node_velocities(path.nodes, path.dt);
  t.times.resize(path.nodes.size());
  for (std::size_t k = 0; k < path.nodes.size(); ++k) t.times[k] = path.time(k);
  t.meta.method = Method::rk4;
  t.meta.step = path.dt;
  t.meta.n_steps = path.intervals();
  return t;
}

std::string to_string(SolveMethod m) {
  return m == SolveMethod::action ? "action" : "shooting";
}

void ActionOptions::validate() const {
  if (!(horizon > 0.0)) throw InputError("horizon T must be positive");
  if (n < 2) throw InputError("N must be at least 2");
  if (mu && !(*mu >= 0.0)) throw InputError("mu must be nonnegative");
  if (!(tol_opt > 0.0)) throw InputError("tol_opt must be positive");
  if (max_iters == 0) throw InputError("max_iters must be positive");
  if (init_path && init_path->size() != n + 1) {
    throw InputError("initial path must have N+1 nodes");
  }
}

void ShootOptions::validate() const {
  if (!(horizon > 0.0)) throw InputError("horizon T must be positive");
  if (!(first_horizon > 0.0)) throw InputError("first horizon must be positive");
  if (!(rtol >= 1e-12 && rtol <= 1e-2)) {
    throw InputError("rtol must lie in [1e-12, 1e-2]");
  }
  if (!(atol > 0.0)) throw InputError("atol must be positive");
  if (max_evals == 0) throw InputError("max_evals must be positive");
}

nlohmann::json to_json(const EvanescentSolveResult& r) {
  auto v0 = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.v0.size(); ++i) v0.push_back(r.v0[i]);
  nlohmann::json j = {{"method", to_string(r.method)},
                      {"converged", r.converged},
                      {"optimizer_converged", r.optimizer_converged},
                      {"solved", r.solved},
                      {"final_action", r.final_action},
                      {"el_residual", r.el_residual},
                      {"iterations", r.iterations},
                      {"v0", v0},
                      {"tail_speed", r.tail_speed},
                      {"tail_V", r.tail_v},
                      {"horizon", r.orbit.size() ? r.orbit.end_time() : 0.0},
                      {"notes", r.notes},
                      {"diagnostics", to_json(r.diagnostics)}};
  if (r.method == SolveMethod::action) {
    j["mu"] = r.mu;
    j["N"] = r.path ? r.path->intervals() : 0;
  } else {
    j["penalty"] = std::isfinite(r.penalty) ? nlohmann::json(r.penalty)
                                            : nlohmann::json("inf");
  }
  return j;
}

EvanescentSolveResult minimize_action(const DifferentiableField& v,
                                      const Vector& x0,
                                      const ActionOptions& opts) {
  opts.validate();
  if (x0.size() != v.dim()) throw InputError("x0 has the wrong dimension");
  require_nonnegative(v, x0);
  const std::size_t big_n = opts.n;
  const double dt = opts.horizon / static_cast<double>(big_n);

  std::vector<Vector> nodes;
  if (opts.init_path) {
    nodes = *opts.init_path;
    for (const auto& w : nodes) {
      if (w.size() != x0.size()) throw InputError("initial path has the wrong dimension");
    }
    nodes.front() = x0;
  } else {
    // Straight line towards a (capped) descent point of V.
    Objective on_v = [&](const Vector& x, Vector& g) {
      const double val = v.value(x);
      if (!std::isfinite(val)) return kInf;
      g = v.gradient(x);
      return val;
    };
    auto pre = descend(on_v, x0, 1e-10, 2000, 1.0 / (1.0 + v.gradient(x0).norm()),
                       euclidean(), false);
    Vector target = pre.x;
    const double cap = 10.0 * (1.0 + x0.norm());
    if ((target - x0).norm() > cap) {
      target = x0 + cap * (target - x0).normalized();
    }
    nodes.resize(big_n + 1);
    for (std::size_t k = 0; k <= big_n; ++k) {
      const double s = static_cast<double>(k) / static_cast<double>(big_n);
      nodes[k] = x0 + s * (target - x0);
    }
  }
  for (const auto& w : nodes) require_nonnegative(v, w);

  const bool auto_mu = !opts.mu.has_value();
  double mu = opts.mu.value_or(1.0);
  bool mu_settled = !auto_mu;
  std::size_t total_iters = 0;
  DescentResult last;
  const Metric metric = sobolev_metric(big_n, x0.size(), dt);
  std::ostringstream notes;

  for (std::size_t round = 0; round < (auto_mu ? opts.mu_rounds : 1); ++round) {
    Objective obj = [&](const Vector& flat, Vector& g) {
      std::vector<Vector> trial = nodes;
      unflatten(flat, trial);
      try {
        auto a = discrete_action(v, trial, dt, mu);
        g = flatten([&] {
          std::vector<Vector> full{x0};
          full.insert(full.end(), a.gradient.begin(), a.gradient.end());
          return full;
        }());
        return a.value;
      } catch (const NumericDomainError&) {
        return kInf;
      }
    };
    const std::size_t budget = opts.max_iters > total_iters ? opts.max_iters - total_iters : 0;
    last = descend(obj, flatten(nodes), opts.tol_opt, budget, 1.0, metric, true);
    total_iters += last.iterations;
    unflatten(last.x, nodes);
    if (!auto_mu || budget == 0) break;

    const Vector& wn = nodes.back();
    const double vn = v.value(wn);
    const double gn = v.gradient(wn).norm();
    if (!(vn > 1e-30) || !(gn > 0.0)) {
      mu_settled = true;
      break;
    }
    const double target = std::clamp(std::sqrt(2.0 * vn) / gn, 1e-6, 1e6);
    if (std::abs(target - mu) <= 1e-3 * mu) {
      mu_settled = true;
      break;
    }
    mu = target;
  }

  EvanescentSolveResult r;
  r.method = SolveMethod::action;
  r.mu = mu;
  r.iterations = total_iters;
  r.optimizer_converged = last.converged;
  r.action_history = std::move(last.history);

  DiscretePath path;
  path.nodes = nodes;
  path.dt = dt;
  path.terminal_penalty_weight = mu;
  path.action = discrete_action(v, nodes, dt, mu).value;
  path.el_residual = el_residual(v, nodes, dt);
  r.final_action = path.action;
  r.el_residual = path.el_residual;
  r.orbit = path_to_trajectory(path);
  r.v0 = r.orbit.velocities.front();
  r.tail_speed = r.orbit.velocities.back().norm();
  r.tail_v = v.value(nodes.back());
  r.path = std::move(path);

  r.solved = r.optimizer_converged && mu_settled && r.el_residual < opts.tol_el;
  r.converged =
      r.solved && r.tail_speed < opts.eps_tail && r.tail_v < opts.eps_tail;
  notes << "iterations " << total_iters << ", |grad|_inf "
        << format_real(last.grad_inf) << ", mu " << format_real(mu)
        << (auto_mu ? (mu_settled ? " (calibrated)" : " (calibration unsettled)")
                    : " (fixed)");
  if (!r.optimizer_converged) notes << "; optimizer stopped before tol_opt";
  if (!(r.tail_speed < opts.eps_tail && r.tail_v < opts.eps_tail)) {
    notes << "; terminal tails above eps_tail";
  }
  r.notes = notes.str();

  // Discrete paths are O(dt²) accurate, so identities are checked at that scale.
  const double scale = 1.0 + std::sqrt(2.0 * std::max(0.0, v.value(x0)));
  finish_diagnostics(r, v, dt * dt * scale * scale);
  return r;
}

EvanescentSolveResult shoot_evanescent(const DifferentiableField& v,
                                       const Vector& x0,
                                       const ShootOptions& opts) {
  opts.validate();
  if (x0.size() != v.dim()) throw InputError("x0 has the wrong dimension");
  require_nonnegative(v, x0);
  const double speed = std::sqrt(std::max(0.0, v.value(x0)));
  const double radius = std::sqrt(2.0) * speed;
  const auto n = x0.size();

  EvanescentSolveResult r;
  r.method = SolveMethod::shooting;
  std::size_t evals = 0;

  // [v'(T); √(2V(v(T)))], so that the penalty is its squared norm.
  auto terminal_residual = [&](const Vector& v0,
                               double horizon) -> std::optional<Vector> {
    ++evals;
    IntegratorOptions io;
    io.method = Method::adaptive;
    io.horizon = horizon;
    io.rtol = opts.rtol;
    io.atol = opts.atol;
    io.max_step = kInf;
    io.r_max = opts.r_max;
    try {
      auto t = second_order_flow(v, x0, v0, io);
      if (t.termination == Termination::diverged ||
          t.termination == Termination::step_collapse) {
        return std::nullopt;
      }
      Vector out(n + 1);
      out.head(n) = t.velocities.back();
      out[n] = std::sqrt(2.0 * std::max(0.0, v.value(t.states.back())));
      if (!out.allFinite()) return std::nullopt;
      return out;
    } catch (const NumericDomainError&) {
      return std::nullopt;
    }
  };
  auto penalty = [&](const Vector& v0, double horizon) {
    auto r = terminal_residual(v0, horizon);
    return r ? r->squaredNorm() : kInf;
  };

  Vector dir = Vector::Zero(n);
  std::ostringstream notes;
  if (radius == 0.0) {
    r.optimizer_converged = true;
    notes << "V(x0) = 0: equilibrium";
  } else {
    const auto horizons = stage_horizons(opts.first_horizon, opts.horizon);
    const Vector hint = -v.gradient(x0);

    if (n == 1) {
      double best = kInf;
      dir = Vector::Constant(1, hint[0] > 0 ? 1.0 : -1.0);
      for (double h : horizons) {
        const double pp = penalty(Vector::Constant(1, radius), h);
        const double pm = penalty(Vector::Constant(1, -radius), h);
        if (!std::isfinite(pp) && !std::isfinite(pm)) break;
        dir[0] = pm <= pp ? -1.0 : 1.0;
        best = std::min(pp, pm);
      }
      r.optimizer_converged = std::isfinite(best);
    } else if (n <= 4) {
      const auto m = n - 1;
      auto objective = [&](double h) {
        return [&, h](const Vector& phi) {
          return penalty(radius * direction_from_angles(phi), h);
        };
      };
      auto f0 = objective(horizons.front());
      Vector best_phi;
      double best_f = kInf;
      auto grid = angle_grid(m);
      if (hint.norm() > 0.0) grid.push_back(angles_from_direction(hint.normalized()));
      for (const auto& phi : grid) {
        const double f = f0(phi);
        if (f < best_f) {
          best_f = f;
          best_phi = phi;
        }
      }
      if (!std::isfinite(best_f)) {
        throw NumericDomainError("shooting: every scanned direction diverged");
      }
      double step = std::numbers::pi / 32.0;
      bool finished = true;
      for (double h : horizons) {
        auto nm = nelder_mead(objective(h), best_phi, step, opts.max_evals, 1e-15);
        if (nm.f < kInf) {
          best_phi = nm.x;
          best_f = nm.f;
        }
        finished = nm.evals < opts.max_evals;
        step = std::clamp(100.0 * nm.diameter, 1e-10, 0.1);
      }
      r.optimizer_converged = finished && std::isfinite(best_f);
      dir = direction_from_angles(best_phi);
    } else {
      // Projected Gauss–Newton (Levenberg–Marquardt) on the sphere: the
      // penalty is a sum of squares whose scales differ by e^{2λT} across
      // modes, which defeats plain gradient steps.
      dir = hint.norm() > 0.0 ? Vector(hint.normalized()) : Vector(Vector::Unit(n, 0));
      bool finished = true;
      for (double h : horizons) {
        auto res = [&](const Vector& d) { return terminal_residual(radius * d.normalized(), h); };
        auto r0 = res(dir);
        if (!r0) break;
        double p0 = r0->squaredNorm();
        double lambda = 1e-6;
        std::size_t used = 1;
        finished = false;
        while (used + 2 * static_cast<std::size_t>(n) < opts.max_evals) {
          const Matrix basis =
              Eigen::HouseholderQR<Matrix>(Matrix(dir)).householderQ() *
              Matrix::Identity(n, n);
          const Matrix tangent = basis.rightCols(n - 1);
          Matrix jac(r0->size(), n - 1);
          bool ok = true;
          for (Eigen::Index i = 0; i < n - 1 && ok; ++i) {
            const double step = 1e-6;
            auto rp = res(dir + step * tangent.col(i));
            auto rm = res(dir - step * tangent.col(i));
            ok = rp && rm;
            if (ok) jac.col(i) = (*rp - *rm) / (2.0 * step);
          }
          used += 2 * static_cast<std::size_t>(n - 1);
          if (!ok) break;
          const Matrix jtj = jac.transpose() * jac;
          const Vector jtr = jac.transpose() * *r0;
          bool moved = false;
          while (lambda < 1e12 && used < opts.max_evals) {
            Matrix damped = jtj;
            damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-300);
            const Vector delta = damped.ldlt().solve(-jtr);
            const Vector cand = (dir + tangent * delta).normalized();
            auto rc = res(cand);
            ++used;
            if (rc && rc->squaredNorm() < p0) {
              moved = (cand - dir).norm() > 1e-15;
              dir = cand;
              r0 = rc;
              p0 = rc->squaredNorm();
              lambda = std::max(lambda / 10.0, 1e-12);
              break;
            }
            lambda *= 10.0;
          }
          if (!moved) {
            finished = true;
            break;
          }
        }
      }
      r.optimizer_converged = finished;
    }
  }

  r.v0 = radius * dir;
  IntegratorOptions io;
  io.method = Method::adaptive;
  io.horizon = opts.horizon;
  io.rtol = opts.rtol;
  io.atol = opts.atol;
  io.max_step = opts.output_max_step;
  io.r_max = opts.r_max;
  r.orbit = second_order_flow(v, x0, r.v0, io);
  r.iterations = evals;
  r.tail_speed = r.orbit.velocities.back().norm();
  r.tail_v = v.value(r.orbit.states.back());
  r.penalty = r.tail_speed * r.tail_speed + 2.0 * r.tail_v;
  const bool global = r.orbit.termination == Termination::horizon_reached ||
                      r.orbit.termination == Termination::critical_point_reached;
  r.final_action =
      r.orbit.size() >= 2
          ? path_integral(r.orbit,
                          [&](double, const Vector& x, const Vector& w) {
                            return 0.5 * w.squaredNorm() + v.value(x);
                          })
          : 0.0;
  r.solved = global && std::isfinite(r.penalty);
  r.converged = r.solved && r.tail_speed < opts.eps_tail && r.tail_v < opts.eps_tail;
  notes << (notes.tellp() > 0 ? "; " : "") << "penalty evaluations " << evals
        << ", orbit " << to_string(r.orbit.termination);
  if (!r.converged) notes << "; terminal tails above eps_tail";
  r.notes = notes.str();
  finish_diagnostics(r, v, std::nullopt);
  return r;
}

CrossValidateOptions::CrossValidateOptions() {
  flow.method = Method::adaptive;
  flow.rtol = 1e-10;
  flow.max_step = 1e-3;
}

namespace {

// Max distance between a grid path and an orbit sampled at the grid times.
std::pair<double, double> max_gap(const std::vector<Vector>& nodes, double dt,
                                  const Trajectory& orbit) {
  double worst = 0.0;
  double where = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double t = static_cast<double>(k) * dt;
    double d = kInf;
    if (t <= orbit.end_time() * (1.0 + 1e-12)) {
      d = (nodes[k] - state_at(orbit, std::min(t, orbit.end_time()))).norm();
    }
    if (!(d <= worst)) {
      worst = d;
      where = t;
    }
  }
  return {worst, where};
}

std::vector<Vector> sample_nodes(const Trajectory& orbit, std::size_t count, double dt) {
  std::vector<Vector> out;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = std::min(static_cast<double>(k) * dt, orbit.end_time());
    out.push_back(state_at(orbit, t));
  }
  return out;
}

}  // namespace

CrossValidation cross_validate(const PotentialPair& pair, const Vector& x0,
                               const CrossValidateOptions& opts) {
  CrossValidation out;
  out.report.subject = "cross-validation for " + pair.psi.name() + " from " +
                       format_point(x0);

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double half = 1.0 + x0.lpNorm<Eigen::Infinity>();
  std::vector<std::pair<Vector, Vector>> pairs;
  for (std::size_t k = 0; k < opts.convexity_pairs; ++k) {
    Vector a(x0.size()), b(x0.size());
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
      a[i] = x0[i] + half * unit(rng);
      b[i] = x0[i] + half * unit(rng);
    }
    pairs.emplace_back(a, b);
  }
  auto pre = check_monotone_gradient(pair.psi, pairs);
  pre.check_id = "convexity_precheck";
  out.hypothesis_met = pre.passed;
  out.report.add(pre);

  IntegratorOptions flow_opts = opts.flow;
  flow_opts.horizon = opts.action.horizon;
  ShootOptions shoot_opts = opts.shoot;
  shoot_opts.horizon = opts.action.horizon;
  out.flow = gradient_flow(pair, x0, flow_opts);
  out.action = minimize_action(pair.v, x0, opts.action);
  out.shooting = shoot_evanescent(pair.v, x0, shoot_opts);

  const auto& nodes = out.action.path->nodes;
  const double dt = out.action.path->dt;
  const auto shoot_nodes = sample_nodes(out.shooting.orbit, nodes.size(), dt);

  auto gap_check = [&](const char* id, const std::vector<Vector>& a,
                       const Trajectory& b, const std::string& what) {
    auto [gap, t] = max_gap(a, dt, b);
    out.report.add(CheckResult::make(id, gap, opts.tol_xv, t,
                                     "max node distance, " + what));
  };
  gap_check("xv_flow_action", nodes, out.flow, "gradient flow vs action path");
  gap_check("xv_flow_shooting", shoot_nodes, out.flow,
            "gradient flow vs shooting orbit");
  gap_check("xv_action_shooting", nodes, out.shooting.orbit,
            "action path vs shooting orbit");

  auto phi_a = check_phi_residual(out.action.orbit, pair.psi, +1, opts.phi_tol);
  phi_a.check_id = "phi_residual_action";
  phi_a.notes += ", action converged: " + std::string(out.action.converged ? "true" : "false");
  out.report.add(phi_a);
  auto phi_s = check_phi_residual(out.shooting.orbit, pair.psi, +1, opts.phi_tol);
  phi_s.check_id = "phi_residual_shooting";
  phi_s.notes += ", shooting converged: " +
                 std::string(out.shooting.converged ? "true" : "false");
  out.report.add(phi_s);
  return out;
}

}  // namespace evanflow
