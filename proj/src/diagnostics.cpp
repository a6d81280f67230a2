#include "evanflow/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "evanflow/util.hpp"

namespace evanflow {

CheckResult CheckResult::make(std::string id, double violation,
                              double tolerance, Location where,
                              std::string notes) {
  CheckResult r;
  r.check_id = std::move(id);
  r.worst_violation = std::isnan(violation) ? violation : std::max(0.0, violation);
  r.tolerance_used = tolerance;
  r.passed = r.worst_violation <= tolerance;
  r.worst_location = std::move(where);
  r.notes = std::move(notes);
  return r;
}

std::size_t DiagnosticsReport::passed_count() const {
  return static_cast<std::size_t>(
      std::count_if(checks.begin(), checks.end(),
                    [](const CheckResult& c) { return c.passed; }));
}

const CheckResult* DiagnosticsReport::find(std::string_view id) const {
  for (const auto& c : checks) {
    if (c.check_id == id) return &c;
  }
  return nullptr;
}

namespace {

nlohmann::json vector_json(const Vector& x) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < x.size(); ++i) arr.push_back(x[i]);
  return arr;
}

// NaN/inf are not representable in JSON numbers.
nlohmann::json real_json(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

void require_system(const Trajectory& traj, SystemTag tag, const char* check) {
  if (traj.system != tag) {
    throw InputError(std::string(check) + " needs a " + to_string(tag) +
                     " trajectory");
  }
  if (traj.size() == 0) throw InputError(std::string(check) + ": empty trajectory");
}

// Tracks the entry with the largest excess violation − tolerance.
struct Worst {
  double violation = 0.0;
  double tolerance = 0.0;
  Location where;
  double excess = -std::numeric_limits<double>::infinity();
  bool nan_seen = false;

  void offer(double v, double tol, Location at) {
    if (std::isnan(v)) {
      if (!nan_seen) {
        nan_seen = true;
        violation = v;
        tolerance = tol;
        where = std::move(at);
      }
      return;
    }
    if (nan_seen) return;
    v = std::max(0.0, v);
    if (v - tol > excess) {
      excess = v - tol;
      violation = v;
      tolerance = tol;
      where = std::move(at);
    }
  }
};

// Largest positive jump of a sequence sampled on the trajectory nodes.
Worst max_increase(const Trajectory& traj, const std::vector<double>& seq,
                   double tol) {
  Worst w;
  w.tolerance = tol;
  w.where = traj.times.front();
  for (std::size_t k = 1; k < seq.size(); ++k) {
    w.offer(seq[k] - seq[k - 1], tol, traj.times[k]);
  }
  return w;
}

}  // namespace

nlohmann::json to_json(const Location& where) {
  if (std::holds_alternative<double>(where)) {
    return {{"t", real_json(std::get<double>(where))}};
  }
  if (std::holds_alternative<Vector>(where)) {
    return {{"x", vector_json(std::get<Vector>(where))}};
  }
  return nullptr;
}

nlohmann::json to_json(const CheckResult& r) {
  return {{"check_id", r.check_id},
          {"passed", r.passed},
          {"worst_violation", real_json(r.worst_violation)},
          {"worst_location", to_json(r.worst_location)},
          {"tolerance_used", r.tolerance_used},
          {"notes", r.notes}};
}

nlohmann::json to_json(const DiagnosticsReport& report) {
  auto checks = nlohmann::json::array();
  for (const auto& c : report.checks) checks.push_back(to_json(c));
  return {{"subject", report.subject},
          {"checks", checks},
          {"summary",
           {{"total", report.checks.size()},
            {"passed", report.passed_count()},
            {"failed", report.failed_count()}}}};
}

CheckResult check_lyapunov_psi(const Trajectory& traj,
                               const DifferentiableField& psi,
                               std::optional<double> tol) {
  require_system(traj, SystemTag::first_order, "lyapunov_psi");
  std::vector<double> rho;
  rho.reserve(traj.size());
  for (const auto& s : traj.states) rho.push_back(psi.value(s));
  const double t = tol.value_or(1e-8 * (1.0 + std::abs(rho.front())));
  auto w = max_increase(traj, rho, t);
  return CheckResult::make("lyapunov_psi", w.violation, t, w.where,
                           "max positive increment of psi(u(t))");
}

CheckResult check_energy_identity(const Trajectory& traj,
                                  const DifferentiableField& psi,
                                  std::optional<double> tol) {
  require_system(traj, SystemTag::first_order, "energy_identity");
  const double rho0 = psi.value(traj.states.front());
  const double rho_t = psi.value(traj.states.back());
  double kinetic = 0.0;
  if (traj.size() >= 2) {
    kinetic = path_integral(traj, [](double, const Vector&, const Vector& w) {
      return w.squaredNorm();
    });
  }
  const double t = tol.value_or(1e-5 * (1.0 + std::abs(rho0)));
  std::ostringstream notes;
  notes << "int |u'|^2 = " << format_real(kinetic)
        << ", rho(0) - rho(T) = " << format_real(rho0 - rho_t);
  return CheckResult::make("energy_identity",
                           std::abs(kinetic - (rho0 - rho_t)), t,
                           traj.end_time(), notes.str());
}

CheckResult check_grad_norm_monotone(const Trajectory& traj,
                                     const DifferentiableField& psi,
                                     std::optional<double> tol) {
  require_system(traj, SystemTag::first_order, "grad_norm_monotone");
  std::vector<double> g;
  g.reserve(traj.size());
  for (const auto& s : traj.states) g.push_back(psi.gradient(s).norm());
  const double t = tol.value_or(1e-8 * (1.0 + g.front()));
  auto w = max_increase(traj, g, t);
  return CheckResult::make("grad_norm_monotone", w.violation, t, w.where,
                           "max positive increment of |grad psi(u(t))|");
}

CheckResult check_distance_monotone(const Trajectory& traj, const Vector& xhat,
                                    const DifferentiableField& psi,
                                    double eps_crit, std::optional<double> tol) {
  require_system(traj, SystemTag::first_order, "distance_monotone");
  if (!(psi.gradient(xhat).norm() < eps_crit)) {
    throw InputError("distance_monotone: " + format_point(xhat) +
                     " is not a critical point");
  }
  std::vector<double> d;
  d.reserve(traj.size());
  for (const auto& s : traj.states) d.push_back((s - xhat).norm());
  const double t = tol.value_or(1e-8 * (1.0 + d.front()));
  auto w = max_increase(traj, d, t);
  return CheckResult::make("distance_monotone", w.violation, t, w.where,
                           "xhat = " + format_point(xhat));
}

CheckResult check_velocity_bound(const Trajectory& traj,
                                 const DifferentiableField& psi,
                                 const Vector& y, std::optional<double> tol) {
  require_system(traj, SystemTag::first_order, "velocity_bound");
  const double grad_y = psi.gradient(y).norm();
  const double dist0 = (traj.states.front() - y).norm();
  const double t_tol = tol.value_or(1e-8);
  Worst w;
  w.tolerance = t_tol;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double t = traj.times[k];
    if (!(t > 0.0)) continue;
    w.offer(traj.velocities[k].norm() - grad_y - dist0 / t, t_tol, t);
  }
  return CheckResult::make("velocity_bound", w.violation, t_tol, w.where,
                           "y = " + format_point(y));
}

CheckResult check_level_integral_bound(const Trajectory& traj,
                                       const DifferentiableField& psi,
                                       const Vector& crit_point,
                                       double eps_crit,
                                       std::optional<double> tol) {
  require_system(traj, SystemTag::first_order, "level_integral_bound");
  if (!(psi.gradient(crit_point).norm() < eps_crit)) {
    throw InputError("level_integral_bound: " + format_point(crit_point) +
                     " is not a critical point");
  }
  const double psi_min = psi.value(crit_point);
  const double lhs =
      traj.size() >= 2
          ? path_integral(traj,
                          [&](double, const Vector& x, const Vector&) {
                            return psi.value(x) - psi_min;
                          })
          : 0.0;
  const Vector& x0 = traj.states.front();
  const double rhs = 0.5 * (x0 - crit_point).squaredNorm();
  const double t = tol.value_or(1e-6 * (1.0 + x0.squaredNorm()));
  std::ostringstream notes;
  notes << "int (psi(u) - psi(xhat)) = " << format_real(lhs)
        << ", bound 0.5|u(0) - xhat|^2 = " << format_real(rhs);
  return CheckResult::make("level_integral_bound", lhs - rhs, t,
                           traj.end_time(), notes.str());
}

CheckResult check_limit_point(const Trajectory& traj,
                              const DifferentiableField& psi,
                              double eps_conv) {
  require_system(traj, SystemTag::first_order, "limit_point");
  if (traj.termination == Termination::diverged) {
    return CheckResult::make("limit_point", 0.0, eps_conv, traj.end_time(),
                             "orbit diverged: consistent with empty Crit_psi "
                             "(|u(t)| unbounded)");
  }
  const double grad_end = psi.gradient(traj.states.back()).norm();

  // Diameter of the last 10% of the orbit, on at most 400 evenly spaced nodes.
  const std::size_t m = traj.size();
  const std::size_t first = m - std::max<std::size_t>(1, m / 10);
  std::vector<std::size_t> idx;
  const std::size_t count = m - first;
  const std::size_t stride = std::max<std::size_t>(1, count / 400);
  for (std::size_t k = first; k < m; k += stride) idx.push_back(k);
  if (idx.back() != m - 1) idx.push_back(m - 1);
  double spread = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      spread = std::max(spread,
                        (traj.states[idx[i]] - traj.states[idx[j]]).norm());
    }
  }
  std::ostringstream notes;
  notes << "|grad psi(u(T))| = " << format_real(grad_end)
        << ", tail diameter = " << format_real(spread)
        << ", limit estimate " << format_point(traj.states.back());
  return CheckResult::make("limit_point", std::max(grad_end, spread), eps_conv,
                           traj.end_time(), notes.str());
}

CheckResult check_first_integral(const Trajectory& traj,
                                 const DifferentiableField& v,
                                 std::optional<double> tol) {
  require_system(traj, SystemTag::second_order, "first_integral");
  const auto energy = [&](std::size_t k) {
    return 0.5 * traj.velocities[k].squaredNorm() - v.value(traj.states[k]);
  };
  const double i0 = energy(0);
  const double t = tol.value_or(1e-6 * (1.0 + std::abs(i0)));
  Worst w;
  w.tolerance = t;
  w.where = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    w.offer(std::abs(energy(k) - i0), t, traj.times[k]);
  }
  return CheckResult::make("first_integral", w.violation, t, w.where,
                           "I(0) = " + format_real(i0));
}

CheckResult check_modula_equality(const Trajectory& traj,
                                  const DifferentiableField& psi,
                                  std::optional<double> tol) {
  require_system(traj, SystemTag::second_order, "modula_equality");
  const double t = tol.value_or(1e-6 * (1.0 + traj.velocities.front().norm()));
  Worst w;
  w.tolerance = t;
  w.where = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    w.offer(std::abs(traj.velocities[k].norm() -
                     psi.gradient(traj.states[k]).norm()),
            t, traj.times[k]);
  }
  return CheckResult::make("modula_equality", w.violation, t, w.where,
                           "max | |v'| - |grad psi(v)| |");
}

CheckResult check_modula_equality_v(const Trajectory& traj,
                                    const DifferentiableField& v,
                                    std::optional<double> tol) {
  require_system(traj, SystemTag::second_order, "modula_equality_v");
  const double t = tol.value_or(1e-6 * (1.0 + traj.velocities.front().norm()));
  Worst w;
  w.tolerance = t;
  w.where = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double speed = std::sqrt(2.0 * std::max(0.0, v.value(traj.states[k])));
    w.offer(std::abs(traj.velocities[k].norm() - speed), t, traj.times[k]);
  }
  return CheckResult::make("modula_equality_v", w.violation, t, w.where,
                           "max | |v'| - sqrt(2 V(v)) |");
}

CheckResult check_phi_residual(const Trajectory& traj,
                               const DifferentiableField& psi, int sigma,
                               std::optional<double> tol) {
  require_system(traj, SystemTag::second_order, "phi_residual");
  if (sigma != 1 && sigma != -1) throw InputError("sigma must be +1 or -1");
  const double t = tol.value_or(1e-5);
  Worst w;
  w.tolerance = t;
  w.where = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    w.offer((traj.velocities[k] + sigma * psi.gradient(traj.states[k])).norm(),
            t, traj.times[k]);
  }
  return CheckResult::make("phi_residual", w.violation, t, w.where,
                           sigma > 0 ? "sigma = +1" : "sigma = -1");
}

CheckResult check_hardy(const Trajectory& traj, std::optional<double> tol) {
  if (traj.size() < 2) throw InputError("hardy: needs at least two nodes");
  const Vector x0 = traj.states.front();
  const auto lhs = cumulative_integral(
      traj, [&](double t, const Vector& x, const Vector& w) {
        return t == 0.0 ? w.squaredNorm() : (x - x0).squaredNorm() / (t * t);
      });
  const auto rhs = cumulative_integral(
      traj, [](double, const Vector&, const Vector& w) { return w.squaredNorm(); });
  const double t = tol.value_or(1e-6 * (1.0 + rhs.back()));
  Worst w;
  w.tolerance = t;
  w.where = traj.end_time();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    w.offer(lhs[k] - 4.0 * rhs[k], t, traj.times[k]);
  }
  std::ostringstream notes;
  notes << "at T: lhs = " << format_real(lhs.back())
        << ", 4*int|v'|^2 = " << format_real(4.0 * rhs.back());
  return CheckResult::make("hardy", w.violation, t, w.where, notes.str());
}

CheckResult check_contraction(const Trajectory& a, const Trajectory& b,
                              std::optional<double> tol) {
  require_system(a, SystemTag::second_order, "contraction");
  require_system(b, SystemTag::second_order, "contraction");
  if (a.times != b.times) {
    throw InputError("contraction: trajectories must share a time grid");
  }
  std::vector<double> q(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    q[k] = 0.5 * (a.states[k] - b.states[k]).squaredNorm();
  }
  const double t = tol.value_or(1e-6 * (1.0 + q.front()));
  Worst mono = max_increase(a, q, t);
  Worst convex;
  convex.tolerance = t;
  convex.where = a.times.front();
  for (std::size_t k = 1; k + 1 < q.size(); ++k) {
    const double h1 = a.times[k] - a.times[k - 1];
    const double h2 = a.times[k + 1] - a.times[k];
    // second divided difference; reduces to (q₊ − 2q + q₋)/h² on uniform grids
    const double second =
        2.0 * ((q[k + 1] - q[k]) / h2 - (q[k] - q[k - 1]) / h1) / (h1 + h2);
    convex.offer(-second, t, a.times[k]);
  }
  std::ostringstream notes;
  notes << "monotone part " << format_real(mono.violation)
        << ", convexity part " << format_real(convex.violation)
        << ", q(0) = " << format_real(q.front());
  const Worst& worst = mono.violation >= convex.violation ? mono : convex;
  return CheckResult::make("contraction",
                           std::max(mono.violation, convex.violation), t,
                           worst.where, notes.str());
}

CheckResult check_monotone_gradient(
    const DifferentiableField& field,
    const std::vector<std::pair<Vector, Vector>>& pairs) {
  if (pairs.empty()) throw InputError("monotone_gradient: no point pairs");
  Worst w;
  for (const auto& [x, y] : pairs) {
    const Vector d = x - y;
    const double inner = (field.gradient(x) - field.gradient(y)).dot(d);
    w.offer(-inner, 1e-10 * (1.0 + d.squaredNorm()), x);
  }
  std::string notes = "field " + field.name() + ", " +
                      std::to_string(pairs.size()) + " pairs";
  if (std::holds_alternative<Vector>(w.where) && !(w.violation <= w.tolerance)) {
    notes += ", worst pair starts at " + format_point(std::get<Vector>(w.where));
  }
  return CheckResult::make("monotone_gradient", w.violation, w.tolerance,
                           w.where, notes);
}

std::string to_string(EvanescenceClass c) {
  switch (c) {
    case EvanescenceClass::strong: return "strong";
    case EvanescenceClass::weak_only_proxy: return "weak_only_proxy";
    case EvanescenceClass::none: return "none";
  }
  return "none";
}

EvanescenceMeasures evanescence_measures(const Trajectory& traj,
                                         const DifferentiableField& v,
                                         double eps_tail) {
  EvanescenceMeasures m;
  if (traj.size() < 2) throw InputError("evanescence: needs at least two nodes");
  const auto cum = cumulative_integral(
      traj, [&](double, const Vector& x, const Vector& w) {
        return w.squaredNorm() + v.value(x);
      });
  m.ev_integral = cum.back();
  const double half = 0.5 * traj.end_time();
  const auto it = std::upper_bound(traj.times.begin(), traj.times.end(), half);
  const auto k = static_cast<std::size_t>(it - traj.times.begin()) - 1;
  // interpolate the running integral at T/2
  if (k + 1 < traj.size()) {
    const double s = (half - traj.times[k]) / (traj.times[k + 1] - traj.times[k]);
    m.ev_integral_half = cum[k] + s * (cum[k + 1] - cum[k]);
  } else {
    m.ev_integral_half = cum[k];
  }

  const std::size_t n = traj.size();
  const std::size_t first = n - std::max<std::size_t>(1, n / 10);
  m.tail_vprime = std::numeric_limits<double>::infinity();
  m.tail_v = std::numeric_limits<double>::infinity();
  for (std::size_t j = first; j < n; ++j) {
    m.tail_vprime = std::min(m.tail_vprime, traj.velocities[j].norm());
    m.tail_v = std::min(m.tail_v, v.value(traj.states[j]));
  }

  const bool global = traj.termination == Termination::horizon_reached ||
                      traj.termination == Termination::critical_point_reached;
  const bool tails_small = m.tail_vprime < eps_tail && m.tail_v < eps_tail;
  const double change = std::abs(m.ev_integral - m.ev_integral_half);
  const bool stable = std::isfinite(m.ev_integral) &&
                      change <= 0.01 * std::abs(m.ev_integral);
  if (!global || !tails_small) {
    m.classification = EvanescenceClass::none;
  } else if (stable) {
    m.classification = EvanescenceClass::strong;
  } else {
    m.classification = EvanescenceClass::weak_only_proxy;
  }
  return m;
}

nlohmann::json to_json(const EvanescenceMeasures& m) {
  return {{"ev_integral", real_json(m.ev_integral)},
          {"ev_integral_half_horizon", real_json(m.ev_integral_half)},
          {"tail_vprime", real_json(m.tail_vprime)},
          {"tail_V", real_json(m.tail_v)},
          {"classification", to_string(m.classification)}};
}

std::optional<double> sampled_hessian_norm(const Trajectory& traj,
                                           const DifferentiableField& psi,
                                           std::size_t max_samples) {
  if (!psi.has_hessvec() || traj.size() == 0) return std::nullopt;
  const int n = psi.dim();
  const std::size_t stride = std::max<std::size_t>(1, traj.size() / max_samples);
  double worst = 0.0;
  for (std::size_t k = 0; k < traj.size(); k += stride) {
    Matrix h(n, n);
    for (int i = 0; i < n; ++i) {
      h.col(i) = psi.hessvec(traj.states[k], Vector::Unit(n, i));
    }
    const Matrix sym = 0.5 * (h + h.transpose());
    const auto eig =
        Eigen::SelfAdjointEigenSolver<Matrix>(sym, Eigen::EigenvaluesOnly)
            .eigenvalues();
    worst = std::max(worst, eig.cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace evanflow
