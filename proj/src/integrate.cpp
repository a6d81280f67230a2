#include "evanflow/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "evanflow/util.hpp"

namespace evanflow {

std::string to_string(SystemTag tag) {
  return tag == SystemTag::first_order ? "first_order" : "second_order";
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::horizon_reached: return "horizon_reached";
    case Termination::critical_point_reached: return "critical_point_reached";
    case Termination::diverged: return "diverged";
    case Termination::step_collapse: return "step_collapse";
  }
  return "unknown";
}

std::string to_string(Method m) {
  return m == Method::rk4 ? "rk4" : "adaptive";
}

Method parse_method(std::string_view name) {
  if (name == "rk4") return Method::rk4;
  if (name == "adaptive" || name == "dopri5") return Method::adaptive;
  throw InputError("unknown integration method '" + std::string(name) + "'");
}

void IntegratorOptions::validate() const {
  if (!(horizon > 0.0)) throw InputError("horizon T must be positive");
  if (method == Method::rk4 && !(h > 0.0)) {
    throw InputError("step h must be positive");
  }
  if (method == Method::adaptive) {
    if (!(rtol >= 1e-12 && rtol <= 1e-2)) {
      throw InputError("rtol must lie in [1e-12, 1e-2]");
    }
    if (!(atol > 0.0)) throw InputError("atol must be positive");
    if (!(max_step > 0.0)) throw InputError("max_step must be positive");
  }
  if (!(r_max > 0.0)) throw InputError("r_max must be positive");
  if (!(eps_crit >= 0.0)) throw InputError("eps_crit must be nonnegative");
}

namespace {

bool has_nan(const Vector& y) { return y.array().isNaN().any(); }
bool all_finite(const Vector& y) { return y.allFinite(); }

}  // namespace

RawTrajectory rk4_fixed(const Rhs& rhs, const Vector& y0, double horizon,
                        double h, const Monitor& monitor) {
  if (!(h > 0.0) || !(horizon > 0.0)) {
    throw InputError("rk4_fixed needs h > 0 and T > 0");
  }
  RawTrajectory out;
  out.meta.method = Method::rk4;
  out.meta.step = h;
  out.times.push_back(0.0);
  out.ys.push_back(y0);
  if (monitor) {
    if (auto stop = monitor(y0)) {
      out.termination = *stop;
      return out;
    }
  }

  const auto n = static_cast<std::size_t>(std::ceil(horizon / h - 1e-9));
  const Eigen::Index dim = y0.size();
  Vector y = y0, k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  double t = 0.0;
  for (std::size_t step = 1; step <= n; ++step) {
    const double t_next =
        step == n ? horizon : static_cast<double>(step) * h;
    const double dt = t_next - t;
    rhs(y, k1);
    tmp = y + 0.5 * dt * k1;
    rhs(tmp, k2);
    tmp = y + 0.5 * dt * k2;
    rhs(tmp, k3);
    tmp = y + dt * k3;
    rhs(tmp, k4);
    Vector y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (has_nan(y_next)) {
      std::ostringstream os;
      os << "rk4 step produced NaN after t = " << format_real(t)
         << ", last valid state " << format_point(y);
      throw NumericDomainError(os.str());
    }
    y = std::move(y_next);
    t = t_next;
    out.times.push_back(t);
    out.ys.push_back(y);
    ++out.meta.n_steps;
    if (!all_finite(y)) {
      out.termination = Termination::diverged;
      return out;
    }
    if (monitor) {
      if (auto stop = monitor(y)) {
        out.termination = *stop;
        return out;
      }
    }
  }
  out.termination = Termination::horizon_reached;
  return out;
}

namespace {

// Dormand–Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b − b̂ (5th minus embedded 4th order weights).
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

RawTrajectory rk_adaptive(const Rhs& rhs, const Vector& y0, double horizon,
                          double rtol, double atol, double max_step,
                          const Monitor& monitor) {
  if (!(horizon > 0.0)) throw InputError("rk_adaptive needs T > 0");
  if (!(rtol >= 1e-12 && rtol <= 1e-2)) {
    throw InputError("rtol must lie in [1e-12, 1e-2]");
  }
  if (!(atol > 0.0)) throw InputError("atol must be positive");

  RawTrajectory out;
  out.meta.method = Method::adaptive;
  out.meta.step = rtol;
  out.times.push_back(0.0);
  out.ys.push_back(y0);
  if (monitor) {
    if (auto stop = monitor(y0)) {
      out.termination = *stop;
      return out;
    }
  }

  const Eigen::Index dim = y0.size();
  Vector y = y0;
  Vector k1(dim), k2(dim), k3(dim), k4(dim), k5(dim), k6(dim), k7(dim);
  Vector tmp(dim), y_new(dim), err(dim);
  rhs(y, k1);

  const double h_min = 1e-14 * horizon;
  const double h_cap = std::min(max_step, horizon);
  double h;
  {
    const Vector scale =
        (atol + rtol * y.array().abs()).matrix();
    const double d0 = (y.array() / scale.array()).matrix().norm();
    const double d1 = (k1.array() / scale.array()).matrix().norm();
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h = std::clamp(h, 1e-6 * horizon, h_cap);
  }

  double t = 0.0;
  while (t < horizon) {
    bool last = false;
    if (t + h >= horizon) {
      h = horizon - t;
      last = true;
    }
    tmp = y + h * a21 * k1;
    rhs(tmp, k2);
    tmp = y + h * (a31 * k1 + a32 * k2);
    rhs(tmp, k3);
    tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    rhs(tmp, k4);
    tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    rhs(tmp, k5);
    tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    rhs(tmp, k6);
    y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    rhs(y_new, k7);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double err_norm = 0.0;
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double sc =
          atol + rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
      err_norm = std::max(err_norm, std::abs(err[i]) / sc);
    }
    if (!std::isfinite(err_norm) || has_nan(y_new) || has_nan(k7)) {
      err_norm = std::numeric_limits<double>::infinity();
    }

    if (err_norm <= 1.0) {
      t = last ? horizon : t + h;
      y = y_new;
      k1 = k7;
      out.times.push_back(t);
      out.ys.push_back(y);
      ++out.meta.n_steps;
      if (!all_finite(y)) {
        out.termination = Termination::diverged;
        return out;
      }
      if (monitor) {
        if (auto stop = monitor(y)) {
          out.termination = *stop;
          return out;
        }
      }
      const double factor =
          err_norm == 0.0 ? 5.0
                          : std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 5.0);
      h = std::min(h * factor, h_cap);
    } else {
      ++out.meta.n_rejected;
      const double factor =
          std::isfinite(err_norm)
              ? std::clamp(0.9 * std::pow(err_norm, -0.2), 0.1, 1.0)
              : 0.1;
      h *= factor;
      if (h < h_min) {
        out.termination = Termination::step_collapse;
        return out;
      }
    }
  }
  out.termination = Termination::horizon_reached;
  return out;
}

namespace {

RawTrajectory run(const Rhs& rhs, const Vector& y0,
                  const IntegratorOptions& opts, const Monitor& monitor) {
  opts.validate();
  if (opts.method == Method::rk4) {
    return rk4_fixed(rhs, y0, opts.horizon, opts.h, monitor);
  }
  return rk_adaptive(rhs, y0, opts.horizon, opts.rtol, opts.atol,
                     opts.max_step, monitor);
}

}  // namespace

Trajectory gradient_flow(const PotentialPair& pair, const Vector& x0,
                         const IntegratorOptions& opts) {
  const auto& psi = pair.psi;
  if (x0.size() != psi.dim()) {
    throw InputError("x0 dimension does not match potential '" + psi.name() +
                     "'");
  }
  Rhs rhs = [&psi](const Vector& y, Vector& dydt) { dydt = -psi.gradient(y); };
  Monitor monitor = [&](const Vector& y) -> std::optional<Termination> {
    if (!(y.norm() <= opts.r_max)) return Termination::diverged;
    if (psi.gradient(y).norm() < opts.eps_crit) {
      return Termination::critical_point_reached;
    }
    return std::nullopt;
  };
  RawTrajectory raw = run(rhs, x0, opts, monitor);

  Trajectory traj;
  traj.system = SystemTag::first_order;
  traj.termination = raw.termination;
  traj.meta = raw.meta;
  traj.times = std::move(raw.times);
  traj.states = std::move(raw.ys);
  if (traj.termination == Termination::critical_point_reached &&
      traj.times.back() < opts.horizon) {
    traj.times.push_back(opts.horizon);
    traj.states.push_back(traj.states.back());
  }
  traj.velocities.reserve(traj.states.size());
  for (const auto& s : traj.states) traj.velocities.push_back(-psi.gradient(s));
  return traj;
}

Trajectory second_order_flow(const DifferentiableField& v, const Vector& x0,
                             const Vector& v0, const IntegratorOptions& opts) {
  const int n = v.dim();
  if (x0.size() != n || v0.size() != n) {
    throw InputError("x0/v0 dimension does not match potential '" + v.name() +
                     "'");
  }
  Rhs rhs = [&v, n](const Vector& y, Vector& dydt) {
    dydt.resize(2 * n);
    dydt.head(n) = y.tail(n);
    dydt.tail(n) = v.gradient(y.head(n));
  };
  Monitor monitor = [&](const Vector& y) -> std::optional<Termination> {
    if (!(y.head(n).norm() <= opts.r_max)) return Termination::diverged;
    return std::nullopt;
  };
  Vector y0(2 * n);
  y0 << x0, v0;
  RawTrajectory raw = run(rhs, y0, opts, monitor);

  Trajectory traj;
  traj.system = SystemTag::second_order;
  traj.termination = raw.termination;
  traj.meta = raw.meta;
  traj.times = std::move(raw.times);
  traj.states.reserve(raw.ys.size());
  traj.velocities.reserve(raw.ys.size());
  for (const auto& y : raw.ys) {
    traj.states.push_back(y.head(n));
    traj.velocities.push_back(y.tail(n));
  }
  return traj;
}

Trajectory as_second_order(Trajectory traj) {
  traj.system = SystemTag::second_order;
  return traj;
}

Vector state_at(const Trajectory& traj, double t) {
  if (traj.size() == 0) throw InputError("state_at: empty trajectory");
  if (!(t >= traj.times.front() && t <= traj.times.back())) {
    throw InputError("state_at: time " + format_real(t) + " outside the orbit");
  }
  if (traj.size() == 1) return traj.states.front();
  auto it = std::upper_bound(traj.times.begin(), traj.times.end(), t);
  std::size_t k = static_cast<std::size_t>(it - traj.times.begin());
  k = std::clamp<std::size_t>(k, 1, traj.size() - 1) - 1;
  const double h = traj.times[k + 1] - traj.times[k];
  if (h <= 0.0) return traj.states[k + 1];
  const double s = (t - traj.times[k]) / h;
  const double s2 = s * s;
  const double s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * traj.states[k] +
         (s3 - 2 * s2 + s) * h * traj.velocities[k] +
         (-2 * s3 + 3 * s2) * traj.states[k + 1] +
         (s3 - s2) * h * traj.velocities[k + 1];
}

std::vector<double> cumulative_integral(const Trajectory& traj,
                                        const Integrand& integrand) {
  if (traj.size() < 2) {
    throw InputError("path integral needs at least two nodes");
  }
  std::vector<double> acc(traj.size(), 0.0);
  double prev = integrand(traj.times[0], traj.states[0], traj.velocities[0]);
  for (std::size_t k = 1; k < traj.size(); ++k) {
    const double cur =
        integrand(traj.times[k], traj.states[k], traj.velocities[k]);
    acc[k] = acc[k - 1] + 0.5 * (traj.times[k] - traj.times[k - 1]) * (prev + cur);
    prev = cur;
  }
  return acc;
}

double path_integral(const Trajectory& traj, const Integrand& integrand) {
  return cumulative_integral(traj, integrand).back();
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const int n = traj.dim();
  os << 't';
  for (int i = 0; i < n; ++i) os << ",x" << i;
  for (int i = 0; i < n; ++i) os << ",w" << i;
  os << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << format_real(traj.times[k]);
    for (int i = 0; i < n; ++i) os << ',' << format_real(traj.states[k][i]);
    for (int i = 0; i < n; ++i) os << ',' << format_real(traj.velocities[k][i]);
    os << '\n';
  }
}

}  // namespace evanflow
