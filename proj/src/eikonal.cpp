#include "evanflow/eikonal.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "evanflow/util.hpp"

namespace evanflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json point_json(const Vector& x) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < x.size(); ++i) a.push_back(x[i]);
  return a;
}

nlohmann::json real_json(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

void append_note(std::string& notes, const std::string& note) {
  if (!notes.empty()) notes += "; ";
  notes += note;
}

struct TailFit {
  double estimate = 0.0;
  double rate = 0.0;
  bool decaying = false;
};

// Least-squares fit of log f(v(t)) ≈ a + s·t over the last `window` of the
// horizon; the tail integral of the fitted exponential is e^{a+sT}/(−s).
TailFit fit_tail(const Trajectory& orbit, const DifferentiableField& f,
                 double window, double min_decay) {
  TailFit fit;
  const double t_end = orbit.end_time();
  const double t0 = (1.0 - window) * t_end;
  std::vector<double> ts, ls;
  bool any_positive = false;
  for (std::size_t k = 0; k < orbit.size(); ++k) {
    if (orbit.times[k] < t0) continue;
    const double fx = f.value(orbit.states[k]);
    if (fx > 0.0 && std::isfinite(fx)) {
      any_positive = true;
      ts.push_back(orbit.times[k]);
      ls.push_back(std::log(fx));
    }
  }
  if (!any_positive) {
    fit.decaying = true;  // f vanishes on the whole window
    return fit;
  }
  if (ts.size() < 3) return fit;
  double tm = 0.0, lm = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    tm += ts[i];
    lm += ls[i];
  }
  tm /= static_cast<double>(ts.size());
  lm /= static_cast<double>(ts.size());
  double stt = 0.0, stl = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    stt += (ts[i] - tm) * (ts[i] - tm);
    stl += (ts[i] - tm) * (ls[i] - lm);
  }
  if (!(stt > 0.0)) return fit;
  const double slope = stl / stt;
  fit.rate = -slope;
  if (slope < 0.0) fit.estimate = std::exp(lm + slope * (t_end - tm)) / -slope;
  fit.decaying = slope <= -min_decay;
  return fit;
}

// For convex V, f = 2V is nonincreasing along the exact evanescent orbit.
// A numerical orbit that turns back up past its closest approach is
// following the growing mode excited by rounding; cut it there.
Trajectory cut_at_closest_approach(Trajectory t, const DifferentiableField& f) {
  std::size_t best = 0;
  double lowest = kInf;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double fx = f.value(t.states[k]);
    if (fx < lowest) {
      lowest = fx;
      best = k;
    }
  }
  const std::size_t keep = std::max<std::size_t>(best + 1, 2);
  if (keep < t.size()) {
    t.times.resize(keep);
    t.states.resize(keep);
    t.velocities.resize(keep);
  }
  return t;
}

// Composite Simpson on a uniform grid with an even number of intervals,
// trapezoid otherwise.
double integrate_f(const Trajectory& t, const DifferentiableField& f) {
  const std::size_t n = t.size() - 1;
  const double h = t.times[1] - t.times[0];
  bool uniform = n >= 2 && n % 2 == 0;
  for (std::size_t k = 1; k <= n && uniform; ++k) {
    uniform = std::abs(t.times[k] - t.times[k - 1] - h) <= 1e-9 * h;
  }
  if (!uniform) {
    return path_integral(t, [&f](double, const Vector& x, const Vector&) {
      return f.value(x);
    });
  }
  double sum = f.value(t.states.front()) + f.value(t.states.back());
  for (std::size_t k = 1; k < n; ++k) {
    sum += (k % 2 == 1 ? 4.0 : 2.0) * f.value(t.states[k]);
  }
  return sum * h / 3.0;
}

// Tails above eps_tail are fine here: the extrapolation covers them.
struct Orbit {
  Trajectory traj;
  bool converged = false;
  SolveMethod method = SolveMethod::action;
  std::string notes;
};

Orbit solve_orbit(const DifferentiableField& v, const Vector& x0,
                  const ReconstructOptions& opts, double scale) {
  Orbit out;
  auto by_shooting = [&] {
    ShootOptions s = opts.shoot;
    s.horizon *= scale;
    const auto r = shoot_evanescent(v, x0, s);
    out.traj = r.orbit;
    out.converged = r.solved;
    out.method = SolveMethod::shooting;
    if (!r.solved) append_note(out.notes, "shooting: " + r.notes);
  };
  try {
    if (opts.method == ReconMethod::shooting) {
      by_shooting();
      return out;
    }
    ActionOptions a = opts.action;
    a.horizon *= scale;
    a.n = static_cast<std::size_t>(std::llround(static_cast<double>(a.n) * scale));
    const auto r = minimize_action(v, x0, a);
    out.traj = path_to_trajectory(*r.path);
    out.converged = r.solved;
    out.method = SolveMethod::action;
    if (!r.solved) {
      append_note(out.notes, "action: " + r.notes);
      if (opts.fallback) by_shooting();
    }
  } catch (const std::exception& e) {
    out.converged = false;
    append_note(out.notes, e.what());
  }
  return out;
}

}  // namespace

// ---- grids ----------------------------------------------------------------

std::size_t GridSpec::size() const {
  if (axes.empty()) return 0;
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.count;
  return n;
}

void GridSpec::validate() const {
  if (axes.empty()) throw InputError("grid needs at least one axis");
  for (std::size_t i = 0; i < axes.size(); ++i) {
    const auto& a = axes[i];
    const std::string where = "grid axis " + std::to_string(i);
    if (a.count == 0) throw InputError(where + ": count must be positive");
    if (!std::isfinite(a.min) || !std::isfinite(a.max)) {
      throw InputError(where + ": bounds must be finite");
    }
    if (a.count > 1 && !(a.max > a.min)) {
      throw InputError(where + ": max must exceed min");
    }
  }
}

std::vector<Vector> GridSpec::points() const {
  validate();
  const auto n = static_cast<Eigen::Index>(axes.size());
  std::vector<Vector> pts;
  pts.reserve(size());
  std::vector<std::size_t> idx(axes.size(), 0);
  for (std::size_t flat = 0; flat < size(); ++flat) {
    Vector x(n);
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto& ax = axes[static_cast<std::size_t>(a)];
      const auto i = idx[static_cast<std::size_t>(a)];
      x[a] = ax.count == 1 ? ax.min
                           : ax.min + (ax.max - ax.min) * static_cast<double>(i) /
                                          static_cast<double>(ax.count - 1);
    }
    pts.push_back(std::move(x));
    for (std::size_t a = axes.size(); a-- > 0;) {
      if (++idx[a] < axes[a].count) break;
      idx[a] = 0;
    }
  }
  return pts;
}

GridSpec parse_grid_spec(std::string_view text) {
  GridSpec g;
  for (const auto& part : split(text, ',')) {
    const auto fields = split(part, ':');
    if (fields.size() != 3) {
      throw InputError("grid axis '" + trim(part) + "' must be min:max:count");
    }
    GridAxis a;
    a.min = parse_double(fields[0], "grid min");
    a.max = parse_double(fields[1], "grid max");
    const double c = parse_double(fields[2], "grid count");
    if (!(c >= 1.0) || c != std::floor(c) || c > 1e7) {
      throw InputError("grid count must be a positive integer");
    }
    a.count = static_cast<std::size_t>(c);
    g.axes.push_back(a);
  }
  g.validate();
  return g;
}

nlohmann::json to_json(const GridSpec& g) {
  auto a = nlohmann::json::array();
  for (const auto& ax : g.axes) {
    a.push_back({{"min", ax.min}, {"max", ax.max}, {"count", ax.count}});
  }
  return a;
}

// ---- reconstruction -------------------------------------------------------

std::string to_string(ReconMethod m) {
  return m == ReconMethod::action ? "action" : "shooting";
}

ReconMethod parse_recon_method(std::string_view name) {
  const std::string s = trim(name);
  if (s == "action") return ReconMethod::action;
  if (s == "shooting") return ReconMethod::shooting;
  throw InputError("unknown reconstruction method '" + s + "'");
}

void ReconstructOptions::validate() const {
  action.validate();
  shoot.validate();
  if (!(tail_window > 0.0 && tail_window <= 1.0)) {
    throw InputError("tail_window must lie in (0, 1]");
  }
  if (!(min_decay > 0.0)) throw InputError("min_decay must be positive");
  if (!(tol_recon >= 0.0)) throw InputError("tol_recon must be nonnegative");
}

nlohmann::json to_json(const ReconstructOptions& o) {
  return {{"method", to_string(o.method)},
          {"fallback", o.fallback},
          {"action",
           {{"horizon", o.action.horizon},
            {"n", o.action.n},
            {"mu", o.action.mu ? nlohmann::json(*o.action.mu) : nlohmann::json("auto")},
            {"tol_opt", o.action.tol_opt},
            {"max_iters", o.action.max_iters},
            {"tol_el", o.action.tol_el},
            {"eps_tail", o.action.eps_tail},
            {"mu_rounds", o.action.mu_rounds}}},
          {"shoot",
           {{"horizon", o.shoot.horizon},
            {"first_horizon", o.shoot.first_horizon},
            {"rtol", o.shoot.rtol},
            {"atol", o.shoot.atol},
            {"r_max", o.shoot.r_max},
            {"max_evals", o.shoot.max_evals},
            {"eps_tail", o.shoot.eps_tail}}},
          {"tail_window", o.tail_window},
          {"min_decay", o.min_decay},
          {"tol_recon", o.tol_recon},
          {"renormalize", o.renormalize}};
}

std::size_t ReconstructionResult::failed_count() const {
  return static_cast<std::size_t>(
      std::count_if(per_point.begin(), per_point.end(),
                    [](const PointReconstruction& p) { return !p.converged; }));
}

nlohmann::json to_json(const PointReconstruction& p) {
  return {{"x", point_json(p.x)},
          {"psi_hat", real_json(p.psi_hat)},
          {"ev_integral", real_json(p.ev_integral)},
          {"tail_estimate", real_json(p.tail_estimate)},
          {"decay_rate", real_json(p.decay_rate)},
          {"horizon", p.horizon},
          {"converged", p.converged},
          {"method", to_string(p.method)},
          {"notes", p.notes}};
}

nlohmann::json to_json(const ReconstructionResult& r) {
  auto pts = nlohmann::json::array();
  for (const auto& p : r.per_point) pts.push_back(to_json(p));
  return {{"normalization", "psi_hat = ev_integral + tail_estimate - offset"},
          {"offset", real_json(r.offset)},
          {"points", pts},
          {"summary", {{"total", r.per_point.size()}, {"failed", r.failed_count()}}},
          {"config", r.config}};
}

void write_reconstruction_csv(std::ostream& os, const ReconstructionResult& r) {
  const int n = r.per_point.empty() ? 0 : static_cast<int>(r.per_point.front().x.size());
  for (int i = 0; i < n; ++i) os << 'x' << i << ',';
  os << "psi_hat,ev_integral,tail_estimate,converged\n";
  for (const auto& p : r.per_point) {
    for (Eigen::Index i = 0; i < p.x.size(); ++i) os << format_real(p.x[i]) << ',';
    os << format_real(p.psi_hat) << ',' << format_real(p.ev_integral) << ','
       << format_real(p.tail_estimate) << ',' << (p.converged ? 1 : 0) << '\n';
  }
}

PointReconstruction reconstruct_value(const DifferentiableField& f,
                                      const Vector& x0,
                                      const ReconstructOptions& opts) {
  opts.validate();
  if (x0.size() != f.dim()) throw InputError("x0 dimension does not match f");
  PointReconstruction p;
  p.x = x0;
  p.method = opts.method == ReconMethod::action ? SolveMethod::action
                                                : SolveMethod::shooting;
  const DifferentiableField v = field_from_f(f, {x0});
  if (f.value(x0) <= 0.0) {
    p.converged = true;
    p.notes = "f vanishes at x0: already a minimizer";
    return p;
  }
  // A tail without visible decay gets one retry on a doubled horizon.
  for (double scale : {1.0, 2.0}) {
    Orbit orbit = solve_orbit(v, x0, opts, scale);
    p.method = orbit.method;
    p.notes = orbit.notes;
    if (orbit.traj.size() < 2) {
      p.converged = false;
      p.ev_integral = p.tail_estimate = 0.0;
      append_note(p.notes, "no orbit");
      break;
    }
    const Trajectory kept = cut_at_closest_approach(std::move(orbit.traj), f);
    p.horizon = kept.end_time();
    p.ev_integral = integrate_f(kept, f);
    const TailFit tail = fit_tail(kept, f, opts.tail_window, opts.min_decay);
    p.tail_estimate = tail.estimate;
    p.decay_rate = tail.rate;
    p.converged = orbit.converged && tail.decaying;
    if (tail.decaying) break;
    append_note(p.notes, "tail of f shows no exponential decay at T = " +
                             format_real(p.horizon));
  }
  p.psi_hat = p.raw();
  if (!p.converged) append_note(p.notes, "value unreliable");
  return p;
}

ReconstructionResult reconstruct_grid(const DifferentiableField& f,
                                      const std::vector<Vector>& points,
                                      const ReconstructOptions& opts) {
  opts.validate();
  if (points.empty()) throw InputError("reconstruction needs query points");
  for (const auto& x : points) {
    if (x.size() != f.dim()) throw InputError("query point dimension does not match f");
  }
  (void)field_from_f(f, points);  // rejects negative f up front

  ReconstructionResult r;
  r.config = to_json(opts);
  r.per_point.resize(points.size());
  unsigned workers = opts.workers ? opts.workers : std::thread::hardware_concurrency();
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(points.size())));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](unsigned id) {
    try {
      for (std::size_t i = next++; i < points.size(); i = next++) {
        r.per_point[i] = reconstruct_value(f, points[i], opts);
      }
    } catch (...) {
      errors[id] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned id = 0; id < workers; ++id) pool.emplace_back(work, id);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  if (opts.renormalize) {
    double lowest = kInf;
    for (const auto& p : r.per_point) {
      if (p.converged) lowest = std::min(lowest, p.raw());
    }
    r.offset = std::isfinite(lowest) ? lowest : 0.0;
  }
  for (auto& p : r.per_point) p.psi_hat = p.raw() - r.offset;
  return r;
}

CheckResult eikonal_residual(const ReconstructionResult& recon,
                             const DifferentiableField& f, const GridSpec& grid,
                             std::optional<double> tol) {
  grid.validate();
  for (const auto& a : grid.axes) {
    if (a.count < 3) throw InputError("eikonal residual needs at least 3 points per axis");
  }
  const auto pts = grid.points();
  if (recon.per_point.size() != pts.size()) {
    throw InputError("reconstruction does not match the grid");
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if ((recon.per_point[i].x - pts[i]).norm() > 1e-9 * (1.0 + pts[i].norm())) {
      throw InputError("reconstruction point " + std::to_string(i) +
                       " is not the grid point " + format_point(pts[i]));
    }
  }
  const std::size_t dims = grid.axes.size();
  std::vector<std::size_t> stride(dims, 1);
  for (std::size_t a = dims - 1; a-- > 0;) stride[a] = stride[a + 1] * grid.axes[a + 1].count;

  double worst = -1.0;
  Vector where;
  std::size_t checked = 0, skipped = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool interior = true;
    for (std::size_t a = 0; a < dims && interior; ++a) {
      const std::size_t k = (i / stride[a]) % grid.axes[a].count;
      interior = k > 0 && k + 1 < grid.axes[a].count;
    }
    if (!interior) continue;
    bool usable = recon.per_point[i].converged;
    double grad2 = 0.0;
    for (std::size_t a = 0; a < dims && usable; ++a) {
      const auto& lo = recon.per_point[i - stride[a]];
      const auto& hi = recon.per_point[i + stride[a]];
      usable = lo.converged && hi.converged;
      const double h = (grid.axes[a].max - grid.axes[a].min) /
                       static_cast<double>(grid.axes[a].count - 1);
      const double d = (hi.psi_hat - lo.psi_hat) / (2.0 * h);
      grad2 += d * d;
    }
    if (!usable) {
      ++skipped;
      continue;
    }
    ++checked;
    const double gap = std::abs(grad2 - f.value(pts[i]));
    if (gap > worst) {
      worst = gap;
      where = pts[i];
    }
  }
  std::ostringstream notes;
  notes << checked << " interior points checked";
  if (skipped) notes << ", " << skipped << " skipped (unconverged stencil)";
  if (checked == 0) {
    return CheckResult::make("eikonal_residual", kInf, tol.value_or(5e-2), {},
                             notes.str());
  }
  return CheckResult::make("eikonal_residual", worst, tol.value_or(5e-2), where,
                           notes.str());
}

// ---- sampled hypotheses ---------------------------------------------------

CheckResult check_bounded_below(const DifferentiableField& psi,
                                const std::vector<Vector>& probes,
                                const BoundedBelowOptions& opts) {
  if (probes.empty()) throw InputError("bounded-below check needs probe points");
  const std::string id = "bounded_below";
  double lowest = kInf;
  Vector lowest_at;
  for (const auto& x : probes) {
    const double y = psi.value(x);
    if (!(y >= lowest)) {
      lowest = y;
      lowest_at = x;
    }
  }
  if (!(lowest >= opts.floor)) {
    return CheckResult::make(id, kInf, opts.settle_ratio, lowest_at,
                             "sampled value " + format_real(lowest) + " below floor");
  }

  const PotentialPair pair = make_pair(psi);
  IntegratorOptions io;
  io.horizon = opts.horizon;
  io.rtol = 1e-8;
  io.max_step = 1e-2;
  double worst = 0.0;
  Location worst_at;
  std::string notes = "min sampled psi " + format_real(lowest);
  const std::size_t n_orbits = std::min(opts.orbits, probes.size());
  for (std::size_t i = 0; i < n_orbits; ++i) {
    const Vector& x0 = probes[i];
    Trajectory u;
    try {
      u = gradient_flow(pair, x0, io);
    } catch (const NumericDomainError& e) {
      return CheckResult::make(id, kInf, opts.settle_ratio, x0,
                               std::string("flow left the domain: ") + e.what());
    }
    if (u.termination == Termination::diverged ||
        u.termination == Termination::step_collapse) {
      return CheckResult::make(id, kInf, opts.settle_ratio, x0,
                               "flow " + to_string(u.termination) + " at t = " +
                                   format_real(u.end_time()));
    }
    double rho_min = kInf;
    for (const auto& s : u.states) rho_min = std::min(rho_min, psi.value(s));
    if (!(rho_min >= opts.floor)) {
      return CheckResult::make(id, kInf, opts.settle_ratio, x0,
                               "psi fell to " + format_real(rho_min) + " along the flow");
    }
    if (u.termination == Termination::critical_point_reached) continue;
    const double r0 = psi.value(u.states.front());
    const double rh = psi.value(state_at(u, 0.5 * u.end_time()));
    const double rt = psi.value(u.states.back());
    const double first = r0 - rh;
    const double second = rh - rt;
    if (first <= 1e-14 * (1.0 + std::abs(r0))) continue;
    const double ratio = std::max(0.0, second) / first;
    if (ratio > worst) {
      worst = ratio;
      worst_at = x0;
    }
  }
  append_note(notes, std::to_string(n_orbits) + " flow orbits to T = " +
                         format_real(opts.horizon));
  return CheckResult::make(id, worst, opts.settle_ratio, worst_at, notes);
}

std::vector<std::pair<Vector, Vector>> sample_pairs(
    const std::vector<Vector>& points, std::size_t count, std::uint64_t seed) {
  if (points.size() < 2) throw InputError("pair sampling needs at least two points");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  std::vector<std::pair<Vector, Vector>> pairs;
  pairs.reserve(count);
  while (pairs.size() < count) {
    const std::size_t i = pick(rng), j = pick(rng);
    if (i != j) pairs.emplace_back(points[i], points[j]);
  }
  return pairs;
}

std::vector<Vector> probe_points(int dim, std::size_t count, double radius,
                                 std::uint64_t seed) {
  if (dim <= 0) throw InputError("probe dimension must be positive");
  std::vector<Vector> pts;
  for (int i = 0; i < dim && pts.size() < count; ++i) {
    for (double s : {radius, -radius}) {
      if (pts.size() >= count) break;
      Vector e = Vector::Zero(dim);
      e[i] = s;
      pts.push_back(e);
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-radius, radius);
  while (pts.size() < count) {
    Vector x(dim);
    for (int i = 0; i < dim; ++i) x[i] = u(rng);
    pts.push_back(x);
  }
  return pts;
}

// ---- determination --------------------------------------------------------

std::string to_string(DeterminationStatus s) {
  switch (s) {
    case DeterminationStatus::pass: return "pass";
    case DeterminationStatus::conclusion_failed: return "conclusion_failed";
    case DeterminationStatus::hypothesis_not_met: return "hypothesis_not_met";
  }
  return "unknown";
}

nlohmann::json to_json(const DeterminationResult& r) {
  return {{"status", to_string(r.status)},
          {"hypotheses_met", r.hypotheses_met},
          {"c", real_json(r.c)},
          {"hypotheses", to_json(r.hypotheses)},
          {"conclusion", to_json(r.conclusion)}};
}

DeterminationResult determination_check(const DifferentiableField& psi1,
                                        const DifferentiableField& psi2,
                                        const std::vector<Vector>& samples,
                                        const DeterminationOptions& opts) {
  if (psi1.dim() != psi2.dim()) throw InputError("psi1 and psi2 differ in dimension");
  if (samples.size() < 2) throw InputError("determination needs at least two samples");
  for (const auto& x : samples) {
    if (x.size() != psi1.dim()) throw InputError("sample dimension does not match psi");
  }
  DeterminationResult out;
  out.hypotheses.subject = psi1.name() + " vs " + psi2.name() + ": hypotheses";
  out.conclusion.subject = psi1.name() + " vs " + psi2.name() + ": conclusion";

  // equal gradient norms
  double norm_gap = 0.0, inf_grad = kInf;
  Vector norm_at = samples.front(), inf_at = samples.front();
  for (const auto& x : samples) {
    const double g1 = psi1.gradient(x).norm();
    const double g2 = psi2.gradient(x).norm();
    const double gap = std::abs(g1 - g2) / (1.0 + g1);
    if (gap > norm_gap) {
      norm_gap = gap;
      norm_at = x;
    }
    if (g1 < inf_grad) {
      inf_grad = g1;
      inf_at = x;
    }
  }
  out.hypotheses.add(CheckResult::make("hypothesis_equal_norms", norm_gap,
                                       opts.tol_norms, norm_at));

  const auto pairs = sample_pairs(samples, opts.convexity_pairs, opts.seed);
  auto convex1 = check_monotone_gradient(psi1, pairs);
  convex1.check_id = "hypothesis_psi1_convex";
  auto convex2 = check_monotone_gradient(psi2, pairs);
  convex2.check_id = "hypothesis_psi2_convex";
  const bool convex = convex1.passed && convex2.passed;
  out.hypotheses.add(convex1);
  out.hypotheses.add(convex2);

  const auto bounded1 = check_bounded_below(psi1, samples, opts.bounded);
  const auto bounded2 = check_bounded_below(psi2, samples, opts.bounded);
  auto describe = [](const char* who, const CheckResult& b) {
    return std::string(who) + (b.passed ? " bounded below (sampled)" : " unbounded below (sampled)") +
           (b.notes.empty() ? "" : " [" + b.notes + "]");
  };
  std::string inf_notes = describe("psi1", bounded1) + "; " + describe("psi2", bounded2);
  const bool some_bounded = bounded1.passed || bounded2.passed;
  if (some_bounded) {
    out.hypotheses.add(CheckResult::make("hypothesis_inf_grad_zero", 0.0,
                                         opts.eps_inf, {}, inf_notes));
  } else {
    out.hypotheses.add(CheckResult::make("hypothesis_inf_grad_zero", inf_grad,
                                         opts.eps_inf, inf_at,
                                         "min sampled |grad psi1|; " + inf_notes));
  }
  const bool inf_ok = out.hypotheses.find("hypothesis_inf_grad_zero")->passed;
  bool route = convex && inf_ok;

  if (opts.v_convex_variant) {
    const PotentialPair p1 = make_pair(psi1);
    auto vconvex = check_monotone_gradient(p1.v, pairs);
    vconvex.check_id = "hypothesis_v_convex";
    auto b1 = bounded1;
    b1.check_id = "hypothesis_psi1_bounded_below";
    auto b2 = bounded2;
    b2.check_id = "hypothesis_psi2_bounded_below";
    route = route || (vconvex.passed && b1.passed && b2.passed);
    out.hypotheses.add(vconvex);
    out.hypotheses.add(b1);
    out.hypotheses.add(b2);
  }
  out.hypotheses_met = out.hypotheses.find("hypothesis_equal_norms")->passed && route;

  double grad_gap = 0.0;
  Vector grad_at = samples.front();
  std::vector<double> diffs;
  diffs.reserve(samples.size());
  for (const auto& x : samples) {
    const double gap = (psi1.gradient(x) - psi2.gradient(x)).norm();
    if (gap > grad_gap) {
      grad_gap = gap;
      grad_at = x;
    }
    diffs.push_back(psi2.value(x) - psi1.value(x));
  }
  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= static_cast<double>(diffs.size());
  double var = 0.0;
  for (double d : diffs) var += (d - mean) * (d - mean);
  const double stddev = std::sqrt(var / static_cast<double>(diffs.size()));
  out.c = mean;
  out.conclusion.add(CheckResult::make("conclusion_equal_gradients", grad_gap,
                                       opts.tol_conclusion, grad_at));
  out.conclusion.add(CheckResult::make(
      "conclusion_constant_difference", stddev / (1.0 + std::abs(mean)),
      opts.tol_conclusion, {},
      "stddev of psi2 - psi1 over samples, relative to 1 + |c|; c = " + format_real(mean)));

  if (!out.hypotheses_met) {
    out.status = DeterminationStatus::hypothesis_not_met;
  } else {
    out.status = out.conclusion.all_passed() ? DeterminationStatus::pass
                                             : DeterminationStatus::conclusion_failed;
  }
  return out;
}

// ---- convexity criterion --------------------------------------------------

nlohmann::json to_json(const ConvexityCriterionResult& r) {
  return {{"implication", r.theorem_violation ? "THEOREM-VIOLATION" : "consistent"},
          {"report", to_json(r.report)}};
}

ConvexityCriterionResult convexity_criterion_check(
    const PotentialPair& pp, const std::vector<std::pair<Vector, Vector>>& pairs,
    const std::vector<Vector>& probes, const BoundedBelowOptions& opts) {
  ConvexityCriterionResult out;
  out.report.subject = pp.psi.name() + ": convexity criterion";
  auto v_convex = check_monotone_gradient(pp.v, pairs);
  v_convex.check_id = "criterion_v_convex";
  auto bounded = check_bounded_below(pp.psi, probes, opts);
  bounded.check_id = "criterion_psi_bounded_below";
  auto psi_convex = check_monotone_gradient(pp.psi, pairs);
  psi_convex.check_id = "criterion_psi_convex";
  out.theorem_violation = v_convex.passed && bounded.passed && !psi_convex.passed;
  out.report.add(v_convex);
  out.report.add(bounded);
  out.report.add(psi_convex);
  return out;
}

}  // namespace evanflow
