#include "evanflow/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "evanflow/diagnostics.hpp"
#include "evanflow/eikonal.hpp"
#include "evanflow/evanescent.hpp"
#include "evanflow/util.hpp"

namespace evanflow::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kCommands = {"flow",        "second-order",
                                            "evanesce",    "reconstruct",
                                            "determine",   "check-convexity"};

const std::vector<std::string> kFlowChecks = {
    "lyapunov_psi",   "energy_identity",      "grad_norm_monotone",
    "distance_monotone", "velocity_bound",    "level_integral_bound",
    "limit_point",    "hardy"};
const std::vector<std::string> kSecondOrderChecks = {
    "first_integral", "modula_equality", "modula_equality_v", "phi_residual",
    "hardy"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

// ---- strict JSON readers --------------------------------------------------

double get_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw InputError("config key '" + key + "' must be a number");
  return v.get<double>();
}

std::size_t get_count(const json& v, const std::string& key) {
  const double d = get_number(v, key);
  if (!(d >= 0.0) || d != std::floor(d) || d > 1e15) {
    throw InputError("config key '" + key + "' must be a nonnegative integer");
  }
  return static_cast<std::size_t>(d);
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw InputError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

bool get_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw InputError("config key '" + key + "' must be true or false");
  return v.get<bool>();
}

Vector get_vector(const json& v, const std::string& key) {
  if (v.is_string()) return parse_vector(v.get<std::string>(), key);
  if (!v.is_array() || v.empty()) {
    throw InputError("config key '" + key + "' must be a nonempty list of numbers");
  }
  Vector x(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) x[static_cast<Eigen::Index>(i)] = get_number(v[i], key);
  return x;
}

std::vector<std::string> get_list(const json& v, const std::string& key) {
  std::vector<std::string> out;
  if (v.is_string()) {
    for (const auto& s : split(v.get<std::string>(), ',')) out.push_back(trim(s));
  } else if (v.is_array()) {
    for (const auto& e : v) out.push_back(trim(get_string(e, key)));
  } else {
    throw InputError("config key '" + key + "' must be a list of strings");
  }
  if (out.empty()) throw InputError("config key '" + key + "' is empty");
  return out;
}

json vector_json(const Vector& x) {
  auto a = json::array();
  for (Eigen::Index i = 0; i < x.size(); ++i) a.push_back(x[i]);
  return a;
}

json optional_vector_json(const std::optional<Vector>& x) {
  return x ? vector_json(*x) : json(nullptr);
}

// ---- output helpers -------------------------------------------------------

fs::path output_dir(const RunConfig& c) {
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + c.out + "': " + ec.message());
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

template <typename Writer>
void write_text(const fs::path& path, Writer&& writer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  writer(os);
}

void log_report(std::ostream& log, const DiagnosticsReport& r) {
  for (const auto& c : r.checks) {
    log << (c.passed ? "PASS " : "FAIL ") << c.check_id << "  violation "
        << format_real(c.worst_violation) << "  tolerance "
        << format_real(c.tolerance_used) << '\n';
  }
}

Vector require_x0(const RunConfig& c, int dim) {
  if (!c.x0) throw InputError("x0 is required (--x0)");
  if (c.x0->size() != dim) {
    throw InputError("x0 has dimension " + std::to_string(c.x0->size()) + ", potential '" +
                     c.potential + "' expects " + std::to_string(dim));
  }
  return *c.x0;
}

PotentialPair require_potential(const std::string& id, const char* flag) {
  if (id.empty()) throw InputError(std::string("a potential id is required (") + flag + ")");
  return potential_from_id(id);
}

std::optional<Vector> known_critical_point(const RunConfig& c, const PotentialPair& p) {
  if (c.crit) {
    if (c.crit->size() != p.psi.dim()) throw InputError("crit has the wrong dimension");
    return c.crit;
  }
  const Vector origin = Vector::Zero(p.psi.dim());
  if (p.psi.gradient(origin).norm() < c.integrator.eps_crit) return origin;
  return std::nullopt;
}

std::vector<std::string> requested_checks(const RunConfig& c,
                                          const std::vector<std::string>& known,
                                          const std::vector<std::string>& applicable) {
  if (c.checks.size() == 1 && (c.checks[0] == "all" || c.checks[0] == "none")) {
    return c.checks[0] == "all" ? applicable : std::vector<std::string>{};
  }
  for (const auto& id : c.checks) {
    if (!contains(known, id)) throw InputError("unknown check '" + id + "' for " + c.command);
  }
  return c.checks;
}

// Flags shown per subcommand. Config files accept every key so that an
// echoed config can be fed back unchanged.
bool flag_applies(const std::string& command, const std::string& key) {
  static const std::map<std::string, std::vector<std::string>> kKeys = {
      {"flow", {"potential", "x0", "crit", "method", "T", "h", "rtol", "atol", "max_step",
                "r_max", "eps_crit", "checks"}},
      {"second-order", {"potential", "x0", "v0", "method", "T", "h", "rtol", "atol",
                        "max_step", "r_max", "eps_crit", "checks"}},
      {"evanesce", {"potential", "x0", "T", "N", "mu", "tol_opt", "max_iters", "solver",
                    "r_max"}},
      {"reconstruct", {"f", "grid", "T", "N", "mu", "tol_opt", "max_iters", "solver",
                       "r_max"}},
      {"determine", {"potential", "potential2", "samples", "pairs", "radius"}},
      {"check-convexity", {"potential", "samples", "pairs", "radius"}},
  };
  if (key == "out" || key == "seed" || key == "workers") return true;
  return contains(kKeys.at(command), key);
}

json base_output(const RunConfig& c) { return {{"command", c.command}, {"config", to_json(c)}}; }

ActionOptions action_options(const RunConfig& c) {
  ActionOptions a;
  a.horizon = c.integrator.horizon;
  a.n = c.n;
  a.mu = c.mu;
  a.tol_opt = c.tol_opt;
  a.max_iters = c.max_iters;
  return a;
}

ShootOptions shoot_options(const RunConfig& c) {
  ShootOptions s;
  s.horizon = c.integrator.horizon;
  s.first_horizon = std::min(s.first_horizon, s.horizon);
  s.r_max = c.integrator.r_max;
  return s;
}

}  // namespace

// ---- config ---------------------------------------------------------------

RunConfig parse_config(const json& j, const std::string& command) {
  if (!contains(kCommands, command)) throw InputError("unknown command '" + command + "'");
  if (!j.is_object()) throw InputError("config must be a JSON object");
  RunConfig c;
  c.command = command;
  const bool long_horizon = command == "evanesce" || command == "reconstruct";
  c.integrator.horizon = long_horizon ? 12.0 : 10.0;

  for (const auto& [key, v] : j.items()) {
    if (key == "command") {
      if (get_string(v, key) != command) {
        throw InputError("config is for command '" + v.get<std::string>() + "', not '" +
                         command + "'");
      }
    } else if (key == "potential") {
      c.potential = get_string(v, key);
    } else if (key == "potential2") {
      c.potential2 = get_string(v, key);
    } else if (key == "f") {
      c.f = get_string(v, key);
    } else if (key == "x0") {
      if (!v.is_null()) c.x0 = get_vector(v, key);
    } else if (key == "v0") {
      if (!v.is_null()) c.v0 = get_vector(v, key);
    } else if (key == "crit") {
      if (!v.is_null()) c.crit = get_vector(v, key);
    } else if (key == "method") {
      c.integrator.method = parse_method(get_string(v, key));
    } else if (key == "T") {
      c.integrator.horizon = get_number(v, key);
    } else if (key == "h") {
      c.integrator.h = get_number(v, key);
    } else if (key == "rtol") {
      c.integrator.rtol = get_number(v, key);
    } else if (key == "atol") {
      c.integrator.atol = get_number(v, key);
    } else if (key == "max_step") {
      c.integrator.max_step = get_number(v, key);
    } else if (key == "r_max") {
      c.integrator.r_max = get_number(v, key);
    } else if (key == "eps_crit") {
      c.integrator.eps_crit = get_number(v, key);
    } else if (key == "N") {
      c.n = get_count(v, key);
    } else if (key == "mu") {
      if (v.is_string() && v.get<std::string>() == "auto") {
        c.mu.reset();
      } else if (!v.is_null()) {
        c.mu = get_number(v, key);
      }
    } else if (key == "tol_opt") {
      c.tol_opt = get_number(v, key);
    } else if (key == "max_iters") {
      c.max_iters = get_count(v, key);
    } else if (key == "solver") {
      c.solver = get_string(v, key);
      if (c.solver != "action" && c.solver != "shooting" && c.solver != "both") {
        throw InputError("solver must be action, shooting or both");
      }
    } else if (key == "crossval") {
      c.crossval = get_bool(v, key);
    } else if (key == "grid") {
      c.grid = get_string(v, key);
    } else if (key == "samples") {
      c.samples = get_count(v, key);
    } else if (key == "pairs") {
      c.pairs = get_count(v, key);
    } else if (key == "radius") {
      c.radius = get_number(v, key);
    } else if (key == "v_convex_variant") {
      c.v_convex_variant = get_bool(v, key);
    } else if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(get_count(v, key));
    } else if (key == "out") {
      c.out = get_string(v, key);
    } else if (key == "checks") {
      c.checks = get_list(v, key);
    } else if (key == "workers") {
      c.workers = static_cast<unsigned>(get_count(v, key));
    } else {
      throw InputError("unknown config key '" + key + "'");
    }
  }
  c.integrator.validate();
  if (!(c.radius > 0.0)) throw InputError("radius must be positive");
  return c;
}

json to_json(const RunConfig& c) {
  return {{"command", c.command},
          {"potential", c.potential},
          {"potential2", c.potential2},
          {"f", c.f},
          {"x0", optional_vector_json(c.x0)},
          {"v0", optional_vector_json(c.v0)},
          {"crit", optional_vector_json(c.crit)},
          {"method", to_string(c.integrator.method)},
          {"T", c.integrator.horizon},
          {"h", c.integrator.h},
          {"rtol", c.integrator.rtol},
          {"atol", c.integrator.atol},
          {"max_step", c.integrator.max_step},
          {"r_max", c.integrator.r_max},
          {"eps_crit", c.integrator.eps_crit},
          {"N", c.n},
          {"mu", c.mu ? json(*c.mu) : json("auto")},
          {"tol_opt", c.tol_opt},
          {"max_iters", c.max_iters},
          {"solver", c.solver},
          {"crossval", c.crossval},
          {"grid", c.grid},
          {"samples", c.samples},
          {"pairs", c.pairs},
          {"radius", c.radius},
          {"v_convex_variant", c.v_convex_variant},
          {"seed", c.seed},
          {"out", c.out},
          {"checks", c.checks}};
}

// ---- commands -------------------------------------------------------------

int cmd_flow(const RunConfig& c, std::ostream& log) {
  const PotentialPair p = require_potential(c.potential, "--potential");
  const Vector x0 = require_x0(c, p.psi.dim());
  const auto crit = known_critical_point(c, p);
  const bool convex = p.psi.flags().claims_convex;

  const Trajectory u = gradient_flow(p, x0, c.integrator);
  const bool diverged = u.termination == Termination::diverged;
  std::vector<std::string> applicable = {"lyapunov_psi", "energy_identity"};
  if (convex) {
    applicable.push_back("grad_norm_monotone");
    applicable.push_back("velocity_bound");
    if (crit) {
      applicable.insert(applicable.end(),
                        {"distance_monotone", "level_integral_bound", "hardy"});
    }
    if (crit || diverged) applicable.push_back("limit_point");
  }
  const auto checks = requested_checks(c, kFlowChecks, applicable);

  DiagnosticsReport report;
  report.subject = "flow " + p.psi.name() + " from " + format_point(x0);
  auto need_crit = [&](const std::string& id) -> const Vector& {
    if (!crit) throw InputError("check '" + id + "' needs a known critical point (crit)");
    return *crit;
  };
  for (const auto& id : checks) {
    if (id == "lyapunov_psi") report.add(check_lyapunov_psi(u, p.psi));
    if (id == "energy_identity") report.add(check_energy_identity(u, p.psi));
    if (id == "grad_norm_monotone") report.add(check_grad_norm_monotone(u, p.psi));
    if (id == "distance_monotone") {
      report.add(check_distance_monotone(u, need_crit(id), p.psi, c.integrator.eps_crit));
    }
    if (id == "velocity_bound") report.add(check_velocity_bound(u, p.psi, crit.value_or(x0)));
    if (id == "level_integral_bound") {
      report.add(check_level_integral_bound(u, p.psi, need_crit(id), c.integrator.eps_crit));
    }
    if (id == "limit_point") report.add(check_limit_point(u, p.psi));
    if (id == "hardy") report.add(check_hardy(u));
  }

  const fs::path dir = output_dir(c);
  write_text(dir / "trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, u); });
  json j = base_output(c);
  j["termination"] = to_string(u.termination);
  j["nodes"] = u.size();
  j["end_time"] = u.end_time();
  j["end_state"] = vector_json(u.states.back());
  j["diagnostics"] = to_json(report);
  write_json(dir / "diagnostics.json", j);

  log << "flow: " << u.size() << " nodes, " << to_string(u.termination) << ", end state "
      << format_point(u.states.back()) << '\n';
  log_report(log, report);
  return report.all_passed() ? kPass : kCheckFailed;
}

int cmd_second_order(const RunConfig& c, std::ostream& log) {
  const PotentialPair p = require_potential(c.potential, "--potential");
  const Vector x0 = require_x0(c, p.psi.dim());
  if (!c.v0) throw InputError("v0 is required for second-order (--v0)");
  if (c.v0->size() != x0.size()) throw InputError("v0 and x0 differ in dimension");
  const Vector v0 = *c.v0;

  const Trajectory v = second_order_flow(p.v, x0, v0, c.integrator);
  const auto measures = evanescence_measures(v, p.v);
  const double vx0 = p.v.value(x0);
  const double i0 = 0.5 * v0.squaredNorm() - vx0;
  const Vector g0 = p.psi.gradient(x0);

  std::vector<std::string> applicable = {"first_integral"};
  if (std::abs(i0) <= 1e-8 * (1.0 + vx0)) {
    applicable.push_back("modula_equality");
    applicable.push_back("modula_equality_v");
  }
  if ((v0 + g0).norm() <= 1e-8 * (1.0 + g0.norm())) applicable.push_back("phi_residual");
  if (measures.classification == EvanescenceClass::strong) applicable.push_back("hardy");
  const auto checks = requested_checks(c, kSecondOrderChecks, applicable);

  DiagnosticsReport report;
  report.subject = "second-order " + p.v.name() + " from " + format_point(x0);
  for (const auto& id : checks) {
    if (id == "first_integral") report.add(check_first_integral(v, p.v));
    if (id == "modula_equality") report.add(check_modula_equality(v, p.psi));
    if (id == "modula_equality_v") report.add(check_modula_equality_v(v, p.v));
    if (id == "phi_residual") report.add(check_phi_residual(v, p.psi, +1));
    if (id == "hardy") report.add(check_hardy(v));
  }

  const fs::path dir = output_dir(c);
  write_text(dir / "trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, v); });
  json j = base_output(c);
  j["termination"] = to_string(v.termination);
  j["nodes"] = v.size();
  j["end_time"] = v.end_time();
  j["end_state"] = vector_json(v.states.back());
  j["first_integral_initial"] = i0;
  j["evanescence"] = to_json(measures);
  j["diagnostics"] = to_json(report);
  write_json(dir / "diagnostics.json", j);

  log << "second-order: " << v.size() << " nodes, " << to_string(v.termination)
      << ", evanescence " << to_string(measures.classification) << '\n';
  log_report(log, report);
  return report.all_passed() ? kPass : kCheckFailed;
}

int cmd_evanesce(const RunConfig& c, std::ostream& log) {
  const PotentialPair p = require_potential(c.potential, "--potential");
  const Vector x0 = require_x0(c, p.psi.dim());
  // Cross-validation runs both solvers, so both are reported.
  const bool use_action = c.crossval || c.solver != "shooting";
  const bool use_shooting = c.crossval || c.solver != "action";

  std::optional<EvanescentSolveResult> action, shooting;
  std::optional<CrossValidation> xv;
  if (c.crossval) {
    CrossValidateOptions o;
    o.action = action_options(c);
    o.shoot = shoot_options(c);
    o.seed = c.seed;
    xv = cross_validate(p, x0, o);
    action = xv->action;
    shooting = xv->shooting;
  } else {
    if (use_action) action = minimize_action(p.v, x0, action_options(c));
    if (use_shooting) shooting = shoot_evanescent(p.v, x0, shoot_options(c));
  }

  const fs::path dir = output_dir(c);
  json j = base_output(c);
  bool solved = true;
  if (use_action) {
    j["action"] = to_json(*action);
    solved = solved && action->converged;
    write_text(dir / "path.csv", [&](std::ostream& os) { write_trajectory_csv(os, action->orbit); });
    log << "action: converged " << (action->converged ? "true" : "false") << ", "
        << action->notes << '\n';
  }
  if (use_shooting) {
    j["shooting"] = to_json(*shooting);
    solved = solved && shooting->converged;
    write_text(dir / "shooting_orbit.csv",
               [&](std::ostream& os) { write_trajectory_csv(os, shooting->orbit); });
    log << "shooting: converged " << (shooting->converged ? "true" : "false") << ", v0 "
        << format_point(shooting->v0) << '\n';
  }
  int code = solved ? kPass : kCheckFailed;
  if (xv) {
    j["cross_validation"] = {{"hypothesis_met", xv->hypothesis_met},
                             {"report", to_json(xv->report)}};
    log_report(log, xv->report);
    if (code == kPass) {
      if (!xv->hypothesis_met) {
        code = kHypothesisNotMet;
      } else if (!xv->report.all_passed()) {
        code = kCheckFailed;
      }
    }
  }
  write_json(dir / "solve.json", j);
  return code;
}

int cmd_reconstruct(const RunConfig& c, std::ostream& log) {
  if (c.f.empty()) throw InputError("an f id is required (--f)");
  if (c.grid.empty()) throw InputError("a grid is required (--grid)");
  const DifferentiableField f = f_from_id(c.f);
  const GridSpec grid = parse_grid_spec(c.grid);
  if (grid.dim() != f.dim()) throw InputError("grid dimension does not match f");

  ReconstructOptions o;
  o.action = action_options(c);
  o.shoot = shoot_options(c);
  if (c.solver == "shooting") o.method = ReconMethod::shooting;
  o.workers = c.workers;
  const auto r = reconstruct_grid(f, grid.points(), o);

  bool regular = true;
  for (const auto& a : grid.axes) regular = regular && a.count >= 3;
  std::optional<CheckResult> residual;
  if (regular) residual = eikonal_residual(r, f, grid);

  const fs::path dir = output_dir(c);
  write_text(dir / "reconstruction.csv",
             [&](std::ostream& os) { write_reconstruction_csv(os, r); });
  json j = base_output(c);
  j["reconstruction"] = to_json(r);
  j["eikonal_residual"] = residual ? to_json(*residual) : json(nullptr);
  write_json(dir / "reconstruction.json", j);

  log << "reconstruct: " << r.per_point.size() << " points, " << r.failed_count()
      << " failed, offset " << format_real(r.offset) << '\n';
  if (residual) {
    DiagnosticsReport rep;
    rep.add(*residual);
    log_report(log, rep);
  }
  const bool ok = r.failed_count() == 0 && (!residual || residual->passed);
  return ok ? kPass : kCheckFailed;
}

int cmd_determine(const RunConfig& c, std::ostream& log) {
  const PotentialPair p1 = require_potential(c.potential, "--potential");
  const PotentialPair p2 = require_potential(c.potential2, "--potential2");
  if (p1.psi.dim() != p2.psi.dim()) throw InputError("the two potentials differ in dimension");
  const auto samples = probe_points(p1.psi.dim(), c.samples, c.radius, c.seed);
  DeterminationOptions o;
  o.seed = c.seed;
  o.convexity_pairs = c.pairs;
  o.v_convex_variant = c.v_convex_variant;
  const auto r = determination_check(p1.psi, p2.psi, samples, o);

  const fs::path dir = output_dir(c);
  json j = base_output(c);
  j["determination"] = to_json(r);
  write_json(dir / "determination.json", j);

  log << "determine: " << to_string(r.status) << ", c = " << format_real(r.c) << '\n';
  log_report(log, r.hypotheses);
  log_report(log, r.conclusion);
  switch (r.status) {
    case DeterminationStatus::pass: return kPass;
    case DeterminationStatus::conclusion_failed: return kCheckFailed;
    case DeterminationStatus::hypothesis_not_met: return kHypothesisNotMet;
  }
  return kCheckFailed;
}

int cmd_check_convexity(const RunConfig& c, std::ostream& log) {
  const PotentialPair p = require_potential(c.potential, "--potential");
  const auto probes = probe_points(p.psi.dim(), c.samples, c.radius, c.seed);
  const auto r = convexity_criterion_check(p, sample_pairs(probes, c.pairs, c.seed), probes);

  const fs::path dir = output_dir(c);
  json j = base_output(c);
  j["convexity"] = to_json(r);
  write_json(dir / "convexity.json", j);

  log << "check-convexity: " << (r.theorem_violation ? "THEOREM-VIOLATION" : "consistent")
      << '\n';
  log_report(log, r.report);
  if (r.theorem_violation) return kCheckFailed;
  return r.report.all_passed() ? kPass : kHypothesisNotMet;
}

// ---- entry point ----------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gradient flows, evanescent orbits and Eikonal reconstruction"};
  app.name("evanflow");
  app.set_help_flag("--help", "Print this help message and exit");  // frees -h for --h
  app.require_subcommand(1);
  app.set_version_flag("--version", "evanflow 0.1.0");

  // flag name -> (config key, kind)
  enum class Kind { text, number, count, vector, list, mu };
  const std::vector<std::tuple<std::string, std::string, Kind, std::string>> flags = {
      {"--potential", "potential", Kind::text, "potential id, e.g. quadratic:1,0;0,2"},
      {"--potential2", "potential2", Kind::text, "second potential id (determine)"},
      {"--f", "f", Kind::text, "f id for reconstruct, e.g. gradsq:quadratic:1"},
      {"--x0", "x0", Kind::vector, "initial point, comma separated"},
      {"--v0", "v0", Kind::vector, "initial velocity (second-order)"},
      {"--crit", "crit", Kind::vector, "known critical point"},
      {"--method", "method", Kind::text, "integrator: adaptive or rk4"},
      {"--T", "T", Kind::number, "horizon"},
      {"--h", "h", Kind::number, "rk4 step"},
      {"--rtol", "rtol", Kind::number, "adaptive relative tolerance"},
      {"--atol", "atol", Kind::number, "adaptive absolute tolerance"},
      {"--max-step", "max_step", Kind::number, "largest adaptive step"},
      {"--r-max", "r_max", Kind::number, "divergence radius"},
      {"--eps-crit", "eps_crit", Kind::number, "critical-point threshold"},
      {"--N", "N", Kind::count, "action grid intervals"},
      {"--mu", "mu", Kind::mu, "terminal penalty weight or 'auto'"},
      {"--tol-opt", "tol_opt", Kind::number, "action gradient tolerance"},
      {"--max-iters", "max_iters", Kind::count, "action iteration cap"},
      {"--solver", "solver", Kind::text, "action, shooting or both"},
      {"--grid", "grid", Kind::text, "min:max:count[,...] per axis"},
      {"--samples", "samples", Kind::count, "sample/probe point count"},
      {"--pairs", "pairs", Kind::count, "monotonicity pair count"},
      {"--radius", "radius", Kind::number, "sampling box half-width"},
      {"--seed", "seed", Kind::count, "random seed"},
      {"--out", "out", Kind::text, "output directory"},
      {"--checks", "checks", Kind::list, "check ids or 'all'"},
      {"--workers", "workers", Kind::count, "worker threads (default: EVANFLOW_WORKERS or all cores)"},
  };

  struct Parsed {
    std::string config_path;
    std::map<std::string, std::string> values;
    bool no_crossval = false;
    bool v_convex_variant = false;
  };
  std::map<std::string, Parsed> parsed;
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : kCommands) {
    auto* sub = app.add_subcommand(name);
    subs[name] = sub;
    auto& slot = parsed[name];
    sub->add_option("--config", slot.config_path, "JSON config file (flags override it)")
        ->type_name("PATH");
    for (const auto& [flag, key, kind, help] : flags) {
      if (!flag_applies(name, key)) continue;
      static const char* const kTypeNames[] = {"TEXT", "FLOAT", "INT", "CSV", "LIST", "FLOAT|auto"};
      std::string type = kTypeNames[static_cast<int>(kind)];
      if (key == "potential" || key == "potential2" || key == "f") type = "ID";
      if (key == "out") type = "DIR";
      if (key == "grid") type = "SPEC";
      sub->add_option(flag, slot.values[key], help)->type_name(type);
    }
    if (name == "evanesce") sub->add_flag("--no-crossval", slot.no_crossval, "skip cross-validation");
    if (name == "determine") {
      sub->add_flag("--v-convex-variant", slot.v_convex_variant,
                    "also accept bounded-below potentials with convex V");
    }
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kPass : kInputError;
  }

  try {
    std::string command;
    for (const auto& name : kCommands) {
      if (subs[name]->parsed()) command = name;
    }
    const Parsed& p = parsed[command];
    json j = json::object();
    if (!p.config_path.empty()) {
      std::ifstream is(p.config_path);
      if (!is) throw InputError("cannot read config file '" + p.config_path + "'");
      try {
        j = json::parse(is);
      } catch (const json::parse_error& e) {
        throw InputError("config file '" + p.config_path + "': " + e.what());
      }
      if (!j.is_object()) throw InputError("config must be a JSON object");
      j.erase("command");
    }
    auto* sub = subs[command];
    for (const auto& [flag, key, kind, help] : flags) {
      if (!flag_applies(command, key) || sub->count(flag) == 0) continue;
      const std::string& text = p.values.at(key);
      switch (kind) {
        case Kind::text: j[key] = text; break;
        case Kind::number: j[key] = parse_double(text, flag); break;
        case Kind::count: j[key] = parse_double(text, flag); break;
        case Kind::vector: j[key] = text; break;
        case Kind::list: j[key] = text; break;
        case Kind::mu:
          j[key] = trim(text) == "auto" ? json("auto") : json(parse_double(text, flag));
          break;
      }
    }
    if (p.no_crossval) j["crossval"] = false;
    if (p.v_convex_variant) j["v_convex_variant"] = true;
    if (sub->count("--workers") == 0 && !j.contains("workers")) {
      if (const char* env = std::getenv("EVANFLOW_WORKERS")) {
        j["workers"] = parse_double(env, "EVANFLOW_WORKERS");
      }
    }

    const RunConfig c = parse_config(j, command);
    if (command == "flow") return cmd_flow(c, out);
    if (command == "second-order") return cmd_second_order(c, out);
    if (command == "evanesce") return cmd_evanesce(c, out);
    if (command == "reconstruct") return cmd_reconstruct(c, out);
    if (command == "determine") return cmd_determine(c, out);
    return cmd_check_convexity(c, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const NumericDomainError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
}

}  // namespace evanflow::cli
