// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "evanflow/cli.hpp"
#include "evanflow/diagnostics.hpp"
#include "evanflow/eikonal.hpp"
#include "evanflow/evanescent.hpp"
#include "evanflow/integrate.hpp"
#include "evanflow/util.hpp"
#include "oracles.hpp"

using namespace evanflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Accumulates sub-results; the first failure is kept as the detail line.
class Tally {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok && pass_) {
      pass_ = false;
      failure_ = what;
    }
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  Outcome done() const { return {pass_, pass_ ? notes_ : failure_}; }

 private:
  bool pass_ = true;
  std::string failure_;
  std::string notes_;
};

std::string num(double x) {
  std::ostringstream os;
  os.precision(3);
  os << x;
  return os.str();
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Convex potentials whose Hessian spectral radius is at most 2, with starts.
struct Case {
  const char* id;
  Vector x0;
};

std::vector<Case> convex_catalog() {
  return {{"quadratic:1", vec({1})},
          {"quadratic:1", vec({-2})},
          {"quadratic:1,0;0,2", vec({1, 1})},
          {"quadratic:1,0;0,2", vec({-0.5, 1.5})},
          {"quadratic:1,0.5;0.5,1", vec({1, -0.3})},
          {"quadratic:1,0;0,0", vec({1, 1})}};
}

IntegratorOptions tight(double horizon) {
  IntegratorOptions o;
  o.rtol = 1e-9;
  o.horizon = horizon;
  return o;
}

Trajectory evanescent_orbit(const PotentialPair& p, const Vector& x0, double horizon) {
  return second_order_flow(p.v, x0, -p.psi.gradient(x0), tight(horizon));
}

// ---- criteria --------------------------------------------------------------

Outcome closed_form_orbit() {
  const auto p = potential_from_id("example_one");
  const auto u = gradient_flow(p, vec({0}), tight(10));
  double err = 0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    err = std::max(err, std::abs(u.states[k][0] - oracle::example_one_orbit(u.times[k])));
  }
  Tally t;
  t.require(u.end_time() == 10.0, "orbit stopped at t = " + num(u.end_time()));
  t.require(err < 1e-6, "max error " + num(err));
  t.note("max error " + num(err) + " over " + std::to_string(u.size()) + " nodes");
  return t.done();
}

Outcome energy_identity() {
  Tally t;
  double worst = 0;
  std::vector<Case> cases = convex_catalog();
  cases.push_back({"quadratic:2,1;1,2", vec({1, 0.5})});
  cases.push_back({"example_one", vec({0})});
  cases.push_back({"example_one", vec({1.5})});
  for (const auto& c : cases) {
    const auto p = potential_from_id(c.id);
    const auto u = gradient_flow(p, c.x0, IntegratorOptions{});
    // Hermite-corrected trapezoid of s(t) = ‖∇ψ(u)‖², using s' = −2⟨g, ∇²ψ g⟩.
    double integral = 0;
    for (std::size_t k = 1; k < u.size(); ++k) {
      const double h = u.times[k] - u.times[k - 1];
      const Vector g0 = p.psi.gradient(u.states[k - 1]), g1 = p.psi.gradient(u.states[k]);
      const double d0 = -2 * g0.dot(p.psi.hessvec(u.states[k - 1], g0));
      const double d1 = -2 * g1.dot(p.psi.hessvec(u.states[k], g1));
      integral += 0.5 * h * (g0.squaredNorm() + g1.squaredNorm()) + h * h / 12 * (d0 - d1);
    }
    const double drop = p.psi.value(u.states.front()) - p.psi.value(u.states.back());
    const double gap = std::abs(integral - drop);
    worst = std::max(worst, gap);
    t.require(u.end_time() == 10.0, std::string(c.id) + " stopped early");
    t.require(gap < 1e-5, std::string(c.id) + " from " + format_point(c.x0) + ": gap " + num(gap));
  }
  t.note(std::to_string(cases.size()) + " flows, worst gap " + num(worst));
  return t.done();
}

Outcome first_integral() {
  Tally t;
  double worst = 0;
  const std::vector<std::pair<const char*, std::pair<Vector, Vector>>> cases = {
      {"quadratic:1", {vec({1}), vec({-1})}},
      {"quadratic:1,0;0,2", {vec({1, 1}), vec({-1, -2})}},
      {"quadratic:1,0.5;0.5,1", {vec({1, -0.3}), vec({-0.85, -0.2})}},
      {"quadratic:1,0;0,0", {vec({1, 1}), vec({-1, 0})}},
      // Bounded-energy orbit with I ≠ 0: v'' = v from v(0) = 1 shot slower than e^{-t}.
      {"quadratic:1", {vec({1}), vec({-0.9})}},
  };
  for (const auto& [id, init] : cases) {
    const auto p = potential_from_id(id);
    auto opts = tight(10);
    const auto v = second_order_flow(p.v, init.first, init.second, opts);
    const auto energy = [&](std::size_t k) {
      return 0.5 * v.velocities[k].squaredNorm() - p.v.value(v.states[k]);
    };
    double drift = 0;
    for (std::size_t k = 0; k < v.size(); ++k) drift = std::max(drift, std::abs(energy(k) - energy(0)));
    worst = std::max(worst, drift);
    t.require(drift < 1e-7, std::string(id) + ": drift " + num(drift));
  }
  t.note("worst drift " + num(worst));
  return t.done();
}

Outcome modula_and_phi() {
  Tally t;
  double worst_mod = 0, worst_phi = 0;
  std::vector<Case> cases = convex_catalog();
  cases.push_back({"example_one", vec({0})});
  for (const auto& c : cases) {
    const auto p = potential_from_id(c.id);
    const auto v = evanescent_orbit(p, c.x0, 10);
    double mod = 0, phi = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const Vector g = p.psi.gradient(v.states[k]);
      mod = std::max(mod, std::abs(v.velocities[k].norm() - g.norm()));
      phi = std::max(phi, (v.velocities[k] + g).norm());
    }
    worst_mod = std::max(worst_mod, mod);
    worst_phi = std::max(worst_phi, phi);
    t.require(v.termination == Termination::horizon_reached,
              std::string(c.id) + ": " + to_string(v.termination));
    t.require(mod < 1e-6, std::string(c.id) + ": modula gap " + num(mod));
    t.require(phi < 1e-3, std::string(c.id) + ": phi residual " + num(phi));
  }
  // The orbits recovered from V alone must satisfy the same first-order equation.
  // The action path carries an O(dt²) rate bias, so it is refined to dt = 0.025.
  CrossValidateOptions fine;
  fine.action.n = 480;
  double worst_solver_phi = 0;
  for (const auto& c : convex_catalog()) {
    const auto p = potential_from_id(c.id);
    const auto xv = cross_validate(p, c.x0, fine);
    for (const char* id : {"phi_residual_action", "phi_residual_shooting"}) {
      const auto* r = xv.report.find(id);
      t.require(r && r->worst_violation < 1e-3,
                std::string(c.id) + ": " + id + " " + (r ? num(r->worst_violation) : "missing"));
      if (r) worst_solver_phi = std::max(worst_solver_phi, r->worst_violation);
    }
  }
  t.note("integrated orbits: modula " + num(worst_mod) + ", phi " + num(worst_phi) +
         "; solver orbits: phi " + num(worst_solver_phi));
  return t.done();
}

Outcome contraction() {
  Tally t;
  IntegratorOptions o;
  o.method = Method::rk4;
  o.h = 1e-3;
  o.horizon = 10;
  const std::vector<std::tuple<const char*, Vector, Vector>> pairs = {
      {"quadratic:1", vec({1}), vec({2})},
      {"quadratic:2", vec({1}), vec({2})},
      {"quadratic:1,0;0,2", vec({1, 1}), vec({2, 2})},
      {"quadratic:1,0;0,2", vec({1, -1}), vec({-2, 0.5})},
  };
  double worst = 0;
  for (const auto& [id, a, b] : pairs) {
    const auto p = potential_from_id(id);
    const auto va = second_order_flow(p.v, a, -p.psi.gradient(a), o);
    const auto vb = second_order_flow(p.v, b, -p.psi.gradient(b), o);
    const auto r = check_contraction(va, vb, 1e-6);
    worst = std::max(worst, r.worst_violation);
    t.require(r.passed, std::string(id) + ": violation " + num(r.worst_violation));
  }
  t.note(std::to_string(pairs.size()) + " pairs, worst violation " + num(worst));
  return t.done();
}

Outcome hardy() {
  Tally t;
  int strong = 0;
  double worst = 0;
  for (const auto& c : convex_catalog()) {
    const auto p = potential_from_id(c.id);
    const auto v = evanescent_orbit(p, c.x0, 10);
    if (evanescence_measures(v, p.v).classification != EvanescenceClass::strong) continue;
    ++strong;
    const auto r = check_hardy(v, 1e-6);
    worst = std::max(worst, r.worst_violation);
    t.require(r.passed, std::string(c.id) + ": violation " + num(r.worst_violation));
  }
  t.require(strong >= 5, "only " + std::to_string(strong) + " strongly evanescent orbits");
  t.note(std::to_string(strong) + " strong orbits, worst violation " + num(worst));
  return t.done();
}

Outcome counterexample() {
  const auto p = potential_from_id("neg_square");
  const auto v = second_order_flow(p.v, vec({1}), vec({2}), tight(10));
  const auto m = evanescence_measures(v, p.v);
  Tally t;
  t.require(m.classification == EvanescenceClass::none,
            "classified " + to_string(m.classification));
  t.require(v.termination == Termination::diverged, "termination " + to_string(v.termination));
  t.require(v.end_time() < 8.0, "guard at t = " + num(v.end_time()));
  t.note("diverged at t = " + num(v.end_time()) + ", classification none");
  return t.done();
}

Outcome convexity_criterion() {
  Tally t;
  const char* catalog[] = {"quadratic:1",     "quadratic:1,0;0,2", "quadratic:1,0.5;0.5,1",
                           "quadratic:1,0;0,0", "quadratic:2,1;1,2", "-quadratic:1",
                           "example_one",     "neg_square",        "cubic",
                           "quartic_saddle",  "linear"};
  for (const char* id : catalog) {
    const auto p = potential_from_id(id);
    const auto probes = probe_points(p.psi.dim(), 50, 2.0, 12345);
    const auto r = convexity_criterion_check(p, sample_pairs(probes, 200, 12345), probes);
    t.require(!r.theorem_violation, std::string("THEOREM-VIOLATION on ") + id);
    if (std::string(id) == "cubic" || std::string(id) == "quartic_saddle") {
      const bool i = r.report.find("criterion_v_convex")->passed;
      const bool ii = r.report.find("criterion_psi_bounded_below")->passed;
      const bool iii = r.report.find("criterion_psi_convex")->passed;
      t.require(i && !ii && !iii, std::string(id) + " bundle is not pass/fail/fail");
    }
  }
  t.note("cubic, quartic_saddle pass/fail/fail; no violation on " +
         std::to_string(std::size(catalog)) + " potentials");
  return t.done();
}

Outcome action_solve() {
  Tally t;
  const auto p = potential_from_id("quadratic:1,0;0,2");
  ActionOptions o;
  o.horizon = 12;
  o.n = 240;
  const auto r = minimize_action(p.v, vec({1, 1}), o);
  t.require(r.converged, "minimize_action did not converge: " + r.notes);
  double err = 0;
  if (r.path) {
    for (std::size_t k = 0; k < r.path->nodes.size(); ++k) {
      const double s = r.path->time(k);
      err = std::max(err, (r.path->nodes[k] - vec({std::exp(-s), std::exp(-2 * s)})).norm());
    }
  }
  t.require(r.path.has_value() && err < 1e-3, "max node error " + num(err));

  // Central differences on 10 random paths through x0.
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> noise(0.0, 0.2);
  double worst = 0;
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<Vector> w;
    for (int k = 0; k <= 24; ++k) {
      Vector x = vec({1, 1}) * std::exp(-0.1 * k);
      if (k > 0) x += vec({noise(rng), noise(rng)});
      w.push_back(x);
    }
    const double dt = 0.1, mu = 2.0;
    const auto av = discrete_action(p.v, w, dt, mu);
    double gmax = 0;
    for (const auto& g : av.gradient) gmax = std::max(gmax, g.lpNorm<Eigen::Infinity>());
    for (std::size_t k = 1; k < w.size(); ++k) {
      for (Eigen::Index i = 0; i < 2; ++i) {
        const double h = 1e-6 * (1 + std::abs(w[k][i]));
        auto wp = w, wm = w;
        wp[k][i] += h;
        wm[k][i] -= h;
        const double fd = (discrete_action(p.v, wp, dt, mu).value -
                           discrete_action(p.v, wm, dt, mu).value) / (2 * h);
        const double g = av.gradient[k - 1][i];
        worst = std::max(worst, std::abs(fd - g) / std::max(std::abs(g), 1e-3 * gmax));
      }
    }
  }
  t.require(worst < 1e-5, "gradient relative error " + num(worst));
  t.note("node error " + num(err) + ", gradient rel. error " + num(worst));
  return t.done();
}

Outcome shooting() {
  Tally t;
  const auto p = potential_from_id("quadratic:1");
  const auto s = shoot_evanescent(p.v, vec({1}));
  const double dv = std::abs(s.v0[0] + 1.0);
  t.require(s.converged, "shooting did not converge: " + s.notes);
  t.require(dv < 1e-4, "v0 off by " + num(dv));
  double worst = 0;
  for (const auto& c : convex_catalog()) {
    const auto xv = cross_validate(potential_from_id(c.id), c.x0);
    const auto* r = xv.report.find("xv_action_shooting");
    t.require(r != nullptr, "no action/shooting comparison");
    if (!r) continue;
    worst = std::max(worst, r->worst_violation);
    t.require(r->worst_violation < 5e-3, std::string(c.id) + " from " + format_point(c.x0) +
                                             ": methods differ by " + num(r->worst_violation));
  }
  t.note("|v0 + 1| = " + num(dv) + ", worst method gap " + num(worst));
  return t.done();
}

Outcome eikonal() {
  Tally t;
  const auto f = f_from_id("gradsq:quadratic:1,0;0,2");
  const auto grid = parse_grid_spec("-1:1:5,-1:1:5");
  const auto r = reconstruct_grid(f, grid.points());
  double err = 0;
  for (const auto& p : r.per_point) {
    err = std::max(err, std::abs(p.psi_hat - (0.5 * p.x[0] * p.x[0] + p.x[1] * p.x[1])));
  }
  const auto res = eikonal_residual(r, f, grid, 5e-2);
  t.require(r.failed_count() == 0, std::to_string(r.failed_count()) + " points failed");
  t.require(err < 1e-2, "max error " + num(err));
  t.require(res.passed, "eikonal residual " + num(res.worst_violation));
  t.note("max error " + num(err) + ", residual " + num(res.worst_violation));
  return t.done();
}

// CLI runs write into a scratch directory under the system temp dir.
fs::path scratch_root() { return fs::temp_directory_path() / "evanflow_acceptance"; }

int cli(std::vector<std::string> args, const fs::path& out) {
  args.insert(args.begin(), "evanflow");
  args.insert(args.end(), {"--out", out.string()});
  std::ostringstream sink;
  return cli::run_cli(args, sink, sink);
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

Outcome determination() {
  Tally t;
  const fs::path out = scratch_root() / "determine";
  double worst_c = 0;
  for (const char* id : {"quadratic:1", "quadratic:1,0;0,2", "quadratic:1,0.5;0.5,1"}) {
    const int code = cli({"determine", "--potential", id, "--potential2",
                          std::string(id) + "@5"}, out);
    t.require(code == cli::kPass, std::string(id) + ": exit " + std::to_string(code));
    if (code != cli::kPass) continue;
    const double c = read_json(out / "determination.json")["determination"]["c"];
    worst_c = std::max(worst_c, std::abs(c - 5.0));
    t.require(std::abs(c - 5.0) < 1e-6, std::string(id) + ": c = " + num(c));
  }
  const std::vector<std::pair<std::string, std::string>> refuted = {
      {"linear", "-linear"},
      {"quadratic:1", "-quadratic:1"},
      {"quadratic:1,0;0,2", "-quadratic:1,0;0,2"}};
  for (const auto& [a, b] : refuted) {
    const int code = cli({"determine", "--potential", a, "--potential2", b}, out);
    t.require(code == cli::kHypothesisNotMet, a + " vs " + b + ": exit " + std::to_string(code));
    if (code != cli::kHypothesisNotMet) continue;
    const auto status = read_json(out / "determination.json")["determination"]["status"];
    t.require(status == "hypothesis_not_met", a + " vs " + b + ": status " + status.dump());
  }
  t.note("|c - 5| <= " + num(worst_c) + "; x/-x and A/-A exit 3");
  return t.done();
}

Outcome velocity_and_level_bounds() {
  Tally t;
  double worst = 0;
  int checks = 0;
  const auto ys = oracle::random_points(2, 4, -2, 2, 99);
  for (const auto& c : convex_catalog()) {
    const auto p = potential_from_id(c.id);
    const auto u = gradient_flow(p, c.x0, tight(10));
    const Vector crit = Vector::Zero(p.psi.dim());
    std::vector<CheckResult> rs = {check_velocity_bound(u, p.psi, crit, 1e-6),
                                   check_level_integral_bound(u, p.psi, crit, 1e-10, 1e-6)};
    if (p.psi.dim() == 2) {
      for (const auto& y : ys) rs.push_back(check_velocity_bound(u, p.psi, y, 1e-6));
    }
    for (const auto& r : rs) {
      ++checks;
      worst = std::max(worst, r.worst_violation);
      t.require(r.passed, std::string(c.id) + ": " + r.check_id + " violation " +
                              num(r.worst_violation));
    }
  }
  t.note(std::to_string(checks) + " checks, worst violation " + num(worst));
  return t.done();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream is(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    files[e.path().filename().string()] = ss.str();
  }
  return files;
}

Outcome determinism() {
  Tally t;
  const std::vector<std::vector<std::string>> scenarios = {
      {"flow", "--potential", "quadratic:1,0.5;0.5,1", "--x0", "1,-0.3"},
      {"second-order", "--potential", "quadratic:1,0;0,2", "--x0", "1,1", "--v0", "-1,-2"},
      {"evanesce", "--potential", "quadratic:1,0;0,2", "--x0", "-0.5,1.5"},
      {"reconstruct", "--f", "gradsq:quadratic:1,0;0,2", "--grid", "-1:1:4,-1:1:4"},
      {"determine", "--potential", "quadratic:1", "--potential2", "quadratic:1@2"},
      {"check-convexity", "--potential", "cubic"},
  };
  std::size_t files = 0;
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const fs::path out = scratch_root() / ("determinism_" + std::to_string(s));
    fs::remove_all(out);
    std::vector<std::map<std::string, std::string>> runs;
    std::vector<int> codes;
    for (const char* workers : {"1", "3"}) {
      auto args = scenarios[s];
      args.insert(args.end(), {"--seed", "777", "--workers", workers});
      codes.push_back(cli(args, out));
      runs.push_back(snapshot(out));
    }
    files += runs[0].size();
    t.require(codes[0] == codes[1], scenarios[s][0] + ": exit codes differ");
    t.require(!runs[0].empty(), scenarios[s][0] + ": no outputs");
    t.require(runs[0] == runs[1], scenarios[s][0] + ": outputs differ between runs");
  }
  t.note(std::to_string(scenarios.size()) + " scenarios, " + std::to_string(files) +
         " files identical");
  return t.done();
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"closed-form gradient-flow orbit", closed_form_orbit},
      {"energy identity on convex flows", energy_identity},
      {"first-integral conservation", first_integral},
      {"equality of modula and phi-residual", modula_and_phi},
      {"contraction of evanescent orbits", contraction},
      {"Hardy-type inequality", hardy},
      {"counterexample classification", counterexample},
      {"convexity criterion bundles", convexity_criterion},
      {"action-based evanescent solve", action_solve},
      {"shooting and method agreement", shooting},
      {"Eikonal reconstruction", eikonal},
      {"determination via gradient norm", determination},
      {"velocity and level-integral bounds", velocity_and_level_bounds},
      {"CLI determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("%s %2zu %-38s %6.2fs  %s\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  fs::remove_all(scratch_root());
  return failed == 0 ? 0 : 1;
}
