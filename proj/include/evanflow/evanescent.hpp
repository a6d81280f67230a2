#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evanflow/diagnostics.hpp"
#include "evanflow/fields.hpp"
#include "evanflow/integrate.hpp"

namespace evanflow {

/// Nodes w_0..w_N of a path on the uniform grid t_k = k·dt.
struct DiscretePath {
  std::vector<Vector> nodes;
  double dt = 0.0;
  double action = 0.0;
  double el_residual = 0.0;
  double terminal_penalty_weight = 0.0;

  std::size_t intervals() const { return nodes.empty() ? 0 : nodes.size() - 1; }
  double time(std::size_t k) const { return static_cast<double>(k) * dt; }
};

struct ActionValue {
  double value = 0.0;
  /// ∂/∂w_k for k = 1..N (entry k−1); w_0 is fixed.
  std::vector<Vector> gradient;
};

/// Σ_k dt·(½‖(w_{k+1}−w_k)/dt‖² + ½(V(w_k)+V(w_{k+1}))) + μ·V(w_N) and its
/// gradient. Throws NumericDomainError if V is not finite on the path.
ActionValue discrete_action(const DifferentiableField& v,
                            const std::vector<Vector>& nodes, double dt,
                            double mu);

/// max over interior nodes of ‖(w_{k+1} − 2w_k + w_{k−1})/dt² − ∇V(w_k)‖.
double el_residual(const DifferentiableField& v,
                   const std::vector<Vector>& nodes, double dt);

/// Converts a path to a second-order trajectory. Velocities come from
/// fourth-order finite differences.
Trajectory path_to_trajectory(const DiscretePath& path);

enum class SolveMethod { action, shooting };
std::string to_string(SolveMethod m);

struct ActionOptions {
  double horizon = 12.0;
  std::size_t n = 240;
  /// Terminal penalty weight. Unset: calibrated so the natural boundary
  /// condition reproduces ‖w'(T)‖ = √(2V(w(T))).
  std::optional<double> mu;
  double tol_opt = 1e-8;
  std::size_t max_iters = 50000;
  double tol_el = 1e-6;
  double eps_tail = 1e-4;
  std::size_t mu_rounds = 12;
  /// Optional starting path (N+1 nodes; the first is replaced by x0).
  std::optional<std::vector<Vector>> init_path;

  void validate() const;
};

struct ShootOptions {
  double horizon = 12.0;
  double first_horizon = 1.0;
  double rtol = 1e-12;
  double atol = 1e-15;
  double r_max = 1e6;
  std::size_t max_evals = 3000;  // per continuation stage
  double eps_tail = 1e-4;
  double output_max_step = 1e-3;

  void validate() const;
};

struct EvanescentSolveResult {
  SolveMethod method = SolveMethod::action;
  bool converged = false;
  /// Stopping rule met (‖gradient‖∞ < tol_opt, or shooting search finished).
  bool optimizer_converged = false;
  /// Solver finished cleanly regardless of tail size: optimizer, μ
  /// calibration and Euler–Lagrange residual (action) or a global orbit
  /// (shooting). `converged` additionally requires tails below eps_tail.
  bool solved = false;
  double final_action = 0.0;
  double el_residual = 0.0;
  double mu = 0.0;
  std::size_t iterations = 0;
  Vector v0;           // initial velocity of the recovered orbit
  double penalty = 0.0;  // shooting: ‖v'(T)‖² + 2V(v(T))
  double tail_speed = 0.0;
  double tail_v = 0.0;
  std::optional<DiscretePath> path;  // action method only
  Trajectory orbit;
  /// Action values at accepted iterations of the final μ stage.
  std::vector<double> action_history;
  DiagnosticsReport diagnostics;
  std::string notes;
};

nlohmann::json to_json(const EvanescentSolveResult& r);

/// Approximates the evanescent orbit from x0 by minimizing the discrete
/// action: steepest descent in an H¹ metric with a Barzilai–Borwein trial
/// step and Armijo backtracking. Throws InputError when V < −1e-12 at a probe.
EvanescentSolveResult minimize_action(const DifferentiableField& v,
                                      const Vector& x0,
                                      const ActionOptions& opts = {});

/// Searches initial velocities on the sphere ‖v0‖ = √(2V(x0)) minimizing
/// ‖v'(T)‖² + 2V(v(T)), doubling the horizon from first_horizon up to T.
EvanescentSolveResult shoot_evanescent(const DifferentiableField& v,
                                       const Vector& x0,
                                       const ShootOptions& opts = {});

struct CrossValidateOptions {
  ActionOptions action;
  ShootOptions shoot;
  IntegratorOptions flow;  // horizon is overridden by action.horizon
  double tol_xv = 5e-3;
  double phi_tol = 1e-3;
  std::size_t convexity_pairs = 200;
  std::uint64_t seed = 12345;

  CrossValidateOptions();
};

struct CrossValidation {
  DiagnosticsReport report;
  Trajectory flow;
  EvanescentSolveResult action;
  EvanescentSolveResult shooting;
  /// Hypothesis (sampled convexity of ψ) held.
  bool hypothesis_met = true;
};

/// Gradient flow of ψ, action minimization on V and shooting on V must
/// produce the same orbit, and both V-only orbits must solve u' = −∇ψ(u).
CrossValidation cross_validate(const PotentialPair& pair, const Vector& x0,
                               const CrossValidateOptions& opts = {});

}  // namespace evanflow
