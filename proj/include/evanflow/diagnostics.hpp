#pragma once

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "evanflow/fields.hpp"
#include "evanflow/integrate.hpp"
#include "json.hpp"

namespace evanflow {

/// Where a check saw its worst violation: a time on the orbit or a point.
using Location = std::variant<std::monostate, double, Vector>;

/// One falsifiable claim evaluated numerically.
/// Invariant: passed ⇔ worst_violation ≤ tolerance_used.
struct CheckResult {
  std::string check_id;
  bool passed = true;
  double worst_violation = 0.0;
  Location worst_location;
  double tolerance_used = 0.0;
  std::string notes;

  static CheckResult make(std::string id, double violation, double tolerance,
                          Location where = {}, std::string notes = {});
};

struct DiagnosticsReport {
  std::string subject;
  std::vector<CheckResult> checks;

  void add(CheckResult r) { checks.push_back(std::move(r)); }
  std::size_t passed_count() const;
  std::size_t failed_count() const { return checks.size() - passed_count(); }
  bool all_passed() const { return failed_count() == 0; }
  const CheckResult* find(std::string_view id) const;
};

nlohmann::json to_json(const Location& where);
nlohmann::json to_json(const CheckResult& r);
nlohmann::json to_json(const DiagnosticsReport& report);

// ---- first-order (gradient flow) checks -----------------------------------

/// ρ(t) = ψ(u(t)) nonincreasing. Default tolerance 1e-8·(1+|ρ(0)|).
CheckResult check_lyapunov_psi(const Trajectory& traj,
                               const DifferentiableField& psi,
                               std::optional<double> tol = {});

/// ∫₀ᵀ ‖u'‖² = ρ(0) − ρ(T). Default tolerance 1e-5·(1+|ρ(0)|).
CheckResult check_energy_identity(const Trajectory& traj,
                                  const DifferentiableField& psi,
                                  std::optional<double> tol = {});

/// ‖∇ψ(u(t))‖ nonincreasing (ψ convex).
CheckResult check_grad_norm_monotone(const Trajectory& traj,
                                     const DifferentiableField& psi,
                                     std::optional<double> tol = {});

/// ‖u(t) − x̂‖ nonincreasing for a critical point x̂. Throws InputError when
/// ‖∇ψ(x̂)‖ ≥ eps_crit.
CheckResult check_distance_monotone(const Trajectory& traj, const Vector& xhat,
                                    const DifferentiableField& psi,
                                    double eps_crit = 1e-10,
                                    std::optional<double> tol = {});

/// ‖u'(t)‖ ≤ ‖∇ψ(y)‖ + ‖u(0) − y‖/t for every node with t > 0.
CheckResult check_velocity_bound(const Trajectory& traj,
                                 const DifferentiableField& psi,
                                 const Vector& y, std::optional<double> tol = {});

/// ∫ (ψ(u) − ψ(x̂)) ≤ ½‖u(0) − x̂‖² for a supplied critical point x̂.
CheckResult check_level_integral_bound(const Trajectory& traj,
                                       const DifferentiableField& psi,
                                       const Vector& crit_point,
                                       double eps_crit = 1e-10,
                                       std::optional<double> tol = {});

/// Diverged orbits are consistent with Crit_ψ = ∅; otherwise the orbit must
/// end near a critical point with its last 10% of nodes clustered.
CheckResult check_limit_point(const Trajectory& traj,
                              const DifferentiableField& psi,
                              double eps_conv = 1e-4);

// ---- second-order checks --------------------------------------------------

/// I(t) = ½‖v'‖² − V(v) constant. Default tolerance 1e-6·(1+|I(0)|).
CheckResult check_first_integral(const Trajectory& traj,
                                 const DifferentiableField& v,
                                 std::optional<double> tol = {});

/// ‖v'(t)‖ = ‖∇ψ(v(t))‖ on evanescent orbits.
CheckResult check_modula_equality(const Trajectory& traj,
                                  const DifferentiableField& psi,
                                  std::optional<double> tol = {});

/// Same claim using only V: ‖v'(t)‖ = √(2V(v(t))).
CheckResult check_modula_equality_v(const Trajectory& traj,
                                    const DifferentiableField& v,
                                    std::optional<double> tol = {});

/// max ‖v' + σ∇ψ(v)‖. With σ = +1 a zero residual certifies a gradient-flow
/// orbit. Default tolerance 1e-5.
CheckResult check_phi_residual(const Trajectory& traj,
                               const DifferentiableField& psi, int sigma,
                               std::optional<double> tol = {});

/// ∫₀ᵗ ‖v(s) − v(0)‖²/s² ds ≤ 4 ∫₀ᵗ ‖v'‖², checked at every node.
CheckResult check_hardy(const Trajectory& traj, std::optional<double> tol = {});

/// q(t) = ½‖v₁ − v₂‖² nonincreasing and (discretely) convex. Both orbits
/// must share the same time grid.
CheckResult check_contraction(const Trajectory& a, const Trajectory& b,
                              std::optional<double> tol = {});

// ---- field checks ---------------------------------------------------------

/// Sampled monotonicity of the gradient: ⟨∇f(x) − ∇f(y), x − y⟩ ≥ 0.
/// Per-pair tolerance 1e-10·(1+‖x−y‖²).
CheckResult check_monotone_gradient(
    const DifferentiableField& field,
    const std::vector<std::pair<Vector, Vector>>& pairs);

// ---- evanescence ----------------------------------------------------------

enum class EvanescenceClass { strong, weak_only_proxy, none };
std::string to_string(EvanescenceClass c);

struct EvanescenceMeasures {
  double ev_integral = 0.0;       // ∫₀ᵀ (‖v'‖² + V(v))
  double ev_integral_half = 0.0;  // same over [0, T/2]
  double tail_vprime = 0.0;       // min ‖v'‖ over the last 10% of nodes
  double tail_v = 0.0;            // min V(v) over the last 10% of nodes
  EvanescenceClass classification = EvanescenceClass::none;
};

/// Finite-horizon proxies for weak/strong evanescence. "strong" needs a
/// horizon-stable integral (relative change < 1% from T/2 to T) and tails
/// below eps_tail; "weak_only_proxy" has small tails with a growing
/// integral. Orbits that diverged or collapsed are never evanescent.
EvanescenceMeasures evanescence_measures(const Trajectory& traj,
                                         const DifferentiableField& v,
                                         double eps_tail = 1e-4);
nlohmann::json to_json(const EvanescenceMeasures& m);

/// Largest sampled spectral norm of ∇²ψ along the orbit (hessvec required).
std::optional<double> sampled_hessian_norm(const Trajectory& traj,
                                           const DifferentiableField& psi,
                                           std::size_t max_samples = 200);

}  // namespace evanflow
