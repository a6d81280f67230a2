#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evanflow/diagnostics.hpp"
#include "evanflow/evanescent.hpp"
#include "evanflow/fields.hpp"
#include "json.hpp"

namespace evanflow {

// ---- grids ----------------------------------------------------------------

struct GridAxis {
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 1;
};

/// Tensor grid; points are enumerated with the last axis varying fastest.
struct GridSpec {
  std::vector<GridAxis> axes;

  int dim() const { return static_cast<int>(axes.size()); }
  std::size_t size() const;
  std::vector<Vector> points() const;
  void validate() const;
};

/// "min:max:count[,min:max:count...]", one triple per axis.
GridSpec parse_grid_spec(std::string_view text);
nlohmann::json to_json(const GridSpec& g);

// ---- reconstruction -------------------------------------------------------

enum class ReconMethod { action, shooting };
std::string to_string(ReconMethod m);
ReconMethod parse_recon_method(std::string_view name);

struct ReconstructOptions {
  ReconMethod method = ReconMethod::action;
  /// Retry a failed action solve by shooting.
  bool fallback = true;
  ActionOptions action;
  ShootOptions shoot;
  double tail_window = 0.2;  // fraction of the horizon used for the decay fit
  double min_decay = 0.1;    // fitted log-slope must be ≤ −min_decay
  double tol_recon = 1e-8;   // allowed negativity of ψ̂ after normalization
  /// Subtract the grid minimum from the values (the grid should then contain
  /// a minimizer). Off: the integrals themselves are reported.
  bool renormalize = true;
  unsigned workers = 0;  // 0: hardware concurrency

  void validate() const;
};

nlohmann::json to_json(const ReconstructOptions& o);

struct PointReconstruction {
  Vector x;
  double psi_hat = 0.0;
  double ev_integral = 0.0;    // ∫₀ᵀ f(v(t)) dt
  double tail_estimate = 0.0;  // extrapolated ∫_T^∞ f(v(t)) dt
  double decay_rate = 0.0;     // fitted exponential rate of f along the tail
  double horizon = 0.0;
  bool converged = false;
  SolveMethod method = SolveMethod::action;
  std::string notes;

  /// Unnormalized value ψ(x) − inf ψ.
  double raw() const { return ev_integral + tail_estimate; }
};

/// psi_hat = ev_integral + tail_estimate − offset at every point.
struct ReconstructionResult {
  std::vector<PointReconstruction> per_point;
  double offset = 0.0;
  nlohmann::json config;

  std::size_t failed_count() const;
};

nlohmann::json to_json(const PointReconstruction& p);
nlohmann::json to_json(const ReconstructionResult& r);
/// CSV `x0..x{n-1},psi_hat,ev_integral,tail_estimate,converged`.
void write_reconstruction_csv(std::ostream& os, const ReconstructionResult& r);

/// ψ(x0) − inf ψ from f = ‖∇ψ‖² alone: the evanescent orbit of V = f/2 from
/// x0 carries ‖v'‖² = f(v), so the value is ∫₀^∞ f(v(t)) dt. Solver failures
/// are reported through `converged`, not thrown.
PointReconstruction reconstruct_value(const DifferentiableField& f,
                                      const Vector& x0,
                                      const ReconstructOptions& opts = {});

/// Independent reconstructions on a worker pool. Throws InputError when f is
/// negative at a query point.
ReconstructionResult reconstruct_grid(const DifferentiableField& f,
                                      const std::vector<Vector>& points,
                                      const ReconstructOptions& opts = {});

/// Central-difference ‖∇ψ̂‖² against f on interior grid points. Needs at
/// least 3 points per axis. Default tolerance 5e-2.
CheckResult eikonal_residual(const ReconstructionResult& recon,
                             const DifferentiableField& f, const GridSpec& grid,
                             std::optional<double> tol = {});

// ---- sampled hypotheses ---------------------------------------------------

struct BoundedBelowOptions {
  double floor = -1e6;
  std::size_t orbits = 5;
  double horizon = 20.0;
  /// An orbit settles when its ψ decrease over [T/2, T] is at most this
  /// fraction of the decrease over [0, T/2].
  double settle_ratio = 1e-2;
};

/// Evidence that ψ is bounded below: sampled values above the floor and
/// gradient-flow orbits from the first probes that settle. Passing is
/// evidence, not proof.
CheckResult check_bounded_below(const DifferentiableField& psi,
                                const std::vector<Vector>& probes,
                                const BoundedBelowOptions& opts = {});

/// Seeded random pairs drawn from the given points.
std::vector<std::pair<Vector, Vector>> sample_pairs(
    const std::vector<Vector>& points, std::size_t count, std::uint64_t seed);

/// The ±e_i axis points scaled by `radius`, then seeded uniform points in
/// [−radius, radius]^n up to `count` points in total.
std::vector<Vector> probe_points(int dim, std::size_t count, double radius,
                                 std::uint64_t seed);

// ---- determination --------------------------------------------------------

enum class DeterminationStatus { pass, conclusion_failed, hypothesis_not_met };
std::string to_string(DeterminationStatus s);

struct DeterminationOptions {
  double tol_norms = 1e-8;
  double tol_conclusion = 1e-6;
  double eps_inf = 1e-6;
  std::size_t convexity_pairs = 200;
  std::uint64_t seed = 12345;
  /// Also accept the route "both bounded below and V convex".
  bool v_convex_variant = false;
  BoundedBelowOptions bounded;
};

struct DeterminationResult {
  DiagnosticsReport hypotheses;
  DiagnosticsReport conclusion;
  /// Estimated offset with ψ₂ = ψ₁ + c (mean of ψ₂ − ψ₁ over the samples).
  double c = 0.0;
  bool hypotheses_met = false;
  DeterminationStatus status = DeterminationStatus::hypothesis_not_met;
};

nlohmann::json to_json(const DeterminationResult& r);

/// Two convex ψ with equal gradient norms and inf ‖∇ψ₁‖ = 0 differ by a
/// constant. Hypotheses are sampled; a conclusion failure only counts when
/// every hypothesis held.
DeterminationResult determination_check(const DifferentiableField& psi1,
                                        const DifferentiableField& psi2,
                                        const std::vector<Vector>& samples,
                                        const DeterminationOptions& opts = {});

// ---- convexity criterion --------------------------------------------------

struct ConvexityCriterionResult {
  DiagnosticsReport report;  // criterion_v_convex, _bounded_below, _psi_convex
  /// (i) and (ii) held but (iii) failed.
  bool theorem_violation = false;
};

nlohmann::json to_json(const ConvexityCriterionResult& r);

/// V convex and ψ bounded below imply ψ convex.
ConvexityCriterionResult convexity_criterion_check(
    const PotentialPair& pp,
    const std::vector<std::pair<Vector, Vector>>& pairs,
    const std::vector<Vector>& probes, const BoundedBelowOptions& opts = {});

}  // namespace evanflow
