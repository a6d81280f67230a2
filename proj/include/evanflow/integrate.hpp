#pragma once

#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "evanflow/fields.hpp"

namespace evanflow {

enum class SystemTag { first_order, second_order };
enum class Termination {
  horizon_reached,
  critical_point_reached,
  diverged,
  step_collapse
};
enum class Method { rk4, adaptive };

std::string to_string(SystemTag tag);
std::string to_string(Termination t);
std::string to_string(Method m);
Method parse_method(std::string_view name);

struct IntegratorMeta {
  Method method = Method::adaptive;
  double step = 0.0;  // fixed step (rk4) or rtol (adaptive)
  std::size_t n_steps = 0;
  std::size_t n_rejected = 0;
};

struct IntegratorOptions {
  Method method = Method::adaptive;
  double horizon = 10.0;
  double h = 1e-3;
  double rtol = 1e-9;
  double atol = 1e-12;
  // Upper bound on adaptive steps. Trajectory functionals use trapezoid
  // quadrature on the node grid, so the grid has to stay fine.
  double max_step = 1e-3;
  double r_max = 1e6;
  double eps_crit = 1e-10;

  void validate() const;
};

/// Autonomous phase-space vector field y' = F(y).
using Rhs = std::function<void(const Vector& y, Vector& dydt)>;
/// Called on every accepted node; a value stops integration there.
using Monitor = std::function<std::optional<Termination>(const Vector& y)>;

struct RawTrajectory {
  std::vector<double> times;
  std::vector<Vector> ys;
  Termination termination = Termination::horizon_reached;
  IntegratorMeta meta;
};

/// Classical RK4 with spacing h (the last step may be partial). A state with
/// an infinite component ends the run as `diverged`; a NaN throws
/// NumericDomainError naming the last valid node.
RawTrajectory rk4_fixed(const Rhs& rhs, const Vector& y0, double horizon,
                        double h, const Monitor& monitor = {});

/// Dormand–Prince 5(4) with error control
/// max_i |err_i| / (atol + rtol·max(|y_i|, |ŷ_i|)) ≤ 1. A step shrinking below
/// 1e-14·horizon ends the run as `step_collapse`.
RawTrajectory rk_adaptive(
    const Rhs& rhs, const Vector& y0, double horizon, double rtol, double atol,
    double max_step = std::numeric_limits<double>::infinity(),
    const Monitor& monitor = {});

/// An orbit of u' = −∇ψ(u) (first order) or v'' = ∇V(v) (second order).
/// `velocities` hold u' = −∇ψ(u) recomputed at the nodes for first-order
/// orbits and the integrated v' for second-order ones.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> velocities;
  SystemTag system = SystemTag::first_order;
  Termination termination = Termination::horizon_reached;
  IntegratorMeta meta;

  std::size_t size() const { return times.size(); }
  int dim() const {
    return states.empty() ? 0 : static_cast<int>(states.front().size());
  }
  double end_time() const { return times.back(); }
};

/// Integrates u' = −∇ψ(u), u(0) = x0. Stops with `critical_point_reached`
/// once ‖∇ψ(u)‖ < eps_crit; the orbit is then held constant up to the
/// horizon (one extra node at T).
Trajectory gradient_flow(const PotentialPair& pair, const Vector& x0,
                         const IntegratorOptions& opts);

/// Integrates (v, w)' = (w, ∇V(v)) from (x0, v0).
Trajectory second_order_flow(const DifferentiableField& v, const Vector& x0,
                             const Vector& v0, const IntegratorOptions& opts);

/// Recasts a first-order orbit as a second-order one (same nodes).
Trajectory as_second_order(Trajectory traj);

/// Cubic Hermite interpolation of the state at time t ∈ [0, T_end], using
/// the stored velocities as node slopes.
Vector state_at(const Trajectory& traj, double t);

using Integrand =
    std::function<double(double t, const Vector& x, const Vector& w)>;

/// Composite trapezoid over the node grid, [0, T_end].
double path_integral(const Trajectory& traj, const Integrand& integrand);
/// Running trapezoid integral at every node (first entry 0).
std::vector<double> cumulative_integral(const Trajectory& traj,
                                        const Integrand& integrand);

/// CSV `t,x0..x{n-1},w0..w{n-1}`, %.17g, LF endings.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

}  // namespace evanflow
