#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rws/ch.hpp"
#include "rws/trajectory.hpp"

namespace rws {

struct EquilibriumReport {
  bool is_equilibrium = false;
  bool domain_violation = false;      // some u_x has no inverse values at all
  std::optional<double> mu_const;     // a feasible constant when one exists
  double residual = 0.0;              // gap between the interval intersection bounds
  NodeSet binding_nodes;              // nodes whose interval endpoint is active
};

/// A state u is stationary iff some constant mu satisfies
/// mu + delta Delta_{m2} u + c u in gamma^-1(u) at every node. The feasible
/// constants form an interval per node; the report intersects them.
EquilibriumReport check_equilibrium(const CHProblem& prob, const Field& u, double tol = 1e-10);

/// Margin of the pure-phase stationarity test for the two-phase state
/// chi_D - chi_{X \ D}:
///   c/delta - [1 + sup_{x not in D} m2_x(D) - inf_{x in D} m2_x(D)].
/// Nonnegative margin certifies the state is stationary. D empty or full is
/// degenerate: the constant pure phase is always stationary and the margin
/// returned is +infinity.
double pure_phase_criterion(const CHProblem& prob, const NodeSet& D);

struct AsymptoticsReport {
  double gap2 = 0.0;                      // 0 when m2 has no spectral gap defined
  bool gap2_defined = false;
  bool predicts_mean_convergence = false;  // c < delta * gap2
  bool steady = false;
  long steady_since_step = -1;
  double steady_rate = 0.0;               // max delta_norm over the trailing window
  double pure_phase_margin = 0.0;          // for D = {u_final >= phase midpoint}; NaN if n/a
  EquilibriumReport equilibrium;           // of the final snapshot
};

/// Trailing-window steadiness test (max |u_{n+1} - u_n| / tau over the last
/// `window` steps below tol) plus an equilibrium check of the final state.
/// tol <= 0 selects the default 1e-8 * (1 + |u0|_2).
AsymptoticsReport detect_steady_state(const Trajectory& traj, const CHProblem& prob,
                                      int window = 50, double tol = 0.0);

struct AuditCheck {
  std::string name;
  bool pass = false;
  bool applicable = true;
  double worst = 0.0;
  long worst_step = -1;
  std::string detail;
};

struct AuditReport {
  bool all_pass = false;
  std::vector<AuditCheck> checks;
};

/// Conservation and dissipation audit of a trajectory against its problem:
/// mass drift, energy monotonicity (imex), L^p envelopes with growth
/// constant 4 max(c, 1), domain bounds, and snapshot/diagnostic agreement.
AuditReport audit(const Trajectory& traj, const CHProblem& prob);

}  // namespace rws
