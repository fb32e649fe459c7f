#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "rws/potentials.hpp"
#include "rws/random_walk.hpp"
#include "rws/trajectory.hpp"
#include "rws/types.hpp"

namespace rws {

struct ResolventOptions {
  double tol = 1e-10;      // nu-weighted L2 residual, relative to max(1, |g|_2)
  double sigma = 1.0;      // Minty parameter of the nodewise reparametrization
  int max_iterations = 200;
};

struct ResolventSolution {
  Field u;
  Field v;
  double residual = 0.0;
  int iterations = 0;
};

/// Solves u - lambda Delta_m v + lambda L u = g with v in gamma^-1(u)
/// nodewise. L is an optional extra implicit linear part; it must annihilate
/// constants and be symmetric positive semidefinite in the negative-order
/// inner product of the walk (both probed at solve time). The nu-mass of g
/// must lie strictly inside (nu(X) gamma^-, nu(X) gamma^+).
///
/// The nonlinear system is solved by a semismooth Newton method on (u, v)
/// through the Minty equation u = resolvent(sigma, u + sigma v), with a
/// damped alternating fallback and warm starting. When gamma^-1 has flat
/// multivalued regions the returned v is one admissible selection.
class ResolventSolver {
 public:
  ResolventSolver(RandomWalk walk, MonotoneGraph graph,
                  const SparseColMatrix* implicit_part = nullptr,
                  ResolventOptions options = {});
  ~ResolventSolver();
  ResolventSolver(ResolventSolver&&) noexcept;
  ResolventSolver& operator=(ResolventSolver&&) noexcept;

  const RandomWalk& walk() const;
  const MonotoneGraph& graph() const;

  /// mass_target, when given, is enforced exactly (up to one floating sum)
  /// by a final nu-weighted correction over strictly interior nodes.
  ResolventSolution solve(double lambda, const Field& g,
                          const Field* warm_u = nullptr,
                          const Field* warm_v = nullptr,
                          std::optional<double> mass_target = std::nullopt) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot convenience wrapper around ResolventSolver.
ResolventSolution solve_resolvent(const RandomWalk& walk, const MonotoneGraph& graph,
                                  double lambda, const Field& g,
                                  const SparseColMatrix* implicit_part = nullptr,
                                  const ResolventOptions& options = {},
                                  const Field* warm_u = nullptr,
                                  const Field* warm_v = nullptr,
                                  std::optional<double> mass_target = std::nullopt);

/// Forcing evaluated on the time grid; step is the index of the interval
/// [t, t + tau) the value applies to.
using Forcing = std::function<Field(long step, double t)>;

struct MassWindowReport {
  bool ok = false;
  double lower = 0.0;   // nu(X) gamma^-
  double upper = 0.0;   // nu(X) gamma^+
  double initial_mass = 0.0;
  double first_violation_time = -1.0;
  double mass_at_violation = 0.0;
  std::string message;
};

/// Checks nu(X) gamma^- < int u0 dnu + int_0^t int f dnu ds < nu(X) gamma^+
/// for all grid times t in [0, T], cumulative forcing integrated by the
/// left-endpoint rule matching the time stepping.
MassWindowReport validate_mass_window(const RandomWalk& walk, const MonotoneGraph& graph,
                                      const Field& u0, const Forcing& forcing,
                                      double tau, double T);

struct MildSolveOptions {
  ResolventOptions resolvent;
  int snapshot_stride = 1;
};

/// Implicit Euler for u' = Delta_m v + f, v in gamma^-1(u): ceil(T/tau)
/// steps of u_{n+1} = resolvent of g = u_n + tau f(t_n), warm-started.
/// Boundary-mass constant data with zero forcing short-circuits to the
/// constant trajectory; otherwise the mass window is enforced up front.
Trajectory pme_mild_solve(const RandomWalk& walk, const MonotoneGraph& graph,
                          const Field& u0, const Forcing& forcing,
                          double tau, double T, const MildSolveOptions& options = {});

}  // namespace rws
