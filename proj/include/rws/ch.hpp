#pragma once

#include <memory>
#include <optional>
#include <string>

#include "rws/pme.hpp"
#include "rws/potentials.hpp"
#include "rws/random_walk.hpp"
#include "rws/trajectory.hpp"

namespace rws {

enum class Scheme { imex_split, picard };

Scheme scheme_from_string(const std::string& s);
std::string to_string(Scheme s);

struct CHTolerances {
  double resolvent_tol = 1e-10;
  int resolvent_max_iterations = 200;
  double picard_tol = 1e-9;        // scaled by nu1(X), sup-in-time L1 metric
  int picard_max_sweeps = 100;
  double measure_match = 1e-12;    // relative nu1 == nu2 test for imex_split
};

/// Phase-field problem on a pair of random walk structures sharing a node
/// space: u' = Delta_{m1} mu with mu in -delta Delta_{m2} u + gamma^-1(u) - c u.
struct CHProblem {
  RandomWalk m1;
  RandomWalk m2;
  PotentialSpec potential;
  Field u0;
  Scheme scheme = Scheme::imex_split;
  double tau = 1e-2;
  double T = 1.0;
  int snapshot_stride = 1;
  CHTolerances tolerances;
};

struct LipschitzBound {
  double l2 = 0.0;        // nu1-weighted L2 operator norm, power iteration
  double l1 = 0.0;        // exact L1(nu1) operator norm (weighted column sums)
  double analytic = 0.0;  // 4 delta + 2 |c - delta|
};

/// Norm bounds for the frozen-coefficient operator
/// G = Delta_{m1} (delta Delta_{m2} + c I), which drives the fixed-point
/// window length of the picard scheme.
LipschitzBound lipschitz_bound_G(const CHProblem& prob);

/// Sparse matrix of G acting on fields. Built as the composition
/// (P1 - I)(delta (P2 - I) + c I), which annihilates nu1-mass exactly.
SparseColMatrix build_G(const CHProblem& prob);

/// delta Delta_{m1} Delta_{m2} as a sparse composition, the implicit linear
/// part of the convex-splitting step.
SparseColMatrix build_splitting_part(const CHProblem& prob);

struct CHValidation {
  bool ok = false;
  bool shared_measure = false;
  double measure_ratio_max = 0.0;  // max nu1/nu2
  double embedding_m = 0.0;        // 1 / max(nu1/nu2)
  double embedding_M = 0.0;        // max(nu2/nu1)
  double gap1 = 0.0;               // 0 when not defined
  double gap2 = 0.0;
  MassWindowReport mass_window;
  LipschitzBound lipschitz;
  std::vector<std::string> errors;
  std::vector<std::string> notices;
};

/// Structural checks ahead of a run: node spaces match, m1 reversible and
/// connected, the mass window holds strictly, the scheme's measure
/// requirements are met, u0 lies in the domain closure with finite energy
/// where the scheme needs it.
CHValidation validate(const CHProblem& prob);

struct StepResult {
  Field u;
  Field v;
  Field mu;
  double residual = 0.0;
  int iterations = 0;
};

/// One convex-splitting step: w = u_n - tau c Delta_{m1} u_n explicitly,
/// then the resolvent of u - tau Delta_{m1} v + tau delta Delta_{m1} Delta_{m2} u = w,
/// and mu = -delta Delta_{m2} u + v - c u_n. Decreases the energy for every
/// tau and conserves nu1-mass.
StepResult step_imex(const CHProblem& prob, const Field& u_n,
                     const ResolventSolver& solver,
                     const Field* warm_v = nullptr,
                     std::optional<double> mass_target = std::nullopt);

/// Runs the configured scheme over [0, T]. The picard scheme partitions time
/// into windows of length 0.9 / L1(G) and iterates
/// z -> mild solution with forcing -G(z) to a sup-in-time L1 fixed point on
/// each window.
Trajectory solve(const CHProblem& prob);

/// E(u) = delta H_{m2}(u) + int (j_star(u) - (c/2) u^2) dnu. Requires a
/// shared measure and reversible m2.
double energy(const CHProblem& prob, const Field& u);

/// mu = -delta Delta_{m2} u + v - c u; v must satisfy the Minty identity
/// v in gamma^-1(u) nodewise (checked).
Field chemical_potential(const CHProblem& prob, const Field& u, const Field& v);

}  // namespace rws
