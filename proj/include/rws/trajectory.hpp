#pragma once

#include <string>
#include <vector>

#include "rws/types.hpp"

namespace rws {

/// Per-step diagnostics. Norms are nu-weighted; energy is the Lyapunov
/// functional of the scheme that produced the trajectory (NaN when not
/// defined, e.g. two-measure instances). delta_norm is
/// |u_n - u_{n-1}|_2 / tau, 0 at step 0.
struct StepRecord {
  long step = 0;
  double t = 0.0;
  double mass = 0.0;
  double energy = 0.0;
  double grad_mu_sq = 0.0;  // 1/2 double integral |grad mu|^2, NaN outside phase-field runs
  double lp2 = 0.0;
  double lp4 = 0.0;
  double lpinf = 0.0;
  double umin = 0.0;
  double umax = 0.0;
  double delta_norm = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// Time-discrete trajectory: diagnostics for every step (including step 0)
/// plus state snapshots at a stride (always including the first and final
/// step). Phase-field runs also keep the selected v and the chemical
/// potential at snapshot steps.
struct Trajectory {
  double tau = 0.0;
  double t_final = 0.0;
  int snapshot_stride = 1;
  std::vector<StepRecord> steps;
  std::vector<long> snapshot_steps;
  std::vector<Field> snapshots;
  std::vector<Field> snapshots_v;
  std::vector<Field> snapshots_mu;
  std::vector<std::string> notes;

  const Field& final_state() const;
  long final_step() const { return steps.empty() ? 0 : steps.back().step; }
};

}  // namespace rws
