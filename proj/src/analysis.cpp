#include "rws/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rws/operators.hpp"

namespace rws {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

EquilibriumReport check_equilibrium(const CHProblem& prob, const Field& u, double tol) {
  require(static_cast<std::size_t>(u.size()) == prob.m1.size(), "field size mismatch");
  const auto& graph = prob.potential.graph;
  const auto n = u.size();

  // States produced by the solver sit within its tolerance of the plateau
  // endpoints; snap before asking for inverse values.
  Field us = u;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(graph.lower()) && std::abs(us[i] - graph.lower()) <= tol)
      us[i] = graph.lower();
    if (std::isfinite(graph.upper()) && std::abs(us[i] - graph.upper()) <= tol)
      us[i] = graph.upper();
  }

  EquilibriumReport rep;
  rep.binding_nodes = NodeSet(static_cast<std::size_t>(n));

  Field a = prob.potential.delta * (prob.m2.apply_kernel(us) - us) + prob.potential.c * us;
  double scale = std::max(1.0, a.cwiseAbs().maxCoeff());

  // A constant selection exists iff the per-node feasible intervals for the
  // constant intersect.
  double lo = -kInf, hi = kInf;
  std::vector<double> node_lo(static_cast<std::size_t>(n)), node_hi(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Interval section = graph.inverse_values(us[i]);
    if (section.is_empty) {
      rep.domain_violation = true;
      rep.residual = kInf;
      return rep;
    }
    node_lo[static_cast<std::size_t>(i)] = section.lo - a[i];
    node_hi[static_cast<std::size_t>(i)] = section.hi - a[i];
    lo = std::max(lo, node_lo[static_cast<std::size_t>(i)]);
    hi = std::min(hi, node_hi[static_cast<std::size_t>(i)]);
  }

  rep.residual = std::max(0.0, lo - hi);
  rep.is_equilibrium = rep.residual <= tol * scale;
  if (rep.is_equilibrium) rep.mu_const = 0.5 * (lo + hi);

  const double slack = tol * scale + 1e-15;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(i);
    if (node_lo[j] >= lo - slack || node_hi[j] <= hi + slack) rep.binding_nodes.member[j] = true;
  }
  return rep;
}

double pure_phase_criterion(const CHProblem& prob, const NodeSet& D) {
  require(D.size() == prob.m1.size(), "node set size mismatch");
  if (D.empty_set() || D.full_set()) return kInf;

  const auto n = static_cast<Eigen::Index>(D.size());
  Field chi(n);
  for (Eigen::Index i = 0; i < n; ++i) chi[i] = D[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  Field m = prob.m2.apply_kernel(chi);

  double sup_out = -kInf, inf_in = kInf;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (D[static_cast<std::size_t>(i)])
      inf_in = std::min(inf_in, m[i]);
    else
      sup_out = std::max(sup_out, m[i]);
  }
  return prob.potential.c / prob.potential.delta - (1.0 + sup_out - inf_in);
}

AsymptoticsReport detect_steady_state(const Trajectory& traj, const CHProblem& prob,
                                      int window, double tol) {
  require(!traj.steps.empty() && !traj.snapshots.empty(), "trajectory is empty");
  AsymptoticsReport rep;

  const auto& f2 = prob.m2.flags();
  if (f2.reversible && f2.connected && prob.m2.size() >= 2) {
    rep.gap2 = spectral_gap(prob.m2);
    rep.gap2_defined = true;
    rep.predicts_mean_convergence = prob.potential.c < prob.potential.delta * rep.gap2;
  }

  const Field& u0 = traj.snapshots.front();
  if (tol <= 0.0) tol = 1e-8 * (1.0 + nu_norm(prob.m1.nu(), u0));

  const long last = static_cast<long>(traj.steps.size()) - 1;
  const long w = std::min<long>(std::max(window, 1), last);
  if (w >= 1) {
    double rate = 0.0;
    for (long k = last - w + 1; k <= last; ++k)
      rate = std::max(rate, traj.steps[static_cast<std::size_t>(k)].delta_norm);
    rep.steady_rate = rate;
    rep.steady = rate <= tol;
    if (rep.steady) {
      long since = last;
      while (since >= 1 && traj.steps[static_cast<std::size_t>(since)].delta_norm <= tol)
        --since;
      rep.steady_since_step = since + 1;
    }
  }

  const Field& uf = traj.snapshots.back();
  rep.equilibrium = check_equilibrium(prob, uf, std::max(1e-8, tol));

  const auto& graph = prob.potential.graph;
  if (std::isfinite(graph.lower()) && std::isfinite(graph.upper())) {
    const double mid = 0.5 * (graph.lower() + graph.upper());
    NodeSet D(prob.m1.size());
    for (Eigen::Index i = 0; i < uf.size(); ++i)
      D.member[static_cast<std::size_t>(i)] = uf[i] >= mid;
    rep.pure_phase_margin = pure_phase_criterion(prob, D);
  } else {
    rep.pure_phase_margin = kNaN;
  }
  return rep;
}

AuditReport audit(const Trajectory& traj, const CHProblem& prob) {
  require(!traj.steps.empty(), "trajectory is empty");
  AuditReport rep;
  const auto& nu = prob.m1.nu();
  const auto& graph = prob.potential.graph;
  const double tau = traj.tau;

  {
    AuditCheck c;
    c.name = "mass-conservation";
    const double mass0 = traj.steps.front().mass;
    for (const auto& s : traj.steps) {
      const double drift = std::abs(s.mass - mass0);
      if (drift > c.worst) {
        c.worst = drift;
        c.worst_step = s.step;
      }
    }
    const double bound = 1e-10 * nu.total() * std::max(1.0, std::abs(mass0) / nu.total());
    c.pass = c.worst <= bound;
    std::ostringstream d;
    d << "max |mass(t) - mass(0)| = " << c.worst << " against " << bound;
    c.detail = d.str();
    rep.checks.push_back(std::move(c));
  }

  {
    AuditCheck c;
    c.name = "energy-monotone";
    c.applicable = prob.scheme == Scheme::imex_split;
    for (const auto& s : traj.steps)
      if (!std::isfinite(s.energy)) c.applicable = false;
    if (c.applicable) {
      const double scale = std::max(1.0, std::abs(traj.steps.front().energy));
      for (std::size_t k = 1; k < traj.steps.size(); ++k) {
        const double rise = traj.steps[k].energy - traj.steps[k - 1].energy;
        if (rise > c.worst) {
          c.worst = rise;
          c.worst_step = traj.steps[k].step;
        }
      }
      c.pass = c.worst <= 1e-9 * scale;
      std::ostringstream d;
      d << "max energy rise per step = " << c.worst << " against " << 1e-9 * scale;
      c.detail = d.str();
    } else {
      c.pass = true;
      c.detail = "energy law applies to the splitting scheme with finite energies only";
    }
    rep.checks.push_back(std::move(c));
  }

  {
    AuditCheck c;
    c.name = "lp-envelope";
    const double growth = 4.0 * std::max(prob.potential.c, 1.0);
    const double slack = 1.0 + 10.0 * tau;
    const double p2_0 = traj.steps.front().lp2;
    const double p4_0 = traj.steps.front().lp4;
    const double pi_0 = traj.steps.front().lpinf;
    double worst_ratio = 0.0;
    for (const auto& s : traj.steps) {
      const double env = std::exp(growth * s.t) * slack;
      const double floor_abs = 1e-12;
      const double r2 = s.lp2 / std::max(p2_0 * env, floor_abs);
      const double r4 = s.lp4 / std::max(p4_0 * env, floor_abs);
      const double ri = s.lpinf / std::max(pi_0 * env, floor_abs);
      const double r = std::max({r2, r4, ri});
      if (r > worst_ratio) {
        worst_ratio = r;
        c.worst_step = s.step;
      }
    }
    c.worst = worst_ratio;
    c.pass = worst_ratio <= 1.0;
    std::ostringstream d;
    d << "max norm / envelope ratio = " << worst_ratio << " (growth constant " << growth
      << ", slack " << slack << ")";
    c.detail = d.str();
    rep.checks.push_back(std::move(c));
  }

  {
    AuditCheck c;
    c.name = "domain-bounds";
    c.applicable = std::isfinite(graph.lower()) || std::isfinite(graph.upper());
    if (c.applicable) {
      const double span = std::isfinite(graph.upper() - graph.lower())
                              ? graph.upper() - graph.lower()
                              : 1.0;
      for (const auto& s : traj.steps) {
        double excess = 0.0;
        if (std::isfinite(graph.lower())) excess = std::max(excess, graph.lower() - s.umin);
        if (std::isfinite(graph.upper())) excess = std::max(excess, s.umax - graph.upper());
        if (excess > c.worst) {
          c.worst = excess;
          c.worst_step = s.step;
        }
      }
      c.pass = c.worst <= 1e-9 * span;
      std::ostringstream d;
      d << "max excursion outside the domain = " << c.worst;
      c.detail = d.str();
    } else {
      c.pass = true;
      c.detail = "potential domain is the whole line";
    }
    rep.checks.push_back(std::move(c));
  }

  {
    AuditCheck c;
    c.name = "uniform-l2";
    c.applicable = std::isfinite(graph.lower()) && std::isfinite(graph.upper());
    if (c.applicable) {
      const double radius =
          std::max(std::abs(graph.lower()), std::abs(graph.upper())) * std::sqrt(nu.total());
      for (const auto& s : traj.steps) {
        if (s.lp2 > c.worst) {
          c.worst = s.lp2;
          c.worst_step = s.step;
        }
      }
      c.pass = c.worst <= radius * (1.0 + 1e-9);
      std::ostringstream d;
      d << "sup |u|_2 = " << c.worst << " against " << radius;
      c.detail = d.str();
    } else {
      c.pass = true;
      c.detail = "unbounded domain: covered by the growth envelope only";
    }
    rep.checks.push_back(std::move(c));
  }

  {
    AuditCheck c;
    c.name = "snapshot-agreement";
    require(traj.snapshot_steps.size() == traj.snapshots.size(),
            "snapshot bookkeeping is inconsistent");
    for (std::size_t j = 0; j < traj.snapshots.size(); ++j) {
      const long step = traj.snapshot_steps[j];
      const auto it = std::find_if(traj.steps.begin(), traj.steps.end(),
                                   [&](const StepRecord& s) { return s.step == step; });
      if (it == traj.steps.end()) {
        c.worst = kInf;
        c.worst_step = step;
        break;
      }
      const double mass = nu_mass(nu, traj.snapshots[j]);
      const double lp2 = lp_norm(nu, traj.snapshots[j], 2.0);
      const double diff = std::max(std::abs(mass - it->mass) / std::max(1.0, std::abs(it->mass)),
                                   std::abs(lp2 - it->lp2) / std::max(1.0, it->lp2));
      if (diff > c.worst) {
        c.worst = diff;
        c.worst_step = step;
      }
    }
    c.pass = c.worst <= 1e-9;
    std::ostringstream d;
    d << "max relative disagreement between snapshots and step records = " << c.worst;
    c.detail = d.str();
    rep.checks.push_back(std::move(c));
  }

  rep.all_pass = true;
  for (const auto& c : rep.checks) rep.all_pass = rep.all_pass && c.pass;
  return rep;
}

}  // namespace rws
