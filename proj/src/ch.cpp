#include "rws/ch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

#include "rws/operators.hpp"

namespace rws {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Field apply_delta(const RandomWalk& walk, const Field& u) { return walk.apply_kernel(u) - u; }

bool measures_match(const RandomWalk& a, const RandomWalk& b, double rel_tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double wa = a.nu().weights()[i];
    const double wb = b.nu().weights()[i];
    if (std::abs(wa - wb) > rel_tol * std::max(wa, wb)) return false;
  }
  return true;
}

bool is_pure_phase(const MonotoneGraph& graph, const Field& u0) {
  if (u0.size() == 0 || u0.maxCoeff() != u0.minCoeff()) return false;
  return u0[0] == graph.lower() || u0[0] == graph.upper();
}

SparseColMatrix minus_identity(const RandomWalk& walk) {
  const auto n = static_cast<Eigen::Index>(walk.size());
  SparseColMatrix identity(n, n);
  identity.setIdentity();
  return (SparseColMatrix(walk.kernel()) - identity).pruned();
}

}  // namespace

Scheme scheme_from_string(const std::string& s) {
  if (s == "imex_split") return Scheme::imex_split;
  if (s == "picard") return Scheme::picard;
  throw std::invalid_argument("unknown scheme '" + s + "' (expected imex_split or picard)");
}

std::string to_string(Scheme s) {
  return s == Scheme::imex_split ? "imex_split" : "picard";
}

SparseColMatrix build_G(const CHProblem& prob) {
  require(prob.m1.size() == prob.m2.size(), "walks must share a node space");
  const auto n = static_cast<Eigen::Index>(prob.m1.size());
  SparseColMatrix identity(n, n);
  identity.setIdentity();
  SparseColMatrix delta1 = minus_identity(prob.m1);
  SparseColMatrix inner =
      (prob.potential.delta * minus_identity(prob.m2) + prob.potential.c * identity).pruned();
  return SparseColMatrix((delta1 * inner).pruned());
}

SparseColMatrix build_splitting_part(const CHProblem& prob) {
  require(prob.m1.size() == prob.m2.size(), "walks must share a node space");
  SparseColMatrix delta1 = minus_identity(prob.m1);
  SparseColMatrix delta2 = minus_identity(prob.m2);
  return SparseColMatrix((prob.potential.delta * (delta1 * delta2)).pruned());
}

LipschitzBound lipschitz_bound_G(const CHProblem& prob) {
  LipschitzBound bound;
  bound.analytic = 4.0 * prob.potential.delta +
                   2.0 * std::abs(prob.potential.c - prob.potential.delta);
  SparseColMatrix g = build_G(prob);
  const auto n = g.rows();
  const auto& nu = prob.m1.nu().weights();

  for (Eigen::Index j = 0; j < n; ++j) {
    double col = 0.0;
    for (SparseColMatrix::InnerIterator it(g, j); it; ++it)
      col += nu[it.row()] * std::abs(it.value());
    bound.l1 = std::max(bound.l1, col / nu[j]);
  }

  // Similarity transform makes the weighted norm an ordinary spectral norm.
  SparseColMatrix scaled = g;
  for (Eigen::Index j = 0; j < n; ++j)
    for (SparseColMatrix::InnerIterator it(scaled, j); it; ++it)
      it.valueRef() *= std::sqrt(nu[it.row()] / nu[j]);
  // A deterministic non-constant start; the all-ones vector is in the kernel
  // of the operator and would stall the iteration at zero.
  std::uint64_t seed = 0x9b60933458e17d7dull;
  auto fresh_start = [&]() {
    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      seed += 0x9e3779b97f4a7c15ull;
      std::uint64_t z = seed;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      z ^= z >> 31;
      x[i] = static_cast<double>(z >> 11) * 0x1.0p-53 - 0.5;
    }
    x.normalize();
    return x;
  };
  Eigen::VectorXd x = fresh_start();
  double lambda = 0.0;
  int restarts = 0;
  for (int k = 0; k < 10000; ++k) {
    Eigen::VectorXd y = scaled.transpose() * (scaled * x);
    double next = y.norm();
    if (next == 0.0) {
      lambda = 0.0;
      if (++restarts > 3) break;
      x = fresh_start();
      continue;
    }
    x = y / next;
    if (std::abs(next - lambda) <= 1e-10 * std::max(next, 1.0)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  bound.l2 = std::sqrt(lambda);
  return bound;
}

CHValidation validate(const CHProblem& prob) {
  CHValidation val;
  auto fail = [&](const std::string& msg) { val.errors.push_back(msg); };

  if (prob.m1.size() != prob.m2.size()) {
    fail("walks live on different node spaces (" + std::to_string(prob.m1.size()) + " vs " +
         std::to_string(prob.m2.size()) + " nodes)");
    return val;
  }
  const auto& labels1 = prob.m1.space().labels;
  const auto& labels2 = prob.m2.space().labels;
  if (!labels1.empty() && !labels2.empty() && labels1 != labels2)
    fail("walks carry different node labels");

  if (prob.tau <= 0.0) fail("tau must be positive");
  if (prob.T <= 0.0) fail("T must be positive");
  if (prob.snapshot_stride < 1) fail("snapshot stride must be at least 1");
  if (static_cast<std::size_t>(prob.u0.size()) != prob.m1.size())
    fail("initial state size does not match the node space");
  if (prob.potential.delta <= 0.0) fail("delta must be positive");
  if (prob.potential.c < 0.0) fail("c must be nonnegative");

  const auto& f1 = prob.m1.flags();
  const auto& f2 = prob.m2.flags();
  if (!f1.invariant)
    fail("first walk: measure is not invariant (residual " +
         std::to_string(f1.invariance_residual) + ")");
  if (!f1.reversible)
    fail("first walk: kernel is not reversible (residual " +
         std::to_string(f1.reversibility_residual) + ")");
  if (!f1.connected) fail("first walk: support graph is not connected");
  if (!f2.invariant)
    fail("second walk: measure is not invariant (residual " +
         std::to_string(f2.invariance_residual) + ")");

  val.shared_measure = measures_match(prob.m1, prob.m2, prob.tolerances.measure_match);
  double ratio12 = 0.0, ratio21 = 0.0;
  for (std::size_t i = 0; i < prob.m1.size(); ++i) {
    ratio12 = std::max(ratio12, prob.m1.nu().weights()[i] / prob.m2.nu().weights()[i]);
    ratio21 = std::max(ratio21, prob.m2.nu().weights()[i] / prob.m1.nu().weights()[i]);
  }
  val.measure_ratio_max = ratio12;
  val.embedding_m = ratio12 > 0.0 ? 1.0 / ratio12 : 0.0;
  val.embedding_M = ratio21;

  if (prob.scheme == Scheme::imex_split) {
    if (!val.shared_measure)
      fail("imex_split needs both walks to carry the same measure (max ratios " +
           std::to_string(ratio12) + ", " + std::to_string(ratio21) + ")");
    if (!f2.reversible)
      fail("imex_split needs a reversible second walk for its energy law");
  } else if (!val.shared_measure) {
    val.notices.push_back(
        "walks carry different measures: energy diagnostics are not defined and "
        "are reported as NaN");
  }
  if (!f2.reversible && prob.scheme == Scheme::picard)
    val.notices.push_back("second walk is not reversible: no spectral gap, no energy");

  if (f1.reversible && f1.connected && prob.m1.size() >= 2) val.gap1 = spectral_gap(prob.m1);
  if (f2.reversible && f2.connected && prob.m2.size() >= 2) val.gap2 = spectral_gap(prob.m2);

  const auto& graph = prob.potential.graph;
  if (static_cast<std::size_t>(prob.u0.size()) == prob.m1.size()) {
    for (Eigen::Index i = 0; i < prob.u0.size(); ++i) {
      if (prob.u0[i] < graph.lower() || prob.u0[i] > graph.upper()) {
        std::ostringstream msg;
        msg << "initial value " << prob.u0[i] << " at node " << i
            << " lies outside the potential domain [" << graph.lower() << ", " << graph.upper()
            << "]";
        fail(msg.str());
        break;
      }
      if (!std::isfinite(graph.j_star(prob.u0[i]))) {
        std::ostringstream msg;
        msg << "initial value at node " << i << " has infinite potential energy";
        fail(msg.str());
        break;
      }
    }

    if (prob.tau > 0.0 && prob.T > 0.0) {
      val.mass_window = validate_mass_window(prob.m1, graph, prob.u0, Forcing{}, prob.tau,
                                             std::max(prob.T, prob.tau));
      if (!val.mass_window.ok) {
        if (is_pure_phase(graph, prob.u0))
          val.notices.push_back(
              "pure-phase constant data: the trajectory is constant by construction");
        else
          fail(val.mass_window.message);
      }
    }

    val.lipschitz = lipschitz_bound_G(prob);
  }

  val.ok = val.errors.empty();
  return val;
}

StepResult step_imex(const CHProblem& prob, const Field& u_n, const ResolventSolver& solver,
                     const Field* warm_v, std::optional<double> mass_target) {
  const double c = prob.potential.c;
  const double delta = prob.potential.delta;
  Field w = u_n - prob.tau * c * apply_delta(prob.m1, u_n);
  auto sol = solver.solve(prob.tau, w, &u_n, warm_v, mass_target);
  StepResult out;
  out.mu = -delta * apply_delta(prob.m2, sol.u) + sol.v - c * u_n;
  out.u = std::move(sol.u);
  out.v = std::move(sol.v);
  out.residual = sol.residual;
  out.iterations = sol.iterations;
  return out;
}

double energy(const CHProblem& prob, const Field& u) {
  require(measures_match(prob.m1, prob.m2, prob.tolerances.measure_match),
          "energy needs both walks to carry the same measure");
  const auto& graph = prob.potential.graph;
  const auto& nu = prob.m1.nu();
  double e = prob.potential.delta * dirichlet_energy(prob.m2, u);
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double js = graph.j_star(u[i]);
    if (!std::isfinite(js)) return std::numeric_limits<double>::infinity();
    e += nu.weights()[i] * (js - 0.5 * prob.potential.c * u[i] * u[i]);
  }
  return e;
}

Field chemical_potential(const CHProblem& prob, const Field& u, const Field& v) {
  require(u.size() == v.size() &&
              static_cast<std::size_t>(u.size()) == prob.m1.size(),
          "field size mismatch");
  const auto& graph = prob.potential.graph;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    auto section = graph.inverse_values(u[i]);
    if (section.is_empty) {
      std::ostringstream msg;
      msg << "no admissible selection at node " << i << ": value " << u[i]
          << " has no inverse under the potential graph";
      throw std::invalid_argument(msg.str());
    }
    if (!section.contains(v[i], 1e-7 * std::max(1.0, std::abs(v[i])))) {
      std::ostringstream msg;
      msg << "selection " << v[i] << " at node " << i << " is not an inverse value of "
          << u[i];
      throw std::invalid_argument(msg.str());
    }
  }
  return -prob.potential.delta * apply_delta(prob.m2, u) + v - prob.potential.c * u;
}

namespace {

struct RecordInputs {
  long step;
  double tau;
  const Field& u;
  const Field* u_prev;
  double residual;
  int iterations;
};

StepRecord make_record(const CHProblem& prob, const RecordInputs& in, bool shared_measure,
                       const Field* mu) {
  const auto& nu = prob.m1.nu();
  StepRecord r;
  r.step = in.step;
  r.t = static_cast<double>(in.step) * in.tau;
  r.mass = nu_mass(nu, in.u);
  r.energy = shared_measure && prob.m2.flags().reversible ? energy(prob, in.u) : kNaN;
  r.grad_mu_sq = mu != nullptr ? 2.0 * dirichlet_energy(prob.m1, *mu) : kNaN;
  r.lp2 = lp_norm(nu, in.u, 2.0);
  r.lp4 = lp_norm(nu, in.u, 4.0);
  r.lpinf = lp_norm(nu, in.u, std::numeric_limits<double>::infinity());
  r.umin = in.u.minCoeff();
  r.umax = in.u.maxCoeff();
  r.delta_norm = in.u_prev != nullptr ? nu_norm(nu, in.u - *in.u_prev) / in.tau : 0.0;
  r.residual = in.residual;
  r.iterations = in.iterations;
  return r;
}

Trajectory constant_trajectory(const CHProblem& prob, bool shared_measure, long steps,
                               int stride) {
  const auto& graph = prob.potential.graph;
  Trajectory traj;
  traj.tau = prob.tau;
  traj.t_final = static_cast<double>(steps) * prob.tau;
  traj.snapshot_stride = stride;
  Field v = Field::Constant(prob.u0.size(), graph.min_section(prob.u0[0]));
  Field mu = -prob.potential.delta * apply_delta(prob.m2, prob.u0) + v -
             prob.potential.c * prob.u0;
  for (long k = 0; k <= steps; ++k) {
    traj.steps.push_back(make_record(
        prob, {k, prob.tau, prob.u0, k > 0 ? &prob.u0 : nullptr, 0.0, 0}, shared_measure, &mu));
    if (k == 0 || k % stride == 0 || k == steps) {
      traj.snapshot_steps.push_back(k);
      traj.snapshots.push_back(prob.u0);
      traj.snapshots_v.push_back(v);
      traj.snapshots_mu.push_back(mu);
    }
  }
  traj.notes.push_back("pure-phase constant data: trajectory is constant by construction");
  return traj;
}

Trajectory solve_imex(const CHProblem& prob, const CHValidation& val, long steps, int stride) {
  Trajectory traj;
  traj.tau = prob.tau;
  traj.t_final = static_cast<double>(steps) * prob.tau;
  traj.snapshot_stride = stride;
  for (const auto& note : val.notices) traj.notes.push_back(note);

  SparseColMatrix L = build_splitting_part(prob);
  ResolventOptions opts;
  opts.tol = prob.tolerances.resolvent_tol;
  opts.max_iterations = prob.tolerances.resolvent_max_iterations;
  ResolventSolver solver(prob.m1, prob.potential.graph, &L, opts);

  const auto& nu = prob.m1.nu();
  const double mass0 = nu_mass(nu, prob.u0);
  Field u = prob.u0;
  Field v;

  {
    Field v0(u.size());
    const auto& graph = prob.potential.graph;
    for (Eigen::Index i = 0; i < u.size(); ++i)
      v0[i] = graph.min_section(graph.clamp_to_domain(u[i]));
    Field mu0 = -prob.potential.delta * apply_delta(prob.m2, u) + v0 - prob.potential.c * u;
    traj.steps.push_back(make_record(prob, {0, prob.tau, u, nullptr, 0.0, 0}, true, &mu0));
    traj.snapshot_steps.push_back(0);
    traj.snapshots.push_back(u);
    traj.snapshots_v.push_back(v0);
    traj.snapshots_mu.push_back(mu0);
  }

  for (long k = 0; k < steps; ++k) {
    Field u_prev = u;
    auto step = step_imex(prob, u, solver, v.size() == u.size() ? &v : nullptr, mass0);
    u = std::move(step.u);
    v = std::move(step.v);
    traj.steps.push_back(make_record(
        prob, {k + 1, prob.tau, u, &u_prev, step.residual, step.iterations}, true, &step.mu));
    if ((k + 1) % stride == 0 || k + 1 == steps) {
      traj.snapshot_steps.push_back(k + 1);
      traj.snapshots.push_back(u);
      traj.snapshots_v.push_back(v);
      traj.snapshots_mu.push_back(step.mu);
    }
  }
  return traj;
}

Trajectory solve_picard(const CHProblem& prob, const CHValidation& val, long steps,
                        int stride) {
  Trajectory traj;
  traj.tau = prob.tau;
  traj.t_final = static_cast<double>(steps) * prob.tau;
  traj.snapshot_stride = stride;
  for (const auto& note : val.notices) traj.notes.push_back(note);

  const SparseColMatrix g_op = build_G(prob);
  const double l1 = val.lipschitz.l1;
  // Window short enough that the frozen-coefficient map contracts in L1.
  long window_steps = steps;
  if (l1 > 0.0) {
    window_steps = static_cast<long>(std::floor(0.9 / (l1 * prob.tau) + 1e-12));
    window_steps = std::clamp(window_steps, 1L, steps);
  }
  const double contraction = l1 * static_cast<double>(window_steps) * prob.tau;
  if (contraction >= 1.0)
    throw std::invalid_argument(
        "tau is too large for the fixed-point window: one step already has modulus " +
        std::to_string(contraction) + "; reduce tau below " +
        std::to_string(0.9 / l1));

  const auto& nu = prob.m1.nu();
  const bool shared = val.shared_measure;
  const double fp_tol = prob.tolerances.picard_tol * nu.total();

  ResolventOptions ropts;
  ropts.tol = prob.tolerances.resolvent_tol;
  ropts.max_iterations = prob.tolerances.resolvent_max_iterations;
  MildSolveOptions mopts;
  mopts.resolvent = ropts;
  mopts.snapshot_stride = 1;

  auto emit = [&](long global_step, const Trajectory& win, std::size_t local) {
    const Field& u = win.snapshots[local];
    const Field& v = win.snapshots_v[local];
    Field mu = -prob.potential.delta * apply_delta(prob.m2, u) + v - prob.potential.c * u;
    const auto& rec = win.steps[local];
    const Field* u_prev = local > 0 ? &win.snapshots[local - 1] : nullptr;
    traj.steps.push_back(make_record(
        prob, {global_step, prob.tau, u, u_prev, rec.residual, rec.iterations}, shared, &mu));
    if (global_step % stride == 0 || global_step == steps) {
      traj.snapshot_steps.push_back(global_step);
      traj.snapshots.push_back(u);
      traj.snapshots_v.push_back(v);
      traj.snapshots_mu.push_back(mu);
    }
  };

  Field u = prob.u0;
  {
    const auto& graph = prob.potential.graph;
    Field v0(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i)
      v0[i] = graph.min_section(graph.clamp_to_domain(u[i]));
    Field mu0 = -prob.potential.delta * apply_delta(prob.m2, u) + v0 - prob.potential.c * u;
    traj.steps.push_back(make_record(prob, {0, prob.tau, u, nullptr, 0.0, 0}, shared, &mu0));
    traj.snapshot_steps.push_back(0);
    traj.snapshots.push_back(u);
    traj.snapshots_v.push_back(v0);
    traj.snapshots_mu.push_back(mu0);
  }

  long done = 0;
  while (done < steps) {
    const long k_window = std::min(window_steps, steps - done);
    std::vector<Field> z(static_cast<std::size_t>(k_window) + 1, u);
    Trajectory win;
    bool contracted = false;
    for (int sweep = 0; sweep < prob.tolerances.picard_max_sweeps; ++sweep) {
      Forcing forcing = [&](long local_step, double) -> Field {
        return Field(-(g_op * z[static_cast<std::size_t>(local_step)]));
      };
      win = pme_mild_solve(prob.m1, prob.potential.graph, u, forcing, prob.tau,
                           static_cast<double>(k_window) * prob.tau, mopts);
      double dist = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j)
        dist = std::max(dist, nu_l1_norm(nu, win.snapshots[j] - z[j]));
      for (std::size_t j = 0; j < z.size(); ++j) z[j] = win.snapshots[j];
      if (dist <= fp_tol) {
        contracted = true;
        break;
      }
    }
    if (!contracted)
      throw std::runtime_error(
          "fixed-point sweeps did not converge on the window starting at step " +
          std::to_string(done) + "; reduce tau or tighten the inner tolerance");
    for (long j = 1; j <= k_window; ++j)
      emit(done + j, win, static_cast<std::size_t>(j));
    u = win.snapshots.back();
    done += k_window;
  }
  return traj;
}

}  // namespace

Trajectory solve(const CHProblem& prob) {
  auto val = validate(prob);
  if (!val.ok) {
    std::string joined = "problem rejected:";
    for (const auto& e : val.errors) joined += "\n  - " + e;
    throw std::invalid_argument(joined);
  }
  const long steps = static_cast<long>(std::ceil(prob.T / prob.tau - 1e-9));
  const int stride = std::max(prob.snapshot_stride, 1);

  if (is_pure_phase(prob.potential.graph, prob.u0))
    return constant_trajectory(prob, val.shared_measure, steps, stride);
  if (prob.scheme == Scheme::imex_split) return solve_imex(prob, val, steps, stride);
  return solve_picard(prob, val, steps, stride);
}

}  // namespace rws
