// Acceptance gate: seven independent checks, one line each, exit code equal
// to the number of failures. Tolerances are pinned here, next to each check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "rws/analysis.hpp"
#include "rws/ch.hpp"
#include "rws/operators.hpp"
#include "rws/pme.hpp"
#include "test_support.hpp"

using namespace rws;
using rws::testing::Rng;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

RandomWalk two_point_walk() { return from_weighted_graph({{0, 1, 1.0}}, false, 2); }

RandomWalk complete_walk(std::size_t n) {
  std::vector<WeightedEdge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) edges.push_back({i, j, 1.0});
  return from_weighted_graph(edges, false, n);
}

RandomWalk path_walk(std::size_t n) {
  std::vector<WeightedEdge> edges;
  for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, 1.0});
  return from_weighted_graph(edges, false, n);
}

RandomWalk cycle_walk(std::size_t n) {
  std::vector<WeightedEdge> edges;
  for (std::size_t i = 0; i < n; ++i) edges.push_back({i, (i + 1) % n, 1.0});
  return from_weighted_graph(edges, false, n);
}

RandomWalk barbell_walk() {
  // two triangles joined by a single bridge edge 2 - 3
  std::vector<WeightedEdge> edges{{0, 1, 1}, {0, 2, 1}, {1, 2, 1},
                                  {3, 4, 1}, {3, 5, 1}, {4, 5, 1},
                                  {2, 3, 1}};
  return from_weighted_graph(edges, false, 6);
}

// 1. On random reversible walks summation by parts
//    <g, Delta f>_nu = -1/2 sum_{x,y} nu_x P(x,y) (f(y)-f(x))(g(y)-g(x))
//    holds, and the two-walk composition operator equals its expansion
//    P1 P2 - P1 - P2 + I entrywise.
Outcome run_operator_identities() {
  constexpr double kIbpTol = 1e-11;   // relative
  constexpr double kCompTol = 1e-14;  // absolute, entrywise
  constexpr double kBudgetSeconds = 5.0;
  const double t0 = now_seconds();

  Rng rng(101);
  double worst_ibp = 0.0, worst_comp = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(49);
    auto w1 = testing::random_reversible_walk(n, rng);
    auto w2 = testing::random_reversible_walk(n, rng);
    Field f = testing::random_field(n, rng);
    Field g = testing::random_field(n, rng);

    const double lhs = nu_inner(w1.nu(), g, laplacian(w1, f));
    double rhs = 0.0;
    const auto& kernel = w1.kernel();
    for (Eigen::Index x = 0; x < kernel.outerSize(); ++x)
      for (SparseRowMatrix::InnerIterator it(kernel, x); it; ++it)
        rhs += w1.nu().weights()[x] * it.value() * (f[it.col()] - f[x]) * (g[it.col()] - g[x]);
    rhs *= -0.5;
    worst_ibp = std::max(worst_ibp, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));

    CHProblem prob{w1, w2, PotentialSpec{power_law(1.0), 0.0, 1.0},
                   Field::Zero(static_cast<Eigen::Index>(n))};
    Eigen::MatrixXd composed = Eigen::MatrixXd(build_G(prob));
    Eigen::MatrixXd p1 = Eigen::MatrixXd(SparseColMatrix(w1.kernel()));
    Eigen::MatrixXd p2 = Eigen::MatrixXd(SparseColMatrix(w2.kernel()));
    Eigen::MatrixXd direct =
        p1 * p2 - p1 - p2 + Eigen::MatrixXd::Identity(p1.rows(), p1.cols());
    worst_comp = std::max(worst_comp, (composed - direct).cwiseAbs().maxCoeff());
  }

  const double elapsed = now_seconds() - t0;
  Outcome o;
  o.pass = worst_ibp <= kIbpTol && worst_comp <= kCompTol && elapsed < kBudgetSeconds;
  o.detail = "worst integration-by-parts " + num(worst_ibp) + " (tol " + num(kIbpTol) +
             "), worst composition " + num(worst_comp) + " (tol " + num(kCompTol) + "), " +
             num(elapsed) + " s (budget " + num(kBudgetSeconds) + ")";
  return o;
}

// 2. Spectral gap oracles on the two- and three-point complete walks, the
//    universal bound gap <= 2, and the equivalence of the negative-order
//    norm with the flat one on mean-zero fields:
//    |v|_2 <= sqrt(2) |v|_neg and |v|_neg <= |v|_2 / sqrt(gap).
Outcome run_spectral_facts() {
  constexpr double kGapTolK2 = 1e-12;
  constexpr double kGapTolK3 = 1e-10;
  constexpr double kSlack = 1e-9;  // relative slack on the sandwich

  Outcome o;
  const double err_k2 = std::abs(spectral_gap(two_point_walk()) - 2.0);
  const double err_k3 = std::abs(spectral_gap(complete_walk(3)) - 1.5);

  Rng rng(202);
  double worst_gap_excess = 0.0;
  double worst_lower = 0.0, worst_upper = 0.0;  // sandwich ratios, must stay <= 1
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 2 + rng.index(39);
    auto rw = testing::random_reversible_walk(n, rng);
    const double gap = spectral_gap(rw);
    worst_gap_excess = std::max(worst_gap_excess, gap - 2.0);
    if (gap <= 0.0) {
      o.detail = "nonpositive gap on instance " + std::to_string(inst);
      return o;
    }
    HMinusOneContext ctx(rw);
    for (int rep = 0; rep < 100; ++rep) {
      Field v = testing::random_mean_zero_field(rw.nu(), rng);
      const double l2 = nu_norm(rw.nu(), v);
      const double neg = ctx.norm(v);
      if (l2 == 0.0) continue;
      worst_lower = std::max(worst_lower, l2 / (std::sqrt(2.0) * neg));
      worst_upper = std::max(worst_upper, neg * std::sqrt(gap) / l2);
    }
  }

  o.pass = err_k2 <= kGapTolK2 && err_k3 <= kGapTolK3 && worst_gap_excess <= 1e-12 &&
           worst_lower <= 1.0 + kSlack && worst_upper <= 1.0 + kSlack;
  o.detail = "two-point gap error " + num(err_k2) + " (tol " + num(kGapTolK2) +
             "), three-point gap error " + num(err_k3) + " (tol " + num(kGapTolK3) +
             "), max gap excess over 2 " + num(worst_gap_excess) + ", sandwich ratios " +
             num(worst_lower) + " / " + num(worst_upper) + " (cap 1+" + num(kSlack) + ")";
  return o;
}

// 3. Diffusion engine: the two-point linear case against its closed form,
//    positive-part L1 contraction for ordered data pairs, and domain bounds.
Outcome run_pme_engine() {
  constexpr double kHeatTol = 2e-3;
  constexpr double kContractionSlack = 1e-10;
  constexpr double kDomainSlack = 1e-12;
  constexpr double kBudgetSeconds = 30.0;
  const double t0 = now_seconds();

  auto k2 = two_point_walk();
  Field u0(2);
  u0 << 1.0, 0.0;
  auto traj = pme_mild_solve(k2, power_law(1.0), u0, nullptr, 1e-3, 1.0);
  const Field& uT = traj.final_state();
  const double exact0 = 0.5 + 0.5 * std::exp(-2.0);
  const double heat_err =
      std::max(std::abs(uT[0] - exact0), std::abs(uT[1] - (1.0 - exact0)));

  Rng rng(303);
  double worst_contraction = 0.0;  // max growth of |(u-v)^+|_1 between steps
  double worst_domain = 0.0;
  std::vector<MonotoneGraph> graphs;
  graphs.push_back(power_law(1.0));
  graphs.push_back(power_law(2.0));
  graphs.push_back(power_law(3.0));
  graphs.push_back(stefan());
  graphs.push_back(obstacle());
  for (int pair = 0; pair < 20; ++pair) {
    const std::size_t n = 3 + rng.index(10);
    auto rw = testing::random_reversible_walk(n, rng);
    const auto& graph = graphs[static_cast<std::size_t>(pair) % graphs.size()];
    const double lo = std::isfinite(graph.lower()) ? graph.lower() + 0.05 : -1.5;
    const double hi = std::isfinite(graph.upper()) ? graph.upper() - 0.05 : 1.5;
    Field a = testing::random_field(n, rng, lo, hi);
    Field b = testing::random_field(n, rng, lo, hi);
    Field top = a.cwiseMax(b);
    Field bot = a.cwiseMin(b);

    MildSolveOptions opts;
    opts.snapshot_stride = 1;
    auto ta = pme_mild_solve(rw, graph, top, nullptr, 0.02, 0.4, opts);
    auto tb = pme_mild_solve(rw, graph, bot, nullptr, 0.02, 0.4, opts);

    double prev = -1.0;
    const double scale = std::max(1.0, nu_l1_norm(rw.nu(), Field(top - bot)));
    for (std::size_t k = 0; k < ta.snapshots.size(); ++k) {
      Field diff = ta.snapshots[k] - tb.snapshots[k];
      const double pos = nu_inner(rw.nu(), diff.cwiseMax(0.0), Field::Ones(diff.size()));
      if (prev >= 0.0) worst_contraction = std::max(worst_contraction, (pos - prev) / scale);
      prev = pos;
    }
    for (const auto* t : {&ta, &tb}) {
      if (std::isfinite(graph.lower()))
        for (const auto& s : t->steps) worst_domain = std::max(worst_domain, graph.lower() - s.umin);
      if (std::isfinite(graph.upper()))
        for (const auto& s : t->steps) worst_domain = std::max(worst_domain, s.umax - graph.upper());
    }
  }

  const double elapsed = now_seconds() - t0;
  Outcome o;
  o.pass = heat_err <= kHeatTol && worst_contraction <= kContractionSlack &&
           worst_domain <= kDomainSlack && elapsed < kBudgetSeconds;
  o.detail = "closed-form error " + num(heat_err) + " (tol " + num(kHeatTol) +
             "), worst contraction growth " + num(worst_contraction) + " (tol " +
             num(kContractionSlack) + "), worst domain excess " + num(worst_domain) + " (tol " +
             num(kDomainSlack) + "), " + num(elapsed) + " s (budget " + num(kBudgetSeconds) + ")";
  return o;
}

// 4. Conservation and dissipation over a long splitting-scheme run: mass
//    drift, per-step energy increase, and the exponential p-norm envelope
//    with rate 4 max(c, 1).
Outcome run_conservation_dissipation() {
  constexpr double kMassTol = 1e-10;    // times nu(X)
  constexpr double kEnergyRise = 1e-9;  // times max(1, |E|)
  constexpr long kSteps = 10000;

  Rng rng(404);
  auto rw = testing::random_reversible_walk(8, rng);
  Field u0 = testing::random_field(8, rng, -0.8, 0.8);
  CHProblem prob{rw, rw, PotentialSpec{obstacle(), 1.5, 1.0}, u0};
  prob.tau = 1e-3;
  prob.T = prob.tau * static_cast<double>(kSteps);
  prob.snapshot_stride = 1000;
  auto traj = rws::solve(prob);

  Outcome o;
  if (traj.steps.size() != static_cast<std::size_t>(kSteps) + 1) {
    o.detail = "expected " + std::to_string(kSteps + 1) + " records, got " +
               std::to_string(traj.steps.size());
    return o;
  }

  const double mass0 = traj.steps.front().mass;
  double worst_mass = 0.0, worst_rise = 0.0, worst_envelope = 0.0;
  const double rate = 4.0 * std::max(prob.potential.c, 1.0);
  const double slack = 1.0 + 10.0 * prob.tau;
  const auto& first = traj.steps.front();
  for (std::size_t k = 0; k < traj.steps.size(); ++k) {
    const auto& s = traj.steps[k];
    worst_mass = std::max(worst_mass, std::abs(s.mass - mass0) / rw.total_measure());
    if (k > 0) {
      const auto& p = traj.steps[k - 1];
      worst_rise = std::max(worst_rise,
                            (s.energy - p.energy) / std::max(1.0, std::abs(p.energy)));
    }
    const double growth = std::exp(rate * s.t) * slack;
    worst_envelope = std::max(worst_envelope, s.lp2 / std::max(1e-12, first.lp2 * growth));
    worst_envelope = std::max(worst_envelope, s.lp4 / std::max(1e-12, first.lp4 * growth));
    worst_envelope = std::max(worst_envelope, s.lpinf / std::max(1e-12, first.lpinf * growth));
  }

  o.pass = worst_mass <= kMassTol && worst_rise <= kEnergyRise && worst_envelope <= 1.0;
  o.detail = "mass drift " + num(worst_mass) + " of total measure (tol " + num(kMassTol) +
             "), worst energy rise " + num(worst_rise) + " (tol " + num(kEnergyRise) +
             "), envelope ratio " + num(worst_envelope) + " (cap 1) over " +
             std::to_string(kSteps) + " steps";
  return o;
}

// 5. Every two-phase indicator state whose stationarity margin is
//    nonnegative is an exact fixed point of the solver, checked by
//    exhaustive subset enumeration; strong attraction c >= 2 delta makes
//    every margin nonnegative.
Outcome run_pure_phase_equilibria() {
  constexpr double kFixedTol = 1e-9;
  constexpr double kMarginZero = -1e-12;

  struct Instance {
    RandomWalk rw;
    double c;
  };
  Rng rng(505);
  std::vector<Instance> instances;
  for (double c : {2.0, 2.2}) {
    instances.push_back({path_walk(5), c});
    instances.push_back({cycle_walk(6), c});
    instances.push_back({complete_walk(5), c});
    instances.push_back({barbell_walk(), c});
    instances.push_back({testing::random_reversible_walk(6, rng), c});
  }
  instances.push_back({barbell_walk(), 1.2});  // mixed margins below 2 delta

  double min_strong_margin = std::numeric_limits<double>::infinity();
  double worst_move = 0.0;
  long checked = 0;
  for (const auto& inst : instances) {
    const std::size_t n = inst.rw.size();
    CHProblem base{inst.rw, inst.rw, PotentialSpec{obstacle(), inst.c, 1.0},
                   Field::Zero(static_cast<Eigen::Index>(n))};
    base.tau = 0.1;
    base.T = 1.0;
    base.snapshot_stride = 10;
    base.tolerances.resolvent_tol = 1e-12;
    base.tolerances.resolvent_max_iterations = 400;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
      NodeSet d(n);
      for (std::size_t i = 0; i < n; ++i) d.member[i] = (mask >> i) & 1u;
      const double margin = pure_phase_criterion(base, d);
      if (inst.c >= 2.0 && std::isfinite(margin))
        min_strong_margin = std::min(min_strong_margin, margin);
      if (margin < 0.0) continue;

      CHProblem prob = base;
      for (std::size_t i = 0; i < n; ++i) prob.u0[static_cast<Eigen::Index>(i)] = d[i] ? 1.0 : -1.0;
      auto traj = rws::solve(prob);
      const double move = (traj.final_state() - prob.u0).cwiseAbs().maxCoeff();
      worst_move = std::max(worst_move, move);
      ++checked;
    }
  }

  Outcome o;
  o.pass = worst_move <= kFixedTol && min_strong_margin >= kMarginZero;
  o.detail = "worst drift of a certified state " + num(worst_move) + " (tol " + num(kFixedTol) +
             ") over " + std::to_string(checked) + " states, min margin at strong attraction " +
             num(min_strong_margin) + " (floor " + num(kMarginZero) + ")";
  return o;
}

// 6. Weak attraction below the diffusive gap drives the state to its
//    conserved mean, and the detected steady states are genuine equilibria.
Outcome run_mean_asymptotics() {
  constexpr double kMeanTol = 1e-5;
  constexpr double kEquilibriumTol = 1e-8;
  constexpr double kBudgetSeconds = 120.0;
  const double t0 = now_seconds();

  Rng rng(606);
  double worst_dist = 0.0;
  int steady_count = 0, equilibrium_count = 0;
  for (int inst = 0; inst < 20; ++inst) {
    RandomWalk rw = testing::random_reversible_walk(3 + rng.index(10), rng);
    double gap = spectral_gap(rw);
    while (gap < 0.5) {
      rw = testing::random_reversible_walk(3 + rng.index(10), rng);
      gap = spectral_gap(rw);
    }
    const double c = 0.2 * gap;
    Field u0 = testing::random_field(rw.size(), rng, -0.5, 0.5);
    CHProblem prob{rw, rw, PotentialSpec{power_law(3.0), c, 1.0}, u0};
    prob.tau = 0.05;
    prob.T = 40.0 / (gap - c);
    const long steps = static_cast<long>(std::ceil(prob.T / prob.tau));
    prob.snapshot_stride = static_cast<int>(steps);
    auto traj = rws::solve(prob);

    const double mean = nu_mean(rw.nu(), u0);
    const Field& uT = traj.final_state();
    worst_dist = std::max(
        worst_dist, nu_norm(rw.nu(), Field(uT.array() - mean)));

    auto rep = detect_steady_state(traj, prob);
    if (rep.steady) {
      ++steady_count;
      if (check_equilibrium(prob, uT, kEquilibriumTol).is_equilibrium) ++equilibrium_count;
    }
  }

  const double elapsed = now_seconds() - t0;
  Outcome o;
  o.pass = worst_dist <= kMeanTol && steady_count == 20 &&
           equilibrium_count == steady_count && elapsed < kBudgetSeconds;
  o.detail = "worst distance to the mean " + num(worst_dist) + " (tol " + num(kMeanTol) + "), " +
             std::to_string(steady_count) + "/20 steady, " + std::to_string(equilibrium_count) +
             " equilibria at " + num(kEquilibriumTol) + ", " + num(elapsed) + " s (budget " +
             num(kBudgetSeconds) + ")";
  return o;
}

// 7. The two schemes approach each other under step halving: the terminal
//    gap decreases monotonically through six halvings on instances spanning
//    the saturating, logarithmic and power nonlinearities.
Outcome run_scheme_cross_validation() {
  constexpr int kHalvings = 6;
  constexpr double kMonotoneSlack = 1e-13;

  struct Instance {
    std::string name;
    RandomWalk rw;
    PotentialSpec pot;
    Field u0;
  };
  std::vector<Instance> instances;
  {
    Field u0(4);
    u0 << 0.7, 0.2, -0.3, -0.6;
    instances.push_back({"path-obstacle", path_walk(4), {obstacle(), 1.3, 1.0}, u0});
  }
  {
    Field u0(5);
    u0 << 0.5, 0.2, 0.0, -0.2, -0.5;
    instances.push_back({"cycle-logarithmic", cycle_walk(5), {logarithmic(), 0.8, 1.0}, u0});
  }
  {
    Field u0(4);
    u0 << 0.6, 0.2, -0.1, -0.5;
    instances.push_back({"complete-cubic", complete_walk(4), {power_law(3.0), 0.5, 1.0}, u0});
  }
  {
    Rng rng(707);
    auto rw = testing::random_reversible_walk(6, rng);
    Field u0 = testing::random_field(6, rng, -0.6, 0.6);
    instances.push_back({"random-linear", rw, {power_law(1.0), 0.7, 1.0}, u0});
  }
  {
    Field u0(4);
    u0 << 0.8, 0.1, -0.4, -0.7;
    instances.push_back({"cycle-obstacle", cycle_walk(4), {obstacle(), 2.5, 1.0}, u0});
  }

  Outcome o;
  bool monotone = true;
  double first_gap = 0.0, last_gap = 0.0;
  std::string breach;
  for (const auto& inst : instances) {
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k < kHalvings; ++k) {
      CHProblem prob{inst.rw, inst.rw, inst.pot, inst.u0};
      prob.tau = 0.08 / static_cast<double>(1 << k);
      prob.T = 0.64;
      prob.snapshot_stride = 1 << 20;  // initial and final only
      prob.tolerances.resolvent_tol = 1e-12;
      prob.tolerances.resolvent_max_iterations = 400;
      prob.tolerances.picard_tol = 1e-11;
      prob.tolerances.picard_max_sweeps = 400;

      prob.scheme = Scheme::imex_split;
      auto a = rws::solve(prob);
      prob.scheme = Scheme::picard;
      auto b = rws::solve(prob);
      const double gap = nu_norm(inst.rw.nu(), a.final_state() - b.final_state());
      if (k == 0) first_gap = std::max(first_gap, gap);
      if (k == kHalvings - 1) last_gap = std::max(last_gap, gap);
      if (gap > prev + kMonotoneSlack) {
        monotone = false;
        if (breach.empty())
          breach = inst.name + " at halving " + std::to_string(k) + " (" + num(prev) + " -> " +
                   num(gap) + ")";
      }
      prev = gap;
    }
  }

  o.pass = monotone;
  o.detail = monotone ? ("gap shrinks monotonically on all 5 instances; coarsest max " +
                         num(first_gap) + ", finest max " + num(last_gap))
                      : ("monotonicity breached: " + breach);
  return o;
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    Outcome (*fn)();
  };
  const Entry entries[] = {
      {"operator identities", run_operator_identities},
      {"spectral facts", run_spectral_facts},
      {"diffusion engine", run_pme_engine},
      {"conservation and dissipation", run_conservation_dissipation},
      {"pure phase equilibria", run_pure_phase_equilibria},
      {"mean asymptotics", run_mean_asymptotics},
      {"scheme cross-validation", run_scheme_cross_validation},
  };

  int failures = 0;
  int index = 0;
  for (const auto& e : entries) {
    ++index;
    Outcome o;
    try {
      o = e.fn();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    if (!o.pass) ++failures;
    std::printf("[%s] %d. %s: %s\n", o.pass ? "PASS" : "FAIL", index, e.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/7 criteria passed\n", 7 - failures);
  return failures;
}
