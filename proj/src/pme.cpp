#include "rws/pme.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rws/operators.hpp"

namespace rws {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// splitmix64; deterministic probe vectors independent of libstdc++.
double unit_draw(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  z = z ^ (z >> 31);
  return 2.0 * (static_cast<double>(z >> 11) * 0x1.0p-53) - 1.0;
}

}  // namespace

struct ResolventSolver::Impl {
  RandomWalk walk;
  MonotoneGraph graph;
  ResolventOptions options;
  bool has_implicit = false;
  SparseColMatrix implicit_part;  // L
  SparseColMatrix minus_delta;    // I - P
  mutable std::unique_ptr<HMinusOneContext> poisson;

  Impl(RandomWalk w, MonotoneGraph g, const SparseColMatrix* L, ResolventOptions opts)
      : walk(std::move(w)), graph(std::move(g)), options(opts) {
    require(walk.flags().invariant,
            "resolvent solver needs an invariant measure (residual " +
                std::to_string(walk.flags().invariance_residual) + ")");
    const auto n = static_cast<Eigen::Index>(walk.size());
    SparseColMatrix identity(n, n);
    identity.setIdentity();
    minus_delta = (identity - SparseColMatrix(walk.kernel())).pruned();

    if (L != nullptr) {
      require(L->rows() == n && L->cols() == n, "implicit part shape mismatch");
      has_implicit = true;
      implicit_part = *L;
      check_implicit_part();
    }
  }

  const HMinusOneContext& poisson_context() const {
    if (!poisson) poisson = std::make_unique<HMinusOneContext>(walk);
    return *poisson;
  }

  // The implicit part must annihilate constants exactly and be positive
  // semidefinite in the negative-order inner product of the walk, which is
  // what makes the implicit step a monotone resolvent. The first property is
  // checked directly, the second probed on deterministic vectors when the
  // walk supports Poisson solves.
  void check_implicit_part() const {
    const auto n = static_cast<Eigen::Index>(walk.size());
    double coeff_scale = 0.0;
    for (Eigen::Index k = 0; k < implicit_part.outerSize(); ++k)
      for (SparseColMatrix::InnerIterator it(implicit_part, k); it; ++it)
        coeff_scale = std::max(coeff_scale, std::abs(it.value()));
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    double annihilation = (implicit_part * ones).cwiseAbs().maxCoeff();
    if (annihilation > 1e-12 * std::max(1.0, coeff_scale))
      throw std::invalid_argument(
          "implicit part must annihilate constants (worst row sum " +
          std::to_string(annihilation) + ")");
    if (!walk.flags().reversible || !walk.flags().connected) return;
    const auto& ctx = poisson_context();
    std::uint64_t state = 42;
    for (int probe = 0; probe < 5; ++probe) {
      Eigen::VectorXd w(n);
      for (Eigen::Index i = 0; i < n; ++i) w[i] = unit_draw(state);
      w.array() -= nu_mean(walk.nu(), w);
      double denom = nu_inner(walk.nu(), w, w);
      if (denom <= 0.0) continue;
      Field lw = implicit_part * w;
      lw.array() -= nu_mean(walk.nu(), lw);
      // <L w, w> in the negative-order product equals -<poisson(Lw), w>_nu.
      double q = -nu_inner(walk.nu(), ctx.solve_poisson(lw), w);
      if (q < -1e-8 * std::max(1.0, std::abs(q)) * denom)
        throw std::invalid_argument(
            "implicit part is not positive semidefinite in the negative-order "
            "inner product (probe value " +
            std::to_string(q / denom) + ")");
    }
  }

  struct Residuals {
    Field f1;
    Field f2;
    double theta = 0.0;
  };

  Residuals residuals(double lambda, const Field& g, const Field& u, const Field& v) const {
    Residuals r;
    r.f1 = u + lambda * (minus_delta * v) - g;
    if (has_implicit) r.f1 += lambda * (implicit_part * u);
    r.f2.resize(u.size());
    const double sigma = options.sigma;
    for (Eigen::Index i = 0; i < u.size(); ++i)
      r.f2[i] = u[i] - graph.resolvent(sigma, u[i] + sigma * v[i]);
    const double n1 = nu_norm(walk.nu(), r.f1);
    const double n2 = nu_norm(walk.nu(), r.f2);
    r.theta = n1 * n1 + n2 * n2;
    return r;
  }

  // One damped alternating sweep: the linear equation is solved for v by a
  // deflated Poisson solve at the current u, the nodewise resolvent then
  // reprojects u, with the additive gauge of v fixed by matching the mass of
  // g through a monotone scalar equation.
  bool picard_sweep(double lambda, const Field& g, Field& u, Field& v) const {
    if (!walk.flags().reversible || !walk.flags().connected) return false;
    const auto& ctx = poisson_context();
    const auto& nu = walk.nu();
    const double mass_g = nu_mass(nu, g);
    Field rho = u - g;
    if (has_implicit) rho += lambda * (implicit_part * u);
    rho.array() -= nu_mass(nu, rho) / nu.total();
    Field v_new = ctx.solve_poisson(rho / lambda);

    const double sigma = options.sigma;
    auto mass_at = [&](double beta) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < u.size(); ++i)
        s += nu.weights()[i] * graph.resolvent(sigma, u[i] + sigma * (v_new[i] + beta));
      return s - mass_g;
    };
    double blo = 0.0, bhi = 0.0;
    double span = std::max(1.0, v_new.cwiseAbs().maxCoeff());
    double flo = mass_at(0.0);
    if (flo > 0.0) {
      blo = -span;
      for (int k = 0; k < 200 && mass_at(blo) > 0.0; ++k) blo *= 2.0;
      bhi = 0.0;
    } else {
      bhi = span;
      for (int k = 0; k < 200 && mass_at(bhi) < 0.0; ++k) bhi *= 2.0;
    }
    for (int k = 0; k < 200 && bhi - blo > 1e-15 * std::max(1.0, std::abs(blo) + std::abs(bhi));
         ++k) {
      double mid = 0.5 * (blo + bhi);
      (mass_at(mid) <= 0.0 ? blo : bhi) = mid;
    }
    const double beta = 0.5 * (blo + bhi);

    const double omega = 0.5;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      double target = graph.resolvent(sigma, u[i] + sigma * (v_new[i] + beta));
      u[i] += omega * (target - u[i]);
      v[i] += omega * (v_new[i] + beta - v[i]);
    }
    return true;
  }

  ResolventSolution solve(double lambda, const Field& g, const Field* warm_u,
                          const Field* warm_v, std::optional<double> mass_target) const {
    require(lambda > 0.0, "resolvent step size must be positive");
    const auto n = static_cast<Eigen::Index>(walk.size());
    require(g.size() == n, "data size mismatch");
    require(g.allFinite(), "data must be finite");
    const auto& nu = walk.nu();

    const double mass_g = nu_mass(nu, g);
    const double window_lo = graph.lower() * nu.total();
    const double window_hi = graph.upper() * nu.total();
    if (!(mass_g > window_lo && mass_g < window_hi)) {
      std::ostringstream msg;
      msg << "mass " << mass_g << " outside the open window (" << window_lo << ", "
          << window_hi << ") spanned by the potential over the space";
      throw std::invalid_argument(msg.str());
    }

    const double scale = std::max(1.0, nu_norm(nu, g));
    const double sigma = options.sigma;

    // Constant interior data is a fixed point for every lambda.
    if (g.maxCoeff() == g.minCoeff() && g[0] > graph.lower() && g[0] < graph.upper()) {
      ResolventSolution sol;
      sol.u = g;
      sol.v = Field::Constant(n, graph.min_section(graph.clamp_to_domain(g[0])));
      sol.residual = std::sqrt(residuals(lambda, g, sol.u, sol.v).theta);
      sol.iterations = 0;
      return sol;
    }

    Field u = warm_u != nullptr ? *warm_u : g;
    for (Eigen::Index i = 0; i < n; ++i) u[i] = graph.clamp_to_domain(u[i]);
    Field v(n);
    if (warm_v != nullptr && warm_v->size() == n) {
      v = *warm_v;
    } else {
      for (Eigen::Index i = 0; i < n; ++i) v[i] = graph.min_section(u[i]);
    }

    Eigen::SparseLU<SparseColMatrix> lu;
    bool pattern_ready = false;
    std::vector<Eigen::Triplet<double>> triplets;
    const double jac_reg = 1e-9;  // keeps the all-plateau corner invertible;
                                  // the residual stays exact.

    Residuals res = residuals(lambda, g, u, v);
    int iterations = 0;
    bool converged = std::sqrt(res.theta) <= options.tol * scale;

    for (int k = 0; k < options.max_iterations && !converged; ++k) {
      iterations = k + 1;
      triplets.clear();
      for (Eigen::Index c = 0; c < n; ++c) triplets.emplace_back(c, c, 1.0);
      if (has_implicit)
        for (Eigen::Index c = 0; c < implicit_part.outerSize(); ++c)
          for (SparseColMatrix::InnerIterator it(implicit_part, c); it; ++it)
            triplets.emplace_back(it.row(), it.col(), lambda * it.value());
      for (Eigen::Index c = 0; c < minus_delta.outerSize(); ++c)
        for (SparseColMatrix::InnerIterator it(minus_delta, c); it; ++it)
          triplets.emplace_back(it.row(), n + it.col(), lambda * it.value());
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = graph.resolvent_slope(sigma, u[i] + sigma * v[i]);
        triplets.emplace_back(n + i, i, 1.0 - d);
        triplets.emplace_back(n + i, n + i, -sigma * d - jac_reg);
      }
      SparseColMatrix m(2 * n, 2 * n);
      m.setFromTriplets(triplets.begin(), triplets.end());

      bool newton_ok = true;
      if (!pattern_ready) {
        lu.analyzePattern(m);
        pattern_ready = true;
      }
      lu.factorize(m);
      newton_ok = lu.info() == Eigen::Success;

      if (newton_ok) {
        Eigen::VectorXd rhs(2 * n);
        rhs.head(n) = -res.f1;
        rhs.tail(n) = -res.f2;
        Eigen::VectorXd step = lu.solve(rhs);
        newton_ok = step.allFinite();
        if (newton_ok) {
          double alpha = 1.0;
          bool accepted = false;
          for (int ls = 0; ls < 14; ++ls) {
            Field u_try = u + alpha * step.head(n);
            Field v_try = v + alpha * step.tail(n);
            Residuals r_try = residuals(lambda, g, u_try, v_try);
            if (r_try.theta <= (1.0 - 1e-4 * alpha) * res.theta) {
              u = std::move(u_try);
              v = std::move(v_try);
              res = std::move(r_try);
              accepted = true;
              break;
            }
            alpha *= 0.5;
          }
          newton_ok = accepted;
        }
      }

      if (!newton_ok) {
        if (!picard_sweep(lambda, g, u, v))
          throw std::runtime_error(
              "resolvent iteration stalled and the walk offers no alternating "
              "fallback (not reversible); residual " +
              std::to_string(std::sqrt(res.theta)));
        res = residuals(lambda, g, u, v);
      }
      converged = std::sqrt(res.theta) <= options.tol * scale;
    }

    if (!converged) {
      std::ostringstream msg;
      msg << "resolvent failed to converge within " << options.max_iterations
          << " iterations (residual " << std::sqrt(res.theta) << ", tolerance "
          << options.tol * scale << ")";
      throw std::runtime_error(msg.str());
    }

    // Final projection onto the graph: replacing (u, v) by the resolvent of
    // z = u + sigma v makes the inclusion exact and confines u to the domain
    // closure. The displacement is bounded by the converged residual.
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = u[i] + sigma * v[i];
      const double pu = graph.resolvent(sigma, z);
      u[i] = pu;
      v[i] = (z - pu) / sigma;
    }

    {
      // The resolvent preserves nu-mass analytically; restore it exactly on
      // strictly interior nodes. Shifts are capped at half the interior
      // margin per round so no node leaves the domain.
      const double target = mass_target.has_value() ? *mass_target : mass_g;
      const double span = std::isfinite(graph.upper() - graph.lower())
                              ? graph.upper() - graph.lower()
                              : 1.0;
      const double margin = 1e-6 * span;
      for (int round = 0; round < 5; ++round) {
        const double defect = nu_mass(nu, u) - target;
        if (defect == 0.0 || std::abs(defect) > 1e-6 * std::max(1.0, std::abs(target)))
          break;
        double interior_mass = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
          if (u[i] > graph.lower() + margin && u[i] < graph.upper() - margin)
            interior_mass += nu.weights()[i];
        if (interior_mass <= 0.0) break;
        double shift = defect / interior_mass;
        const bool capped = std::abs(shift) > 0.5 * margin;
        if (capped) shift = std::copysign(0.5 * margin, shift);
        for (Eigen::Index i = 0; i < n; ++i)
          if (u[i] > graph.lower() + margin && u[i] < graph.upper() - margin) u[i] -= shift;
        if (!capped) break;
      }
    }

    ResolventSolution sol;
    sol.residual = std::sqrt(residuals(lambda, g, u, v).theta);
    sol.u = std::move(u);
    sol.v = std::move(v);
    sol.iterations = iterations;
    return sol;
  }
};

ResolventSolver::ResolventSolver(RandomWalk walk, MonotoneGraph graph,
                                 const SparseColMatrix* implicit_part,
                                 ResolventOptions options)
    : impl_(std::make_unique<Impl>(std::move(walk), std::move(graph), implicit_part, options)) {}
ResolventSolver::~ResolventSolver() = default;
ResolventSolver::ResolventSolver(ResolventSolver&&) noexcept = default;
ResolventSolver& ResolventSolver::operator=(ResolventSolver&&) noexcept = default;

const RandomWalk& ResolventSolver::walk() const { return impl_->walk; }
const MonotoneGraph& ResolventSolver::graph() const { return impl_->graph; }

ResolventSolution ResolventSolver::solve(double lambda, const Field& g, const Field* warm_u,
                                         const Field* warm_v,
                                         std::optional<double> mass_target) const {
  return impl_->solve(lambda, g, warm_u, warm_v, mass_target);
}

ResolventSolution solve_resolvent(const RandomWalk& walk, const MonotoneGraph& graph,
                                  double lambda, const Field& g,
                                  const SparseColMatrix* implicit_part,
                                  const ResolventOptions& options, const Field* warm_u,
                                  const Field* warm_v, std::optional<double> mass_target) {
  ResolventSolver solver(walk, graph, implicit_part, options);
  return solver.solve(lambda, g, warm_u, warm_v, mass_target);
}

MassWindowReport validate_mass_window(const RandomWalk& walk, const MonotoneGraph& graph,
                                      const Field& u0, const Forcing& forcing, double tau,
                                      double T) {
  require(tau > 0.0 && T > 0.0, "tau and T must be positive");
  require(static_cast<std::size_t>(u0.size()) == walk.size(), "field size mismatch");
  MassWindowReport rep;
  rep.lower = graph.lower() * walk.total_measure();
  rep.upper = graph.upper() * walk.total_measure();
  rep.initial_mass = nu_mass(walk.nu(), u0);

  const long steps = static_cast<long>(std::ceil(T / tau - 1e-9));
  double mass = rep.initial_mass;
  for (long k = 0; k <= steps; ++k) {
    if (!(mass > rep.lower && mass < rep.upper)) {
      rep.ok = false;
      rep.first_violation_time = static_cast<double>(k) * tau;
      rep.mass_at_violation = mass;
      std::ostringstream msg;
      msg << "cumulative mass " << mass << " leaves the open window (" << rep.lower << ", "
          << rep.upper << ") at t = " << rep.first_violation_time;
      rep.message = msg.str();
      return rep;
    }
    if (k < steps && forcing) {
      Field f = forcing(k, static_cast<double>(k) * tau);
      require(static_cast<std::size_t>(f.size()) == walk.size(), "forcing size mismatch");
      mass += tau * nu_mass(walk.nu(), f);
    }
  }
  rep.ok = true;
  rep.message = "mass stays strictly inside the window";
  return rep;
}

Trajectory pme_mild_solve(const RandomWalk& walk, const MonotoneGraph& graph, const Field& u0,
                          const Forcing& forcing, double tau, double T,
                          const MildSolveOptions& options) {
  require(tau > 0.0 && T > 0.0, "tau and T must be positive");
  require(static_cast<std::size_t>(u0.size()) == walk.size(), "field size mismatch");
  const auto& nu = walk.nu();
  const long steps = static_cast<long>(std::ceil(T / tau - 1e-9));
  const int stride = std::max(options.snapshot_stride, 1);

  Trajectory traj;
  traj.tau = tau;
  traj.t_final = static_cast<double>(steps) * tau;
  traj.snapshot_stride = stride;

  auto record = [&](long step, const Field& u, const Field* u_prev, double residual,
                    int iterations) {
    StepRecord r;
    r.step = step;
    r.t = static_cast<double>(step) * tau;
    r.mass = nu_mass(nu, u);
    r.energy = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i)
      r.energy += nu.weights()[i] * graph.j_star(u[i]);
    r.grad_mu_sq = std::numeric_limits<double>::quiet_NaN();
    r.lp2 = lp_norm(nu, u, 2.0);
    r.lp4 = lp_norm(nu, u, 4.0);
    r.lpinf = lp_norm(nu, u, kInf);
    r.umin = u.minCoeff();
    r.umax = u.maxCoeff();
    r.delta_norm = u_prev != nullptr ? nu_norm(nu, u - *u_prev) / tau : 0.0;
    r.residual = residual;
    r.iterations = iterations;
    traj.steps.push_back(std::move(r));
  };
  auto snapshot = [&](long step, const Field& u, const Field& v) {
    traj.snapshot_steps.push_back(step);
    traj.snapshots.push_back(u);
    traj.snapshots_v.push_back(v);
  };

  // Constant boundary-mass data with no forcing stays put; the generic
  // driver rejects it because its mass sits on the window edge.
  const bool pure_phase =
      !forcing && u0.size() > 0 && u0.maxCoeff() == u0.minCoeff() &&
      (u0[0] == graph.lower() || u0[0] == graph.upper());
  if (pure_phase) {
    Field v0 = Field::Constant(u0.size(), graph.min_section(u0[0]));
    record(0, u0, nullptr, 0.0, 0);
    snapshot(0, u0, v0);
    for (long k = 1; k <= steps; ++k) {
      record(k, u0, &u0, 0.0, 0);
      if (k % stride == 0 || k == steps) snapshot(k, u0, v0);
    }
    traj.notes.push_back("pure-phase constant data: trajectory is constant by construction");
    return traj;
  }

  auto window = validate_mass_window(walk, graph, u0, forcing, tau, T);
  if (!window.ok) throw std::invalid_argument(window.message);

  ResolventSolver solver(walk, graph, nullptr, options.resolvent);
  Field u = u0;
  Field v;
  double target_mass = nu_mass(nu, u0);

  record(0, u, nullptr, 0.0, 0);
  {
    Field v0(u0.size());
    for (Eigen::Index i = 0; i < u0.size(); ++i)
      v0[i] = graph.min_section(graph.clamp_to_domain(u0[i]));
    snapshot(0, u0, v0);
  }

  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * tau;
    Field g = u;
    if (forcing) {
      Field f = forcing(k, t);
      require(static_cast<std::size_t>(f.size()) == walk.size(), "forcing size mismatch");
      g += tau * f;
      target_mass += tau * nu_mass(nu, f);
    }
    Field u_prev = u;
    auto sol = solver.solve(tau, g, &u, v.size() == u.size() ? &v : nullptr, target_mass);
    u = std::move(sol.u);
    v = std::move(sol.v);
    record(k + 1, u, &u_prev, sol.residual, sol.iterations);
    if ((k + 1) % stride == 0 || k + 1 == steps) snapshot(k + 1, u, v);
  }
  return traj;
}

const Field& Trajectory::final_state() const {
  require(!snapshots.empty(), "trajectory holds no snapshots");
  return snapshots.back();
}

}  // namespace rws
