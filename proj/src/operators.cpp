#include "rws/operators.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace rws {

namespace {

constexpr std::size_t kDenseLimit = 500;

void require_reversible_connected(const RandomWalk& rw, const char* what) {
  if (!rw.flags().reversible) {
    std::ostringstream msg;
    msg << what << " requires a reversible walk (detailed balance residual "
        << rw.flags().reversibility_residual << ")";
    throw std::invalid_argument(msg.str());
  }
  if (!rw.flags().connected)
    throw std::invalid_argument(std::string(what) +
                                " requires a connected walk (support graph splits)");
}

// Deterministic conjugate gradient for the symmetrized operator, with the
// known one-dimensional kernel projected out of every application.
class DeflatedCG {
 public:
  DeflatedCG(const SparseColMatrix& lsym, Eigen::VectorXd q1)
      : lsym_(lsym), q1_(std::move(q1)) {}

  Eigen::VectorXd project(Eigen::VectorXd x) const {
    x -= (q1_.dot(x)) * q1_;
    return x;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs, double tol, int max_iter) const {
    Eigen::VectorXd b = project(rhs);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd r = b;
    Eigen::VectorXd p = r;
    double rr = r.dot(r);
    const double stop = tol * tol * std::max(b.dot(b), 1e-300);
    for (int k = 0; k < max_iter && rr > stop; ++k) {
      Eigen::VectorXd ap = project(lsym_ * p);
      double alpha = rr / p.dot(ap);
      x += alpha * p;
      r -= alpha * ap;
      double next = r.dot(r);
      p = r + (next / rr) * p;
      rr = next;
    }
    return project(x);
  }

 private:
  const SparseColMatrix& lsym_;
  Eigen::VectorXd q1_;
};

}  // namespace

Field averaging(const RandomWalk& rw, const Field& f) { return rw.apply_kernel(f); }

Field laplacian(const RandomWalk& rw, const Field& f) { return rw.apply_kernel(f) - f; }

double dirichlet_energy(const RandomWalk& rw, const Field& f) {
  require(static_cast<std::size_t>(f.size()) == rw.size(), "field size mismatch");
  if (!rw.flags().reversible)
    throw std::invalid_argument(
        "dirichlet_energy requires a reversible walk (detailed balance residual " +
        std::to_string(rw.flags().reversibility_residual) + ")");
  double s = 0.0;
  for (Eigen::Index x = 0; x < f.size(); ++x) {
    double row = 0.0;
    for (SparseRowMatrix::InnerIterator it(rw.kernel(), x); it; ++it) {
      const double d = f[it.col()] - f[x];
      row += it.value() * d * d;
    }
    s += rw.nu().weights()[x] * row;
  }
  return 0.25 * s;
}

struct HMinusOneContext::Impl {
  RandomWalk walk;
  Eigen::VectorXd sqrt_nu;
  Eigen::VectorXd inv_sqrt_nu;
  double gap = 0.0;

  bool dense = true;
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenvectors;  // columns

  SparseColMatrix lsym;
  Eigen::VectorXd q1;

  explicit Impl(RandomWalk w) : walk(std::move(w)) {
    require_reversible_connected(walk, "negative-order context");
    const auto n = static_cast<Eigen::Index>(walk.size());
    sqrt_nu = walk.nu().weights().cwiseSqrt();
    inv_sqrt_nu = sqrt_nu.cwiseInverse();

    // L = I - D^{ 1/2} P D^{-1/2}; reversibility makes it symmetric up to
    // roundoff, which the explicit symmetrization removes.
    SparseColMatrix s_kernel = SparseColMatrix(walk.kernel()).pruned();
    for (Eigen::Index c = 0; c < s_kernel.outerSize(); ++c)
      for (SparseColMatrix::InnerIterator it(s_kernel, c); it; ++it)
        it.valueRef() *= sqrt_nu[it.row()] * inv_sqrt_nu[it.col()];
    SparseColMatrix sym = 0.5 * (s_kernel + SparseColMatrix(s_kernel.transpose()));
    SparseColMatrix identity(n, n);
    identity.setIdentity();
    lsym = (identity - sym).pruned();
    q1 = sqrt_nu / sqrt_nu.norm();

    dense = walk.size() < kDenseLimit;
    if (dense) {
      Eigen::MatrixXd lsym_dense(lsym);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lsym_dense);
      require(solver.info() == Eigen::Success, "eigen decomposition failed");
      eigenvalues = solver.eigenvalues();
      eigenvectors = solver.eigenvectors();
      if (n >= 2) gap = std::max(eigenvalues[1], 0.0);
    } else {
      // Shift-inverted (inverse) power iteration on the deflated operator:
      // repeated Poisson solves converge to the smallest nonzero eigenvalue.
      DeflatedCG cg(lsym, q1);
      Eigen::VectorXd x(n);
      for (Eigen::Index i = 0; i < n; ++i) x[i] = (i % 2 == 0) ? 1.0 : -1.0;
      x = cg.project(x);
      x /= x.norm();
      double lambda = 0.0;
      for (int k = 0; k < 500; ++k) {
        Eigen::VectorXd y = cg.solve(x, 1e-13, static_cast<int>(10 * n));
        y /= y.norm();
        double next = y.dot(lsym * y);
        bool done = std::abs(next - lambda) <= 1e-12 * std::max(next, 1e-30);
        lambda = next;
        x = y;
        if (done) break;
      }
      gap = lambda;
    }
  }

  Eigen::VectorXd solve_sym(const Eigen::VectorXd& rhs) const {
    if (dense) {
      Eigen::VectorXd y = Eigen::VectorXd::Zero(rhs.size());
      const double cutoff = 0.5 * std::max(gap, 1e-14);
      for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
        if (eigenvalues[k] <= cutoff) continue;
        y += (eigenvectors.col(k).dot(rhs) / eigenvalues[k]) * eigenvectors.col(k);
      }
      return y;
    }
    DeflatedCG cg(lsym, q1);
    return cg.solve(rhs, 1e-12, static_cast<int>(10 * walk.size()) + 200);
  }
};

HMinusOneContext::HMinusOneContext(RandomWalk walk)
    : impl_(std::make_unique<Impl>(std::move(walk))) {}
HMinusOneContext::~HMinusOneContext() = default;
HMinusOneContext::HMinusOneContext(HMinusOneContext&&) noexcept = default;
HMinusOneContext& HMinusOneContext::operator=(HMinusOneContext&&) noexcept = default;

const RandomWalk& HMinusOneContext::walk() const { return impl_->walk; }

double HMinusOneContext::gap() const { return impl_->gap; }

Field HMinusOneContext::solve_poisson(const Field& v) const {
  const auto& nu = impl_->walk.nu();
  require(static_cast<std::size_t>(v.size()) == impl_->walk.size(), "field size mismatch");
  const double norm = nu_norm(nu, v);
  if (norm == 0.0) return Field::Zero(v.size());
  const double mean_scale = std::sqrt(nu.total()) * norm;
  if (std::abs(nu_mass(nu, v)) > 1e-9 * mean_scale)
    throw std::invalid_argument("poisson data must have zero nu-mean (relative defect " +
                                std::to_string(std::abs(nu_mass(nu, v)) / mean_scale) + ")");
  // Delta phi = v becomes L y = -D^{1/2} v with phi = D^{-1/2} y.
  Eigen::VectorXd rhs = -(impl_->sqrt_nu.cwiseProduct(v));
  Eigen::VectorXd y = impl_->solve_sym(rhs);
  Field phi = impl_->inv_sqrt_nu.cwiseProduct(y);
  phi.array() -= nu_mean(nu, phi);
  return phi;
}

double HMinusOneContext::inner(const Field& v1, const Field& v2) const {
  return -nu_inner(impl_->walk.nu(), solve_poisson(v1), v2);
}

double HMinusOneContext::norm(const Field& v) const {
  return std::sqrt(std::max(inner(v, v), 0.0));
}

double spectral_gap(const RandomWalk& rw) {
  require_reversible_connected(rw, "spectral_gap");
  if (rw.size() == 1)
    throw std::invalid_argument("spectral gap needs at least two nodes");
  HMinusOneContext ctx(rw);
  return ctx.gap();
}

}  // namespace rws
