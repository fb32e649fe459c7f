#include "rws/random_walk.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>
#include <unordered_set>

namespace rws {

namespace {

std::string node_name(const NodeSpace& space, std::size_t x) {
  if (x < space.labels.size()) return space.labels[x];
  return std::to_string(x);
}

}  // namespace

void NodeSpace::validate() const {
  require(n >= 1, "node space must contain at least one node");
  if (!labels.empty()) {
    require(labels.size() == n, "label count must match node count");
    std::unordered_set<std::string> seen;
    for (const auto& l : labels)
      require(seen.insert(l).second, "duplicate node label: " + l);
  }
  if (!coordinates.empty())
    require(coordinates.size() == n, "coordinate count must match node count");
}

std::size_t NodeSpace::index_of(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return i;
  throw std::invalid_argument("unknown node label: " + label);
}

Measure::Measure(Eigen::VectorXd weights) : weights_(std::move(weights)) {
  require(weights_.size() > 0, "measure must weight at least one node");
  double total = 0.0;
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    require(std::isfinite(weights_[i]) && weights_[i] > 0.0,
            "measure weights must be strictly positive and finite (node " +
                std::to_string(i) + ")");
    total += weights_[i];
  }
  total_ = total;
}

double Measure::of(const std::vector<bool>& subset) const {
  require(subset.size() == size(), "subset size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < subset.size(); ++i)
    if (subset[i]) s += weights_[static_cast<Eigen::Index>(i)];
  return s;
}

NodeSet NodeSet::from_indices(std::size_t n, const std::vector<std::size_t>& indices) {
  NodeSet s(n);
  for (auto i : indices) {
    require(i < n, "node index out of range: " + std::to_string(i));
    s.member[i] = true;
  }
  return s;
}

std::size_t NodeSet::count() const {
  return static_cast<std::size_t>(std::count(member.begin(), member.end(), true));
}

NodeSet NodeSet::complement() const {
  NodeSet s(size());
  for (std::size_t i = 0; i < size(); ++i) s.member[i] = !member[i];
  return s;
}

double nu_inner(const Measure& nu, const Field& f, const Field& g) {
  require(f.size() == g.size() && static_cast<std::size_t>(f.size()) == nu.size(),
          "field size mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) s += nu.weights()[i] * f[i] * g[i];
  return s;
}

double nu_norm(const Measure& nu, const Field& f) { return std::sqrt(nu_inner(nu, f, f)); }

double nu_l1_norm(const Measure& nu, const Field& f) {
  require(static_cast<std::size_t>(f.size()) == nu.size(), "field size mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) s += nu.weights()[i] * std::abs(f[i]);
  return s;
}

double nu_mass(const Measure& nu, const Field& f) {
  require(static_cast<std::size_t>(f.size()) == nu.size(), "field size mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) s += nu.weights()[i] * f[i];
  return s;
}

double nu_mean(const Measure& nu, const Field& f) { return nu_mass(nu, f) / nu.total(); }

double lp_norm(const Measure& nu, const Field& f, double p) {
  require(p >= 1.0, "lp_norm needs p >= 1");
  if (std::isinf(p)) return f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i)
    s += nu.weights()[i] * std::pow(std::abs(f[i]), p);
  return std::pow(s, 1.0 / p);
}

RandomWalk::RandomWalk(NodeSpace space, SparseRowMatrix kernel, Measure nu,
                       ValidationThresholds thresholds)
    : space_(std::make_shared<const NodeSpace>(std::move(space))),
      kernel_(std::move(kernel)),
      nu_(std::move(nu)) {
  space_->validate();
  const auto n = static_cast<Eigen::Index>(space_->n);
  require(kernel_.rows() == n && kernel_.cols() == n, "kernel shape must match node count");
  require(static_cast<Eigen::Index>(nu_.size()) == n, "measure size must match node count");
  kernel_.makeCompressed();

  // Row-stochasticity is a hard requirement; everything else is classified.
  double worst_row = 0.0;
  for (Eigen::Index x = 0; x < n; ++x) {
    double row_sum = 0.0;
    for (SparseRowMatrix::InnerIterator it(kernel_, x); it; ++it) {
      require(std::isfinite(it.value()), "kernel entries must be finite");
      require(it.value() >= 0.0, "kernel entries must be nonnegative (row " +
                                     node_name(*space_, static_cast<std::size_t>(x)) + ")");
      row_sum += it.value();
    }
    worst_row = std::max(worst_row, std::abs(row_sum - 1.0));
  }
  flags_.stochasticity_residual = worst_row;
  if (worst_row > thresholds.stochasticity) {
    std::ostringstream msg;
    msg << "kernel is not row-stochastic: worst |row sum - 1| = " << worst_row;
    throw std::invalid_argument(msg.str());
  }

  // Invariance: nu P = nu, residual relative to each target weight.
  Eigen::VectorXd nu_p = Eigen::VectorXd::Zero(n);
  for (Eigen::Index x = 0; x < n; ++x)
    for (SparseRowMatrix::InnerIterator it(kernel_, x); it; ++it)
      nu_p[it.col()] += nu_.weights()[x] * it.value();
  double inv_res = 0.0;
  for (Eigen::Index y = 0; y < n; ++y)
    inv_res = std::max(inv_res, std::abs(nu_p[y] - nu_.weights()[y]) / nu_.weights()[y]);
  flags_.invariance_residual = inv_res;
  flags_.invariant = inv_res <= thresholds.invariance;

  // Reversibility: detailed balance nu_x P_xy = nu_y P_yx, absolute residual
  // scaled by the largest weight.
  const double nu_max = nu_.weights().maxCoeff();
  SparseColMatrix flux(n, n);
  {
    std::vector<Eigen::Triplet<double>> scaled;
    scaled.reserve(static_cast<std::size_t>(kernel_.nonZeros()));
    for (Eigen::Index x = 0; x < n; ++x)
      for (SparseRowMatrix::InnerIterator it(kernel_, x); it; ++it)
        scaled.emplace_back(x, it.col(), nu_.weights()[x] * it.value());
    flux.setFromTriplets(scaled.begin(), scaled.end());
  }
  SparseColMatrix diff = flux - SparseColMatrix(flux.transpose());
  double rev_res = 0.0;
  for (Eigen::Index k = 0; k < diff.outerSize(); ++k)
    for (SparseColMatrix::InnerIterator it(diff, k); it; ++it)
      rev_res = std::max(rev_res, std::abs(it.value()));
  rev_res /= nu_max;
  flags_.reversibility_residual = rev_res;
  flags_.reversible = rev_res <= thresholds.reversibility;

  // m-connectedness: the union of forward and backward support edges forms a
  // single component.
  std::vector<std::vector<std::size_t>> adj(space_->n);
  for (Eigen::Index x = 0; x < n; ++x)
    for (SparseRowMatrix::InnerIterator it(kernel_, x); it; ++it)
      if (it.value() > 0.0 && it.col() != x) {
        adj[static_cast<std::size_t>(x)].push_back(static_cast<std::size_t>(it.col()));
        adj[static_cast<std::size_t>(it.col())].push_back(static_cast<std::size_t>(x));
      }
  std::vector<bool> seen(space_->n, false);
  std::deque<std::size_t> queue{0};
  seen[0] = true;
  std::size_t reached = 1;
  while (!queue.empty()) {
    auto x = queue.front();
    queue.pop_front();
    for (auto y : adj[x])
      if (!seen[y]) {
        seen[y] = true;
        ++reached;
        queue.push_back(y);
      }
  }
  flags_.connected = reached == space_->n;
}

Field RandomWalk::apply_kernel(const Field& f) const {
  require(static_cast<std::size_t>(f.size()) == size(), "field size mismatch");
  return kernel_ * f;
}

double RandomWalk::row_mass(std::size_t x, const NodeSet& B) const {
  require(x < size(), "node index out of range");
  require(B.size() == size(), "node set size mismatch");
  double s = 0.0;
  for (SparseRowMatrix::InnerIterator it(kernel_, static_cast<Eigen::Index>(x)); it; ++it)
    if (B[static_cast<std::size_t>(it.col())]) s += it.value();
  return s;
}

RandomWalk from_weighted_graph(const std::vector<WeightedEdge>& edges, bool allow_loops,
                               std::optional<std::size_t> n_nodes,
                               std::vector<std::string> labels) {
  require(!edges.empty() || n_nodes.has_value(), "edge list is empty");
  std::size_t n = n_nodes.value_or(0);
  for (const auto& e : edges) n = std::max({n, e.x + 1, e.y + 1});
  require(n >= 1, "graph must contain at least one node");

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd degree = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : edges) {
    require(std::isfinite(e.w) && e.w >= 0.0,
            "edge weights must be nonnegative (edge " + std::to_string(e.x) + "-" +
                std::to_string(e.y) + ")");
    if (e.x == e.y)
      require(allow_loops, "loop edges are disabled (node " + std::to_string(e.x) + ")");
    auto key = std::minmax(e.x, e.y);
    require(seen.insert(key).second, "duplicate edge " + std::to_string(e.x) + "-" +
                                         std::to_string(e.y));
    if (e.w == 0.0) continue;
    const auto x = static_cast<Eigen::Index>(e.x);
    const auto y = static_cast<Eigen::Index>(e.y);
    triplets.emplace_back(x, y, e.w);
    degree[x] += e.w;
    if (e.x != e.y) {
      triplets.emplace_back(y, x, e.w);
      degree[y] += e.w;
    }
  }
  for (Eigen::Index x = 0; x < degree.size(); ++x)
    require(degree[x] > 0.0, "node " + std::to_string(x) + " has zero total weight");

  SparseRowMatrix kernel(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  kernel.setFromTriplets(triplets.begin(), triplets.end());
  for (Eigen::Index x = 0; x < kernel.rows(); ++x)
    for (SparseRowMatrix::InnerIterator it(kernel, x); it; ++it)
      it.valueRef() /= degree[x];

  NodeSpace space;
  space.n = n;
  space.labels = std::move(labels);
  return RandomWalk(std::move(space), std::move(kernel), Measure(degree));
}

RandomWalk from_markov_kernel(const Eigen::MatrixXd& kernel, std::optional<Eigen::VectorXd> pi) {
  const Eigen::Index n = kernel.rows();
  require(n >= 1 && kernel.cols() == n, "kernel must be square and nonempty");

  Eigen::VectorXd stationary;
  if (pi.has_value()) {
    stationary = std::move(*pi);
    require(stationary.size() == n, "pi size must match kernel");
  } else {
    // Damped power iteration pi <- pi (K + I)/2; the lazy chain shares the
    // stationary vectors and kills periodicity. Residual is measured on the
    // undamped equation.
    stationary = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    const int budget = 100000;
    bool converged = false;
    for (int k = 0; k < budget; ++k) {
      Eigen::VectorXd next = 0.5 * (stationary.transpose() * kernel).transpose() + 0.5 * stationary;
      next /= next.sum();
      double residual = ((next.transpose() * kernel).transpose() - next).cwiseAbs().maxCoeff();
      stationary = next;
      if (residual <= 1e-12) {
        converged = true;
        break;
      }
    }
    if (!converged)
      throw std::invalid_argument(
          "no stationary distribution found within the iteration budget; "
          "the chain appears to lack a unique stationary law");
    if (stationary.minCoeff() <= 1e-13)
      throw std::invalid_argument(
          "stationary distribution is not strictly positive; the chain is reducible");
  }

  NodeSpace space;
  space.n = static_cast<std::size_t>(n);
  RandomWalk rw(std::move(space), SparseRowMatrix(kernel.sparseView()), Measure(stationary));
  if (!rw.flags().invariant)
    throw std::invalid_argument("supplied measure is not invariant for the kernel (residual " +
                                std::to_string(rw.flags().invariance_residual) + ")");
  return rw;
}

RandomWalk from_point_cloud(const std::vector<Eigen::VectorXd>& points,
                            const std::function<double(double)>& eta) {
  require(points.size() >= 2, "point cloud needs at least two points");
  const std::size_t n = points.size();
  std::vector<WeightedEdge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      require(points[i].size() == points[j].size(), "point dimensions differ");
      double w = eta((points[i] - points[j]).norm());
      require(std::isfinite(w) && w >= 0.0, "profile must be nonnegative and finite");
      if (w > 0.0) edges.push_back({i, j, w});
    }
  auto rw = from_weighted_graph(edges, /*allow_loops=*/false, n);
  NodeSpace space;
  space.n = n;
  space.coordinates = points;
  return RandomWalk(std::move(space), rw.kernel(), rw.nu());
}

RandomWalk from_grid_kernel(const GridSpec& grid, const std::function<double(double)>& J,
                            double truncation_radius, bool include_center) {
  require(grid.dim == 1 || grid.dim == 2, "grid dimension must be 1 or 2");
  require(static_cast<int>(grid.cells.size()) == grid.dim, "cells must list one count per axis");
  require(grid.h > 0.0, "cell spacing must be positive");
  require(truncation_radius > 0.0, "truncation radius must be positive");

  std::vector<Eigen::VectorXd> centers;
  if (grid.dim == 1) {
    for (std::size_t i = 0; i < grid.cells[0]; ++i) {
      Eigen::VectorXd p(1);
      p << static_cast<double>(i) * grid.h;
      centers.push_back(p);
    }
  } else {
    for (std::size_t j = 0; j < grid.cells[1]; ++j)
      for (std::size_t i = 0; i < grid.cells[0]; ++i) {
        Eigen::VectorXd p(2);
        p << static_cast<double>(i) * grid.h, static_cast<double>(j) * grid.h;
        centers.push_back(p);
      }
  }
  const std::size_t n = centers.size();
  require(n >= 1, "grid has no cells");

  const double cell = std::pow(grid.h, 2.0 * grid.dim);
  std::vector<WeightedEdge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      if (i == j && !include_center) continue;
      double r = (centers[i] - centers[j]).norm();
      if (r > truncation_radius) continue;
      double w = J(r) * cell;
      require(std::isfinite(w) && w >= 0.0, "kernel profile must be nonnegative and finite");
      if (w > 0.0) edges.push_back({i, j, w});
    }
  if (edges.empty())
    throw std::invalid_argument(
        "kernel has no mass on the grid (support below the cell spacing?)");
  auto rw = from_weighted_graph(edges, /*allow_loops=*/true, n);
  NodeSpace space;
  space.n = n;
  space.coordinates = std::move(centers);
  return RandomWalk(std::move(space), rw.kernel(), rw.nu());
}

RandomWalk restrict_walk(const RandomWalk& rw, const NodeSet& omega) {
  require(omega.size() == rw.size(), "node set size mismatch");
  const std::size_t kept = omega.count();
  require(kept >= 1, "restriction to the empty set");

  std::vector<Eigen::Index> to_new(rw.size(), -1);
  std::vector<std::size_t> to_old;
  for (std::size_t x = 0; x < rw.size(); ++x)
    if (omega[x]) {
      to_new[x] = static_cast<Eigen::Index>(to_old.size());
      to_old.push_back(x);
    }

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd weights(static_cast<Eigen::Index>(kept));
  for (std::size_t xi = 0; xi < kept; ++xi) {
    const auto x = to_old[xi];
    double escaped = 0.0;
    double diag = 0.0;
    for (SparseRowMatrix::InnerIterator it(rw.kernel(), static_cast<Eigen::Index>(x)); it; ++it) {
      const auto y = static_cast<std::size_t>(it.col());
      if (!omega[y]) {
        escaped += it.value();
      } else if (y == x) {
        diag += it.value();
      } else {
        triplets.emplace_back(static_cast<Eigen::Index>(xi), to_new[y], it.value());
      }
    }
    if (diag + escaped > 0.0)
      triplets.emplace_back(static_cast<Eigen::Index>(xi), static_cast<Eigen::Index>(xi),
                            diag + escaped);
    weights[static_cast<Eigen::Index>(xi)] = rw.nu()[x];
  }

  SparseRowMatrix kernel(static_cast<Eigen::Index>(kept), static_cast<Eigen::Index>(kept));
  kernel.setFromTriplets(triplets.begin(), triplets.end());
  NodeSpace space;
  space.n = kept;
  if (!rw.space().labels.empty())
    for (auto x : to_old) space.labels.push_back(rw.space().labels[x]);
  if (!rw.space().coordinates.empty())
    for (auto x : to_old) space.coordinates.push_back(rw.space().coordinates[x]);
  return RandomWalk(std::move(space), std::move(kernel), Measure(weights));
}

RandomWalk convolve(const RandomWalk& rw1, const RandomWalk& rw2) {
  require(rw1.size() == rw2.size(), "convolution requires a shared node space");
  // nu1 must be invariant for the second kernel, otherwise the composed walk
  // loses its invariant measure.
  const auto n = static_cast<Eigen::Index>(rw1.size());
  Eigen::VectorXd nu_p = Eigen::VectorXd::Zero(n);
  for (Eigen::Index x = 0; x < n; ++x)
    for (SparseRowMatrix::InnerIterator it(rw2.kernel(), x); it; ++it)
      nu_p[it.col()] += rw1.nu().weights()[x] * it.value();
  double res = 0.0;
  for (Eigen::Index y = 0; y < n; ++y)
    res = std::max(res, std::abs(nu_p[y] - rw1.nu().weights()[y]) / rw1.nu().weights()[y]);
  if (res > 1e-10)
    throw std::invalid_argument(
        "first walk's measure is not invariant for the second kernel (residual " +
        std::to_string(res) + ")");

  SparseRowMatrix product = (rw1.kernel() * rw2.kernel()).pruned();
  NodeSpace space = rw1.space();
  return RandomWalk(std::move(space), std::move(product), rw1.nu());
}

double interaction(const RandomWalk& rw, const NodeSet& A, const NodeSet& B) {
  require(A.size() == rw.size() && B.size() == rw.size(), "node set size mismatch");
  double s = 0.0;
  for (std::size_t x = 0; x < rw.size(); ++x)
    if (A[x]) s += rw.nu()[x] * rw.row_mass(x, B);
  return s;
}

Field mean_curvature(const RandomWalk& rw, const NodeSet& E) {
  require(E.size() == rw.size(), "node set size mismatch");
  Field h(static_cast<Eigen::Index>(rw.size()));
  for (std::size_t x = 0; x < rw.size(); ++x)
    h[static_cast<Eigen::Index>(x)] = 1.0 - 2.0 * rw.row_mass(x, E);
  return h;
}

}  // namespace rws
