#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "rws/types.hpp"

namespace rws {

/// Residual thresholds applied when classifying a walk at construction time.
struct ValidationThresholds {
  double stochasticity = 1e-12;  // |row sum - 1|, hard error above this
  double invariance = 1e-10;     // max_y |sum_x nu_x P[x][y] - nu_y| / nu_y
  double reversibility = 1e-10;  // max |nu_x P_xy - nu_y P_yx| / max nu
};

/// Flags computed once per walk, with the residuals backing them.
struct WalkFlags {
  bool invariant = false;
  bool reversible = false;
  bool connected = false;
  double stochasticity_residual = 0.0;
  double invariance_residual = 0.0;
  double reversibility_residual = 0.0;
};

/// A random walk space: a finite node set, a row-stochastic kernel P, and a
/// strictly positive measure nu. Rows of P are the one-step distributions
/// m_x. Construction validates stochasticity (hard error) and records
/// invariance, reversibility and connectedness of the support graph as flags.
/// Immutable after construction; safe for concurrent const access.
class RandomWalk {
 public:
  RandomWalk(NodeSpace space, SparseRowMatrix kernel, Measure nu,
             ValidationThresholds thresholds = {});

  std::size_t size() const { return space_->n; }
  const NodeSpace& space() const { return *space_; }
  const SparseRowMatrix& kernel() const { return kernel_; }
  const Measure& nu() const { return nu_; }
  const WalkFlags& flags() const { return flags_; }
  double total_measure() const { return nu_.total(); }

  /// P f, the one-step average of a field.
  Field apply_kernel(const Field& f) const;
  /// m_x(B) = sum over y in B of P[x][y].
  double row_mass(std::size_t x, const NodeSet& B) const;

 private:
  std::shared_ptr<const NodeSpace> space_;
  SparseRowMatrix kernel_;
  Measure nu_;
  WalkFlags flags_;
};

struct WeightedEdge {
  std::size_t x = 0;
  std::size_t y = 0;
  double w = 0.0;
};

/// Walk of a nonnegatively weighted graph: P[x][y] = w_xy / d_x with
/// d_x = sum_y w_xy, nu = d. Reversible by construction. Nodes are
/// 0..n-1 with n inferred from the edges unless given; a node with zero
/// degree is an error naming the node.
RandomWalk from_weighted_graph(const std::vector<WeightedEdge>& edges,
                               bool allow_loops = true,
                               std::optional<std::size_t> n_nodes = std::nullopt,
                               std::vector<std::string> labels = {});

/// Walk of a finite Markov chain. When pi is omitted a stationary
/// distribution is computed by damped power iteration (residual 1e-12,
/// iteration budget 1e5); failure to find a strictly positive stationary
/// vector is an error. A supplied pi failing the invariance check is an
/// error.
RandomWalk from_markov_kernel(const Eigen::MatrixXd& kernel,
                              std::optional<Eigen::VectorXd> pi = std::nullopt);

/// Walk of a point cloud under a radial profile eta >= 0 applied to
/// pairwise distances: w_xy = eta(|x - y|), loops excluded. eta must yield
/// a connected positive-degree graph.
RandomWalk from_point_cloud(const std::vector<Eigen::VectorXd>& points,
                            const std::function<double(double)>& eta);

struct GridSpec {
  int dim = 1;                   // 1 or 2
  std::vector<std::size_t> cells;  // cells per axis, size == dim
  double h = 1.0;                // cell spacing
};

/// Walk of a regular grid discretization of a radial kernel J truncated at
/// the given radius: raw weight between cells x, y is J(|x - y|) h^{2 dim},
/// then rows are normalized and nu is the raw degree (about h^dim per
/// interior node for a unit-mass J). include_center adds the self weight
/// J(0) h^{2 dim}.
RandomWalk from_grid_kernel(const GridSpec& grid,
                            const std::function<double(double)>& J,
                            double truncation_radius,
                            bool include_center = false);

/// Restriction m^Omega: walk confined to omega, escaping mass folded into
/// the diagonal, measure restricted. omega must be nonempty.
RandomWalk restrict_walk(const RandomWalk& rw, const NodeSet& omega);

/// Convolution walk with kernel P1 P2 and measure nu1. Requires the walks
/// to share a node space and nu1 to be invariant for rw2's kernel.
RandomWalk convolve(const RandomWalk& rw1, const RandomWalk& rw2);

/// Interaction mass L(A, B) = sum_{x in A} nu_x m_x(B).
double interaction(const RandomWalk& rw, const NodeSet& A, const NodeSet& B);

/// Nonlocal boundary curvature of E at every node: H(x) = 1 - 2 m_x(E).
Field mean_curvature(const RandomWalk& rw, const NodeSet& E);

}  // namespace rws
