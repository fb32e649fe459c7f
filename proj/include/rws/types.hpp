#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace rws {

using Field = Eigen::VectorXd;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SparseColMatrix = Eigen::SparseMatrix<double>;

/// Finite node set underlying a random walk space.
/// Labels and coordinates are optional; labels, when present, must be unique
/// and there must be one per node.
struct NodeSpace {
  std::size_t n = 0;
  std::vector<std::string> labels;
  std::vector<Eigen::VectorXd> coordinates;

  void validate() const;
  /// Index of a label, or throws std::invalid_argument.
  std::size_t index_of(const std::string& label) const;
};

/// Strictly positive node weights with cached total mass.
class Measure {
 public:
  Measure() = default;
  explicit Measure(Eigen::VectorXd weights);

  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  const Eigen::VectorXd& weights() const { return weights_; }
  double operator[](std::size_t x) const { return weights_[static_cast<Eigen::Index>(x)]; }
  double total() const { return total_; }

  /// Measure of a node subset, fixed summation order.
  double of(const std::vector<bool>& subset) const;

 private:
  Eigen::VectorXd weights_;
  double total_ = 0.0;
};

/// Subset of nodes with bitset semantics.
struct NodeSet {
  std::vector<bool> member;

  NodeSet() = default;
  explicit NodeSet(std::size_t n, bool value = false) : member(n, value) {}
  static NodeSet from_indices(std::size_t n, const std::vector<std::size_t>& indices);

  std::size_t size() const { return member.size(); }
  std::size_t count() const;
  bool operator[](std::size_t i) const { return member[i]; }
  NodeSet complement() const;
  bool empty_set() const { return count() == 0; }
  bool full_set() const { return count() == size(); }
};

// nu-weighted sums over nodes. All reductions run in node order so repeated
// evaluation is bitwise reproducible.
double nu_inner(const Measure& nu, const Field& f, const Field& g);
double nu_norm(const Measure& nu, const Field& f);
double nu_l1_norm(const Measure& nu, const Field& f);
double nu_mean(const Measure& nu, const Field& f);
double nu_mass(const Measure& nu, const Field& f);
/// nu-weighted L^p norm; p = infinity is the plain max norm.
double lp_norm(const Measure& nu, const Field& f, double p);

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace rws
