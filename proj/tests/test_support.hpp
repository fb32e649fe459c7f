#pragma once

// Deterministic generators shared by the test binaries. Everything is seeded
// explicitly and uses splitmix64 so results do not depend on the standard
// library's engine or distribution implementations.

#include <cmath>
#include <cstdint>
#include <vector>

#include "rws/random_walk.hpp"
#include "rws/types.hpp"

namespace rws::testing {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double uniform(double a, double b) {
    return a + (b - a) * (static_cast<double>(next() >> 11) * 0x1.0p-53);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

 private:
  std::uint64_t state_;
};

/// Connected reversible walk: a random spanning tree plus extra random
/// edges, all with positive weights. nu is the weighted degree.
inline RandomWalk random_reversible_walk(std::size_t n, Rng& rng, double extra_edge_rate = 0.5) {
  std::vector<WeightedEdge> edges;
  for (std::size_t i = 1; i < n; ++i)
    edges.push_back({rng.index(i), i, rng.uniform(0.2, 2.0)});
  const auto extras = static_cast<std::size_t>(extra_edge_rate * static_cast<double>(n)) + 1;
  for (std::size_t k = 0; k < extras; ++k) {
    std::size_t x = rng.index(n), y = rng.index(n);
    if (x == y) continue;
    bool dup = false;
    for (const auto& e : edges)
      if ((e.x == x && e.y == y) || (e.x == y && e.y == x)) dup = true;
    if (!dup) edges.push_back({x, y, rng.uniform(0.2, 2.0)});
  }
  return from_weighted_graph(edges, false, n);
}

/// Row-stochastic dense kernel with full support, generally not reversible.
inline Eigen::MatrixXd random_markov_kernel(std::size_t n, Rng& rng) {
  Eigen::MatrixXd k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.uniform(0.05, 1.0);
      row += k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    k.row(static_cast<Eigen::Index>(i)) /= row;
  }
  return k;
}

inline Field random_field(std::size_t n, Rng& rng, double a = -1.0, double b = 1.0) {
  Field f(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = rng.uniform(a, b);
  return f;
}

inline Field random_mean_zero_field(const Measure& nu, Rng& rng) {
  Field f = random_field(nu.size(), rng);
  double mean = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) mean += nu.weights()[i] * f[i];
  f.array() -= mean / nu.total();
  return f;
}

}  // namespace rws::testing
