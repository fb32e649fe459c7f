#pragma once

#include <functional>
#include <memory>
#include <string>

#include "rws/types.hpp"

namespace rws {

/// Closed interval with infinite endpoints allowed; empty when lo > hi.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool is_empty = false;

  static Interval empty();
  static Interval point(double v);
  bool contains(double v, double tol = 0.0) const;
};

/// A maximal monotone graph gamma on R with 0 in gamma(0), described through
/// its inverse gamma^-1 (a monotone graph in the state variable r):
///   - lower()/upper() are gamma^- = inf Ran(gamma), gamma^+ = sup Ran(gamma),
///     i.e. the closure of the domain of gamma^-1 is [lower(), upper()];
///   - min_section(r) is the least-norm element (gamma^-1)^0(r);
///   - j_star(r) integrates the min section from 0, +infinity outside
///     [lower(), upper()];
///   - resolvent(t, z) is (I + t gamma^-1)^-1 z, single-valued and
///     nonexpansive for every t > 0;
///   - inverse_values(r) is the full set gamma^-1(r) as an interval
///     (closed-form for the built-ins, a sampled outer approximation for
///     custom graphs, which may overestimate at jump points);
///   - resolvent_slope(t, z) is an element of the generalized derivative of
///     z -> resolvent(t, z), in [0, 1].
/// Value type; cheap to copy.
class MonotoneGraph {
 public:
  struct Impl;

  explicit MonotoneGraph(std::shared_ptr<const Impl> impl);

  const std::string& name() const;
  double lower() const;
  double upper() const;
  double min_section(double r) const;
  double j_star(double r) const;
  double resolvent(double t, double z) const;
  double resolvent_slope(double t, double z) const;
  Interval inverse_values(double r) const;

  /// Nearest point of the domain of gamma^-1; open endpoints are nudged
  /// inward by a relative margin so the result is always evaluable.
  double clamp_to_domain(double r) const;

 private:
  std::shared_ptr<const Impl> impl_;
};

/// gamma^-1(r) = |r|^(p-1) r, p > 0. Porous medium for p > 1, heat for
/// p = 1, fast diffusion for p < 1. gamma^-+ = -+infinity.
MonotoneGraph power_law(double p);

/// gamma^-1(r) = log(1 + r) - log(1 - r) on (-1, 1). The domain endpoints
/// carry no inverse values; j_star(+-1) = 2 log 2.
MonotoneGraph logarithmic();

/// gamma^-1 = subdifferential of the indicator of [-1, 1]; the resolvent is
/// the clamp onto [-1, 1] for every t, and j_star vanishes on [-1, 1].
MonotoneGraph obstacle();

/// Two-phase energy/temperature graph: gamma^-1(r) = r for r < 0, 0 on
/// [0, 1], r - 1 for r > 1.
MonotoneGraph stefan();

/// gamma = step graph 0 / [0,1] / 1, so gamma^-1 has domain [0, 1] with a
/// plateau at 0 inside and vertical rays at the endpoints.
MonotoneGraph hele_shaw();

/// User-defined graph from a continuous nondecreasing min-section sampled on
/// (lower, upper). The resolvent is found by safeguarded bisection and
/// inverse_values is approximated by probing nearby the point.
MonotoneGraph custom(std::string name,
                     std::function<double(double)> min_section,
                     double lower, double upper);

/// Double-well data for the phase-field dynamics: the convex part gamma and
/// the concave quadratic -(c/2) r^2, plus the interface coefficient delta.
struct PotentialSpec {
  MonotoneGraph graph;
  double c = 1.0;
  double delta = 1.0;
};

/// int_X (j_star(u) - (c/2) u^2) dnu; +infinity if u leaves the domain.
double potential_energy(const PotentialSpec& spec, const Field& u, const Measure& nu);

}  // namespace rws
