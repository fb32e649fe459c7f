#pragma once

#include <memory>

#include "rws/random_walk.hpp"
#include "rws/types.hpp"

namespace rws {

/// M_m f (x) = sum_y P[x][y] f(y).
Field averaging(const RandomWalk& rw, const Field& f);

/// Delta_m f = M_m f - f. Linear, bounded by 2 in nu-weighted L2, and
/// nu-mass free: sum_x nu_x (Delta_m f)(x) = 0 for invariant nu.
Field laplacian(const RandomWalk& rw, const Field& f);

/// H_m(f) = 1/4 sum_x nu_x sum_y P[x][y] (f(y) - f(x))^2.
/// Requires a reversible walk, where it equals -1/2 <f, Delta_m f>_nu.
double dirichlet_energy(const RandomWalk& rw, const Field& f);

/// Smallest nonzero eigenvalue of -Delta_m on a reversible connected walk,
/// i.e. of I - S with S the nu-symmetrized kernel. Always in (0, 2].
double spectral_gap(const RandomWalk& rw);

/// Poisson solves and the negative-order inner product induced by
/// Delta_m on a reversible connected walk. A context caches the spectral
/// factorization (dense below 500 nodes) or runs deflated CG plus
/// shift-inverted iteration above. Build once, reuse across solves; const
/// methods are safe to call concurrently only from a single thread per
/// context instance.
class HMinusOneContext {
 public:
  explicit HMinusOneContext(RandomWalk walk);
  ~HMinusOneContext();
  HMinusOneContext(HMinusOneContext&&) noexcept;
  HMinusOneContext& operator=(HMinusOneContext&&) noexcept;
  HMinusOneContext(const HMinusOneContext&) = delete;
  HMinusOneContext& operator=(const HMinusOneContext&) = delete;

  const RandomWalk& walk() const;
  double gap() const;

  /// Solves Delta_m phi = v for the nu-mean-zero phi. v must have nu-mean
  /// zero up to 1e-9 relative; the solved residual is 1e-10 relative.
  Field solve_poisson(const Field& v) const;

  /// <v1, v2> = -int (Delta_m^-1 v1) v2 dnu, for nu-mean-zero arguments.
  double inner(const Field& v1, const Field& v2) const;
  double norm(const Field& v) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rws
