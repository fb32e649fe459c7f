#include "rws/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rws {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Safeguarded Newton iteration for x + t s(x) = z with s continuous
// nondecreasing on (lo, hi) and a sign change across the bracket. Falls back
// to bisection whenever the Newton step leaves the bracket or the derivative
// is unavailable. Residual target 1e-13 relative to max(1, |z|).
double solve_scalar(const std::function<double(double)>& s,
                    const std::function<double(double)>& ds, double t, double z,
                    double lo, double hi) {
  const double tol = 1e-13 * std::max(1.0, std::abs(z));
  auto phi = [&](double x) { return x + t * s(x) - z; };
  double a = lo, b = hi;
  double fa = phi(a), fb = phi(b);
  if (fa > 0.0 && fb > 0.0) return a;
  if (fa < 0.0 && fb < 0.0) return b;
  double x = 0.5 * (a + b);
  for (int k = 0; k < 200; ++k) {
    double fx = phi(x);
    if (std::abs(fx) <= tol) return x;
    if (fx > 0.0) {
      b = x;
    } else {
      a = x;
    }
    double step_x = x;
    if (ds) {
      double d = 1.0 + t * ds(x);
      if (std::isfinite(d) && d > 0.0) step_x = x - fx / d;
    }
    x = (step_x > a && step_x < b) ? step_x : 0.5 * (a + b);
    if (b - a <= 1e-16 * std::max(1.0, std::abs(x))) return 0.5 * (a + b);
  }
  return x;
}

}  // namespace

Interval Interval::empty() {
  Interval i;
  i.is_empty = true;
  return i;
}

Interval Interval::point(double v) {
  Interval i;
  i.lo = v;
  i.hi = v;
  return i;
}

bool Interval::contains(double v, double tol) const {
  if (is_empty) return false;
  return v >= lo - tol && v <= hi + tol;
}

struct MonotoneGraph::Impl {
  std::string name;
  double lower = -kInf;
  double upper = kInf;

  virtual ~Impl() = default;
  virtual double min_section(double r) const = 0;
  virtual double j_star(double r) const = 0;
  virtual double resolvent(double t, double z) const = 0;
  virtual double resolvent_slope(double t, double z) const = 0;
  virtual Interval inverse_values(double r) const = 0;
  virtual double clamp_to_domain(double r) const {
    return std::clamp(r, lower, upper);
  }
};

MonotoneGraph::MonotoneGraph(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
const std::string& MonotoneGraph::name() const { return impl_->name; }
double MonotoneGraph::lower() const { return impl_->lower; }
double MonotoneGraph::upper() const { return impl_->upper; }
double MonotoneGraph::min_section(double r) const { return impl_->min_section(r); }
double MonotoneGraph::j_star(double r) const { return impl_->j_star(r); }
double MonotoneGraph::resolvent(double t, double z) const {
  require(t > 0.0, "resolvent parameter must be positive");
  return impl_->resolvent(t, z);
}
double MonotoneGraph::resolvent_slope(double t, double z) const {
  require(t > 0.0, "resolvent parameter must be positive");
  return impl_->resolvent_slope(t, z);
}
Interval MonotoneGraph::inverse_values(double r) const { return impl_->inverse_values(r); }
double MonotoneGraph::clamp_to_domain(double r) const { return impl_->clamp_to_domain(r); }

namespace {

struct PowerImpl final : MonotoneGraph::Impl {
  double p;

  explicit PowerImpl(double p_in) : p(p_in) {
    name = "power(" + std::to_string(p) + ")";
  }
  double section(double r) const { return std::copysign(std::pow(std::abs(r), p), r); }
  double min_section(double r) const override { return section(r); }
  double j_star(double r) const override {
    return std::pow(std::abs(r), p + 1.0) / (p + 1.0);
  }
  double resolvent(double t, double z) const override {
    if (p == 1.0) return z / (1.0 + t);
    if (z == 0.0) return 0.0;
    // Root shares the sign of z and |x| <= |z|.
    double lo = std::min(0.0, z), hi = std::max(0.0, z);
    auto s = [this](double x) { return section(x); };
    auto ds = [this](double x) {
      return x == 0.0 ? (p > 1.0 ? 0.0 : kInf) : p * std::pow(std::abs(x), p - 1.0);
    };
    return solve_scalar(s, ds, t, z, lo, hi);
  }
  double resolvent_slope(double t, double z) const override {
    double x = resolvent(t, z);
    if (p == 1.0) return 1.0 / (1.0 + t);
    if (x == 0.0) return p > 1.0 ? 1.0 : 0.0;
    return 1.0 / (1.0 + t * p * std::pow(std::abs(x), p - 1.0));
  }
  Interval inverse_values(double r) const override { return Interval::point(section(r)); }
};

struct LogarithmicImpl final : MonotoneGraph::Impl {
  LogarithmicImpl() {
    name = "logarithmic";
    lower = -1.0;
    upper = 1.0;
  }
  static double section(double r) { return std::log1p(r) - std::log1p(-r); }
  double min_section(double r) const override {
    require(r > -1.0 && r < 1.0, "logarithmic graph has no section at |r| >= 1");
    return section(r);
  }
  double j_star(double r) const override {
    if (r < -1.0 || r > 1.0) return kInf;
    auto term = [](double a) { return a <= 0.0 ? 0.0 : a * std::log(a); };
    return term(1.0 + r) + term(1.0 - r);
  }
  double resolvent(double t, double z) const override {
    const double edge = 1.0 - 1e-16;
    auto s = [](double x) { return section(x); };
    auto ds = [](double x) { return 1.0 / (1.0 + x) + 1.0 / (1.0 - x); };
    return solve_scalar(s, ds, t, z, -edge, edge);
  }
  double resolvent_slope(double t, double z) const override {
    double x = resolvent(t, z);
    return 1.0 / (1.0 + t * (1.0 / (1.0 + x) + 1.0 / (1.0 - x)));
  }
  Interval inverse_values(double r) const override {
    if (r <= -1.0 || r >= 1.0) return Interval::empty();
    return Interval::point(section(r));
  }
  double clamp_to_domain(double r) const override {
    const double margin = 1e-12;
    return std::clamp(r, -1.0 + margin, 1.0 - margin);
  }
};

struct ObstacleImpl final : MonotoneGraph::Impl {
  ObstacleImpl() {
    name = "obstacle";
    lower = -1.0;
    upper = 1.0;
  }
  double min_section(double r) const override {
    require(r >= -1.0 && r <= 1.0, "obstacle graph has no section at |r| > 1");
    return 0.0;
  }
  double j_star(double r) const override {
    return (r >= -1.0 && r <= 1.0) ? 0.0 : kInf;
  }
  double resolvent(double, double z) const override { return std::clamp(z, -1.0, 1.0); }
  double resolvent_slope(double, double z) const override {
    return (z > -1.0 && z < 1.0) ? 1.0 : 0.0;
  }
  Interval inverse_values(double r) const override {
    if (r < -1.0 || r > 1.0) return Interval::empty();
    if (r == -1.0) return {-kInf, 0.0, false};
    if (r == 1.0) return {0.0, kInf, false};
    return Interval::point(0.0);
  }
};

struct StefanImpl final : MonotoneGraph::Impl {
  StefanImpl() { name = "stefan"; }
  double min_section(double r) const override {
    if (r < 0.0) return r;
    if (r <= 1.0) return 0.0;
    return r - 1.0;
  }
  double j_star(double r) const override {
    if (r < 0.0) return 0.5 * r * r;
    if (r <= 1.0) return 0.0;
    return 0.5 * (r - 1.0) * (r - 1.0);
  }
  double resolvent(double t, double z) const override {
    if (z < 0.0) return z / (1.0 + t);
    if (z <= 1.0) return z;
    return (z + t) / (1.0 + t);
  }
  double resolvent_slope(double t, double z) const override {
    return (z >= 0.0 && z <= 1.0) ? 1.0 : 1.0 / (1.0 + t);
  }
  Interval inverse_values(double r) const override {
    return Interval::point(min_section(r));
  }
};

struct HeleShawImpl final : MonotoneGraph::Impl {
  HeleShawImpl() {
    name = "hele_shaw";
    lower = 0.0;
    upper = 1.0;
  }
  double min_section(double r) const override {
    require(r >= 0.0 && r <= 1.0, "hele_shaw graph has no section outside [0, 1]");
    return 0.0;
  }
  double j_star(double r) const override {
    return (r >= 0.0 && r <= 1.0) ? 0.0 : kInf;
  }
  double resolvent(double, double z) const override { return std::clamp(z, 0.0, 1.0); }
  double resolvent_slope(double, double z) const override {
    return (z > 0.0 && z < 1.0) ? 1.0 : 0.0;
  }
  Interval inverse_values(double r) const override {
    if (r < 0.0 || r > 1.0) return Interval::empty();
    if (r == 0.0) return {-kInf, 0.0, false};
    if (r == 1.0) return {0.0, kInf, false};
    return Interval::point(0.0);
  }
};

struct CustomImpl final : MonotoneGraph::Impl {
  std::function<double(double)> section;

  CustomImpl(std::string n, std::function<double(double)> s, double lo, double hi)
      : section(std::move(s)) {
    name = std::move(n);
    lower = lo;
    upper = hi;
    require(lo < hi, "custom graph needs lower < upper");
  }
  double interior(double r) const {
    const double span = std::min(upper - lower, 1.0);
    const double margin = 1e-12 * std::max(1.0, span);
    return std::clamp(r, std::isfinite(lower) ? lower + margin : r,
                      std::isfinite(upper) ? upper - margin : r);
  }
  double min_section(double r) const override {
    require(r >= lower && r <= upper, "argument outside the domain of " + name);
    return section(interior(r));
  }
  double j_star(double r) const override {
    if (r < lower || r > upper) return kInf;
    // Composite Simpson integral of the min section from 0 to r.
    const double a = interior(0.0), b = interior(r);
    const int panels = 200;
    const double h = (b - a) / (2 * panels);
    if (h == 0.0) return 0.0;
    double sum = section(a) + section(b);
    for (int i = 1; i < 2 * panels; ++i)
      sum += section(a + h * i) * (i % 2 == 1 ? 4.0 : 2.0);
    return sum * h / 3.0;
  }
  double resolvent(double t, double z) const override {
    const double r = std::max(1.0, std::abs(z));
    auto phi = [&](double x) { return x + t * section(interior(x)) - z; };
    double lo = std::isfinite(lower) ? lower : -r;
    double hi = std::isfinite(upper) ? upper : r;
    // Infinite sides get an expanding bracket; finite sides clamp inside
    // solve_scalar (vertical rays of the maximal monotone extension).
    if (!std::isfinite(lower))
      for (int k = 0; k < 300 && phi(lo) > 0.0; ++k) lo *= 2.0;
    if (!std::isfinite(upper))
      for (int k = 0; k < 300 && phi(hi) < 0.0; ++k) hi *= 2.0;
    return solve_scalar([this](double x) { return section(interior(x)); }, nullptr, t, z,
                        interior(lo), interior(hi));
  }
  double resolvent_slope(double t, double z) const override {
    const double h = 1e-7 * std::max(1.0, std::abs(z));
    double d = (resolvent(t, z + h) - resolvent(t, z - h)) / (2.0 * h);
    return std::clamp(d, 0.0, 1.0);
  }
  Interval inverse_values(double r) const override {
    // Sampled outer approximation: probes straddling r, extended to a full
    // ray at a domain endpoint. May overestimate across jump points.
    if (r < lower || r > upper) return Interval::empty();
    const double h = 1e-9 * std::max(1.0, std::abs(r));
    double lo = (std::isfinite(lower) && r - h <= lower) ? -kInf : section(interior(r - h));
    double hi = (std::isfinite(upper) && r + h >= upper) ? kInf : section(interior(r + h));
    return {lo, hi, false};
  }
};

}  // namespace

MonotoneGraph power_law(double p) {
  require(std::isfinite(p) && p > 0.0, "power-law exponent must be positive");
  return MonotoneGraph(std::make_shared<PowerImpl>(p));
}

MonotoneGraph logarithmic() { return MonotoneGraph(std::make_shared<LogarithmicImpl>()); }
MonotoneGraph obstacle() { return MonotoneGraph(std::make_shared<ObstacleImpl>()); }
MonotoneGraph stefan() { return MonotoneGraph(std::make_shared<StefanImpl>()); }
MonotoneGraph hele_shaw() { return MonotoneGraph(std::make_shared<HeleShawImpl>()); }

MonotoneGraph custom(std::string name, std::function<double(double)> min_section,
                     double lower, double upper) {
  return MonotoneGraph(
      std::make_shared<CustomImpl>(std::move(name), std::move(min_section), lower, upper));
}

double potential_energy(const PotentialSpec& spec, const Field& u, const Measure& nu) {
  require(static_cast<std::size_t>(u.size()) == nu.size(), "field size mismatch");
  double s = 0.0;
  for (Eigen::Index x = 0; x < u.size(); ++x) {
    double j = spec.graph.j_star(u[x]);
    if (!std::isfinite(j)) return kInf;
    s += nu.weights()[x] * (j - 0.5 * spec.c * u[x] * u[x]);
  }
  return s;
}

}  // namespace rws
