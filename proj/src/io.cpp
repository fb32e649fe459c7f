#include "rws/io.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace rws::io {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> data_lines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

double to_double(const std::string& token, const std::filesystem::path& file) {
  try {
    std::size_t used = 0;
    double v = std::stod(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("bad number '" + token + "' in " + file.string());
  }
}

std::vector<std::string> split_tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> tokens;
  std::string t;
  while (ss >> t) tokens.push_back(t);
  return tokens;
}

/// Reads "node value" lines, inferring n; every node must appear once.
Field read_field_auto(const std::filesystem::path& file) {
  const auto lines = data_lines(file);
  if (lines.empty()) throw std::runtime_error("no data in " + file.string());
  std::map<std::size_t, double> entries;
  for (const auto& line : lines) {
    auto tokens = split_tokens(line);
    if (tokens.size() != 2)
      throw std::runtime_error("expected 'node value' in " + file.string() + ": " + line);
    const auto node = static_cast<std::size_t>(std::stoull(tokens[0]));
    if (!entries.emplace(node, to_double(tokens[1], file)).second)
      throw std::runtime_error("node " + tokens[0] + " repeats in " + file.string());
  }
  const std::size_t n = entries.rbegin()->first + 1;
  if (entries.size() != n)
    throw std::runtime_error(file.string() + " skips node indices (found " +
                             std::to_string(entries.size()) + " of " + std::to_string(n) + ")");
  Field f(static_cast<Eigen::Index>(n));
  for (const auto& [node, value] : entries) f[static_cast<Eigen::Index>(node)] = value;
  return f;
}

double json_double(const json& v) { return v.is_number() ? v.get<double>() : kNaN; }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& path) {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : base / p;
}

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& what) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw std::invalid_argument("unknown key '" + key + "' in " + what);
  }
}

std::function<double(double)> make_profile(const std::string& name, double radius) {
  require(radius > 0.0, "profile radius must be positive");
  if (name == "box") return [](double) { return 1.0; };
  if (name == "triangle")
    return [radius](double r) { return std::max(0.0, 1.0 - r / radius); };
  if (name == "gaussian") {
    const double s = radius / 3.0;
    return [s](double r) { return std::exp(-0.5 * r * r / (s * s)); };
  }
  throw std::invalid_argument("unknown profile '" + name +
                              "' (expected box, triangle or gaussian)");
}

RandomWalk build_preset(const json& spec) {
  check_keys(spec, {"type", "name", "n"}, "preset walk");
  const std::string name = spec.at("name").get<std::string>();
  const auto n = spec.at("n").get<std::size_t>();
  std::vector<WeightedEdge> edges;
  if (name == "path") {
    require(n >= 2, "path preset needs at least 2 nodes");
    for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, 1.0});
  } else if (name == "cycle") {
    require(n >= 3, "cycle preset needs at least 3 nodes");
    for (std::size_t i = 0; i < n; ++i) edges.push_back({i, (i + 1) % n, 1.0});
  } else if (name == "complete") {
    require(n >= 2, "complete preset needs at least 2 nodes");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) edges.push_back({i, j, 1.0});
  } else {
    throw std::invalid_argument("unknown preset '" + name +
                                "' (expected path, cycle or complete)");
  }
  return from_weighted_graph(edges, false, n);
}

std::vector<Eigen::VectorXd> read_points(const std::filesystem::path& file) {
  std::vector<Eigen::VectorXd> points;
  for (const auto& line : data_lines(file)) {
    auto tokens = split_tokens(line);
    if (tokens.empty()) continue;
    Eigen::VectorXd p(static_cast<Eigen::Index>(tokens.size()));
    for (std::size_t i = 0; i < tokens.size(); ++i)
      p[static_cast<Eigen::Index>(i)] = to_double(tokens[i], file);
    points.push_back(std::move(p));
  }
  require(!points.empty(), "no points in " + file.string());
  return points;
}

MonotoneGraph make_graph(const RunConfig& cfg) {
  if (cfg.potential == "power") return power_law(cfg.power_p);
  if (cfg.potential == "logarithmic") return logarithmic();
  if (cfg.potential == "obstacle") return obstacle();
  if (cfg.potential == "stefan") return stefan();
  if (cfg.potential == "hele_shaw") return hele_shaw();
  throw std::invalid_argument("unknown potential '" + cfg.potential +
                              "' (expected power, logarithmic, obstacle, stefan or hele_shaw)");
}

Field build_u0(const json& spec, const RandomWalk& walk, const MonotoneGraph& graph,
               const std::filesystem::path& base_dir) {
  const auto n = static_cast<Eigen::Index>(walk.size());
  if (spec.is_null()) return Field::Zero(n);
  require(spec.is_object() && spec.contains("type"), "u0 spec must carry a type");
  const std::string type = spec.at("type").get<std::string>();
  if (type == "constant") {
    check_keys(spec, {"type", "value"}, "u0 spec");
    return Field::Constant(n, spec.at("value").get<double>());
  }
  if (type == "values") {
    check_keys(spec, {"type", "values"}, "u0 spec");
    const auto values = spec.at("values").get<std::vector<double>>();
    require(values.size() == walk.size(), "u0 values length does not match the node count");
    Field f(n);
    for (Eigen::Index i = 0; i < n; ++i) f[i] = values[static_cast<std::size_t>(i)];
    return f;
  }
  if (type == "file") {
    check_keys(spec, {"type", "path"}, "u0 spec");
    return read_field(resolve(base_dir, spec.at("path").get<std::string>()), walk.size());
  }
  if (type == "two_phase_split") {
    check_keys(spec, {"type", "low", "high"}, "u0 spec");
    const double lo =
        spec.value("low", std::isfinite(graph.lower()) ? graph.lower() : -1.0);
    const double hi =
        spec.value("high", std::isfinite(graph.upper()) ? graph.upper() : 1.0);
    Field f(n);
    const Eigen::Index half = (n + 1) / 2;
    for (Eigen::Index i = 0; i < n; ++i) f[i] = i < half ? hi : lo;
    return f;
  }
  if (type == "random_uniform") {
    check_keys(spec, {"type", "low", "high", "seed"}, "u0 spec");
    require(spec.contains("seed"), "random_uniform u0 needs an explicit seed");
    return deterministic_uniform_field(walk.size(), spec.at("low").get<double>(),
                                       spec.at("high").get<double>(),
                                       spec.at("seed").get<std::uint64_t>());
  }
  throw std::invalid_argument("unknown u0 type '" + type + "'");
}

json record_to_json(const StepRecord& r) {
  return json{{"step", r.step},
              {"t", r.t},
              {"mass", r.mass},
              {"energy", r.energy},
              {"grad_mu_sq", r.grad_mu_sq},
              {"lp2", r.lp2},
              {"lp4", r.lp4},
              {"lpinf", r.lpinf},
              {"umin", r.umin},
              {"umax", r.umax},
              {"delta_norm", r.delta_norm},
              {"residual", r.residual},
              {"iterations", r.iterations}};
}

StepRecord record_from_json(const json& j) {
  StepRecord r;
  r.step = j.at("step").get<long>();
  r.t = json_double(j.at("t"));
  r.mass = json_double(j.at("mass"));
  r.energy = json_double(j.at("energy"));
  r.grad_mu_sq = json_double(j.at("grad_mu_sq"));
  r.lp2 = json_double(j.at("lp2"));
  r.lp4 = json_double(j.at("lp4"));
  r.lpinf = json_double(j.at("lpinf"));
  r.umin = json_double(j.at("umin"));
  r.umax = json_double(j.at("umax"));
  r.delta_norm = json_double(j.at("delta_norm"));
  r.residual = json_double(j.at("residual"));
  r.iterations = j.at("iterations").get<int>();
  return r;
}

std::string snapshot_name(const char* prefix, long step) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%08ld.txt", prefix, step);
  return buf;
}

std::string timestamp_utc() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json tolerances_to_json(const CHTolerances& t) {
  return json{{"resolvent_tol", t.resolvent_tol},
              {"resolvent_max_iterations", t.resolvent_max_iterations},
              {"picard_tol", t.picard_tol},
              {"picard_max_sweeps", t.picard_max_sweeps},
              {"measure_match", t.measure_match}};
}

CHTolerances tolerances_from_json(const json& j) {
  CHTolerances t;
  if (j.is_null()) return t;
  check_keys(j,
             {"resolvent_tol", "resolvent_max_iterations", "picard_tol", "picard_max_sweeps",
              "measure_match"},
             "tolerances");
  t.resolvent_tol = j.value("resolvent_tol", t.resolvent_tol);
  t.resolvent_max_iterations = j.value("resolvent_max_iterations", t.resolvent_max_iterations);
  t.picard_tol = j.value("picard_tol", t.picard_tol);
  t.picard_max_sweeps = j.value("picard_max_sweeps", t.picard_max_sweeps);
  t.measure_match = j.value("measure_match", t.measure_match);
  require(t.resolvent_tol > 0.0 && t.picard_tol > 0.0 && t.measure_match > 0.0,
          "tolerances must be positive");
  require(t.resolvent_max_iterations > 0 && t.picard_max_sweeps > 0,
          "iteration budgets must be positive");
  return t;
}

}  // namespace

RandomWalk read_edge_list_walk(const std::filesystem::path& file, bool allow_loops) {
  std::vector<WeightedEdge> edges;
  std::vector<std::string> labels;
  std::map<std::string, std::size_t> index;
  auto node_of = [&](const std::string& token) {
    auto [it, inserted] = index.emplace(token, labels.size());
    if (inserted) labels.push_back(token);
    return it->second;
  };
  for (const auto& line : data_lines(file)) {
    auto tokens = split_tokens(line);
    if (tokens.size() != 3)
      throw std::runtime_error("expected 'x y w' in " + file.string() + ": " + line);
    const std::size_t x = node_of(tokens[0]);
    const std::size_t y = node_of(tokens[1]);
    edges.push_back({x, y, to_double(tokens[2], file)});
  }
  require(!edges.empty(), "no edges in " + file.string());
  return from_weighted_graph(edges, allow_loops, labels.size(), labels);
}

SparseRowMatrix read_kernel(const std::filesystem::path& file) {
  const auto lines = data_lines(file);
  require(!lines.empty(), "no data in " + file.string());
  auto header = split_tokens(lines[0]);
  if (header.size() != 3)
    throw std::runtime_error("expected header 'n n nnz' in " + file.string());
  const auto rows = static_cast<Eigen::Index>(std::stoull(header[0]));
  const auto cols = static_cast<Eigen::Index>(std::stoull(header[1]));
  const auto nnz = static_cast<std::size_t>(std::stoull(header[2]));
  require(rows == cols && rows > 0, "kernel must be square and nonempty");
  if (lines.size() - 1 != nnz)
    throw std::runtime_error("header announces " + std::to_string(nnz) + " entries, found " +
                             std::to_string(lines.size() - 1) + " in " + file.string());
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(nnz);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    auto tokens = split_tokens(lines[k]);
    if (tokens.size() != 3)
      throw std::runtime_error("expected 'row col value' in " + file.string() + ": " + lines[k]);
    const auto r = static_cast<Eigen::Index>(std::stoull(tokens[0]));
    const auto c = static_cast<Eigen::Index>(std::stoull(tokens[1]));
    require(r < rows && c < cols, "kernel entry out of range in " + file.string());
    triplets.emplace_back(r, c, to_double(tokens[2], file));
  }
  SparseRowMatrix kernel(rows, cols);
  kernel.setFromTriplets(triplets.begin(), triplets.end());
  return kernel;
}

void write_kernel(const std::filesystem::path& file, const SparseRowMatrix& kernel) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << std::setprecision(17);
  out << kernel.rows() << ' ' << kernel.cols() << ' ' << kernel.nonZeros() << '\n';
  for (Eigen::Index x = 0; x < kernel.rows(); ++x)
    for (SparseRowMatrix::InnerIterator it(kernel, x); it; ++it)
      out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
  if (!out) throw std::runtime_error("write failed for " + file.string());
}

Field read_field(const std::filesystem::path& file, std::size_t n) {
  Field f = read_field_auto(file);
  if (static_cast<std::size_t>(f.size()) != n)
    throw std::runtime_error(file.string() + " holds " + std::to_string(f.size()) +
                             " values, expected " + std::to_string(n));
  return f;
}

void write_field(const std::filesystem::path& file, const Field& f) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < f.size(); ++i) out << i << ' ' << f[i] << '\n';
  if (!out) throw std::runtime_error("write failed for " + file.string());
}

Field deterministic_uniform_field(std::size_t n, double a, double b, std::uint64_t seed) {
  require(b >= a, "uniform range is inverted");
  Field f(static_cast<Eigen::Index>(n));
  std::uint64_t state = seed;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z = z ^ (z >> 31);
    f[i] = a + (b - a) * (static_cast<double>(z >> 11) * 0x1.0p-53);
  }
  return f;
}

json RunConfig::to_json() const {
  json j{{"walk_m1", walk_m1},
         {"walk_m2", walk_m2},
         {"potential", potential},
         {"power_p", power_p},
         {"c", c},
         {"delta", delta},
         {"u0", u0},
         {"scheme", scheme},
         {"tau", tau},
         {"T", T},
         {"snapshot_stride", snapshot_stride},
         {"tolerances", tolerances_to_json(tolerances)},
         {"output_dir", output_dir}};
  if (restrict_nodes) j["restrict_nodes"] = *restrict_nodes;
  return j;
}

RunConfig parse_run_config(const json& j) {
  require(j.is_object(), "run config must be a JSON object");
  check_keys(j,
             {"walk_m1", "walk_m2", "potential", "power_p", "c", "delta", "u0", "scheme", "tau",
              "T", "snapshot_stride", "tolerances", "restrict_nodes", "output_dir"},
             "run config");
  RunConfig cfg;
  require(j.contains("walk_m1"), "run config needs walk_m1");
  cfg.walk_m1 = j.at("walk_m1");
  cfg.walk_m2 = j.value("walk_m2", json{{"type", "same_as_m1"}});
  cfg.potential = j.value("potential", cfg.potential);
  cfg.power_p = j.value("power_p", cfg.power_p);
  cfg.c = j.value("c", cfg.c);
  cfg.delta = j.value("delta", cfg.delta);
  cfg.u0 = j.value("u0", json());
  cfg.scheme = j.value("scheme", cfg.scheme);
  cfg.tau = j.value("tau", cfg.tau);
  cfg.T = j.value("T", cfg.T);
  cfg.snapshot_stride = j.value("snapshot_stride", cfg.snapshot_stride);
  cfg.tolerances = tolerances_from_json(j.value("tolerances", json()));
  if (j.contains("restrict_nodes") && !j.at("restrict_nodes").is_null())
    cfg.restrict_nodes = j.at("restrict_nodes").get<std::vector<std::size_t>>();
  cfg.output_dir = j.value("output_dir", cfg.output_dir);

  require(cfg.tau > 0.0, "tau must be positive");
  require(cfg.T > 0.0, "T must be positive");
  require(cfg.snapshot_stride >= 1, "snapshot_stride must be at least 1");
  require(cfg.delta > 0.0, "delta must be positive");
  require(cfg.c >= 0.0, "c must be nonnegative");
  require(cfg.power_p > 0.0, "power_p must be positive");
  scheme_from_string(cfg.scheme);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  json j = json::parse(in);
  if (j.contains("config") && j.at("config").is_object()) j = j.at("config");
  return parse_run_config(j);
}

RandomWalk build_walk(const json& spec, const std::filesystem::path& base_dir) {
  require(spec.is_object() && spec.contains("type"), "walk spec must carry a type");
  const std::string type = spec.at("type").get<std::string>();
  if (type == "edge_list") {
    check_keys(spec, {"type", "path", "allow_loops"}, "edge_list walk");
    return read_edge_list_walk(resolve(base_dir, spec.at("path").get<std::string>()),
                               spec.value("allow_loops", true));
  }
  if (type == "markov_kernel") {
    check_keys(spec, {"type", "path", "measure_path"}, "markov_kernel walk");
    SparseRowMatrix kernel = read_kernel(resolve(base_dir, spec.at("path").get<std::string>()));
    std::optional<Eigen::VectorXd> pi;
    if (spec.contains("measure_path"))
      pi = read_field(resolve(base_dir, spec.at("measure_path").get<std::string>()),
                      static_cast<std::size_t>(kernel.rows()));
    return from_markov_kernel(Eigen::MatrixXd(kernel), pi);
  }
  if (type == "kernel_with_measure") {
    check_keys(spec, {"type", "kernel_path", "measure_path"}, "kernel_with_measure walk");
    SparseRowMatrix kernel =
        read_kernel(resolve(base_dir, spec.at("kernel_path").get<std::string>()));
    Field nu = read_field(resolve(base_dir, spec.at("measure_path").get<std::string>()),
                          static_cast<std::size_t>(kernel.rows()));
    NodeSpace space;
    space.n = static_cast<std::size_t>(kernel.rows());
    return RandomWalk(std::move(space), std::move(kernel), Measure(nu));
  }
  if (type == "grid_kernel") {
    check_keys(spec, {"type", "dim", "cells", "h", "radius", "profile", "include_center"},
               "grid_kernel walk");
    GridSpec grid;
    grid.dim = spec.value("dim", 1);
    grid.cells = spec.at("cells").get<std::vector<std::size_t>>();
    grid.h = spec.value("h", 1.0);
    const double radius = spec.at("radius").get<double>();
    auto profile = make_profile(spec.value("profile", "triangle"), radius);
    return from_grid_kernel(grid, profile, radius, spec.value("include_center", false));
  }
  if (type == "point_cloud") {
    check_keys(spec, {"type", "path", "radius", "profile"}, "point_cloud walk");
    auto points = read_points(resolve(base_dir, spec.at("path").get<std::string>()));
    const double radius = spec.at("radius").get<double>();
    auto profile = make_profile(spec.value("profile", "box"), radius);
    auto eta = [profile, radius](double r) { return r <= radius ? profile(r) : 0.0; };
    return from_point_cloud(points, eta);
  }
  if (type == "preset") return build_preset(spec);
  if (type == "same_as_m1")
    throw std::invalid_argument("same_as_m1 is only meaningful for walk_m2");
  throw std::invalid_argument("unknown walk type '" + type + "'");
}

CHProblem build_problem(const RunConfig& cfg, const std::filesystem::path& base_dir) {
  RandomWalk m1 = build_walk(cfg.walk_m1, base_dir);
  const bool shared_walk =
      cfg.walk_m2.is_object() && cfg.walk_m2.value("type", "") == "same_as_m1";
  RandomWalk m2 = shared_walk ? m1 : build_walk(cfg.walk_m2, base_dir);
  if (cfg.restrict_nodes) {
    NodeSet omega = NodeSet::from_indices(m1.size(), *cfg.restrict_nodes);
    m1 = restrict_walk(m1, omega);
    m2 = restrict_walk(m2, omega);
  }
  MonotoneGraph graph = make_graph(cfg);
  Field u0 = build_u0(cfg.u0, m1, graph, base_dir);
  CHProblem prob{std::move(m1),
                 std::move(m2),
                 PotentialSpec{std::move(graph), cfg.c, cfg.delta},
                 std::move(u0),
                 scheme_from_string(cfg.scheme),
                 cfg.tau,
                 cfg.T,
                 cfg.snapshot_stride,
                 cfg.tolerances};
  return prob;
}

json validation_json(const CHValidation& val) {
  return json{{"ok", val.ok},
              {"shared_measure", val.shared_measure},
              {"measure_ratio_max", val.measure_ratio_max},
              {"embedding_m", val.embedding_m},
              {"embedding_M", val.embedding_M},
              {"gap1", val.gap1},
              {"gap2", val.gap2},
              {"mass_window",
               {{"ok", val.mass_window.ok},
                {"lower", val.mass_window.lower},
                {"upper", val.mass_window.upper},
                {"initial_mass", val.mass_window.initial_mass},
                {"message", val.mass_window.message}}},
              {"lipschitz",
               {{"l1", val.lipschitz.l1},
                {"l2", val.lipschitz.l2},
                {"analytic", val.lipschitz.analytic}}},
              {"errors", val.errors},
              {"notices", val.notices}};
}

json audit_json(const AuditReport& rep) {
  json checks = json::array();
  for (const auto& c : rep.checks)
    checks.push_back(json{{"name", c.name},
                          {"pass", c.pass},
                          {"applicable", c.applicable},
                          {"worst", c.worst},
                          {"worst_step", c.worst_step},
                          {"detail", c.detail}});
  return json{{"all_pass", rep.all_pass}, {"checks", checks}};
}

json asymptotics_json(const AsymptoticsReport& rep) {
  json eq{{"is_equilibrium", rep.equilibrium.is_equilibrium},
          {"domain_violation", rep.equilibrium.domain_violation},
          {"residual", rep.equilibrium.residual},
          {"binding_count", rep.equilibrium.binding_nodes.count()}};
  if (rep.equilibrium.mu_const)
    eq["mu_const"] = *rep.equilibrium.mu_const;
  else
    eq["mu_const"] = nullptr;
  return json{{"gap2", rep.gap2},
              {"gap2_defined", rep.gap2_defined},
              {"predicts_mean_convergence", rep.predicts_mean_convergence},
              {"steady", rep.steady},
              {"steady_since_step", rep.steady_since_step},
              {"steady_rate", rep.steady_rate},
              {"pure_phase_margin", rep.pure_phase_margin},
              {"equilibrium", eq}};
}

Trajectory read_trajectory(const std::filesystem::path& dir) {
  const auto diag_path = dir / "diagnostics.jsonl";
  std::ifstream in(diag_path);
  if (!in) throw std::runtime_error("cannot open " + diag_path.string());

  Trajectory traj;
  bool complete = false;
  std::string line;
  long last_step = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.contains("event")) {
      if (j.at("event") == "complete") {
        complete = true;
      } else {
        throw std::runtime_error("trajectory in " + dir.string() +
                                 " is incomplete; last valid step is " +
                                 std::to_string(last_step) +
                                 (j.contains("error")
                                      ? " (" + j.at("error").get<std::string>() + ")"
                                      : ""));
      }
      break;
    }
    traj.steps.push_back(record_from_json(j));
    last_step = traj.steps.back().step;
  }
  if (!complete)
    throw std::runtime_error("trajectory in " + dir.string() +
                             " is incomplete; last valid step is " + std::to_string(last_step));
  require(!traj.steps.empty(), "trajectory in " + dir.string() + " holds no steps");

  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  json manifest = json::parse(mf);
  RunConfig cfg = parse_run_config(manifest.at("config"));
  traj.tau = cfg.tau;
  traj.snapshot_stride = cfg.snapshot_stride;
  traj.t_final = traj.steps.back().t;
  if (manifest.contains("notes")) traj.notes = manifest.at("notes").get<std::vector<std::string>>();

  std::map<long, std::filesystem::path> u_files, v_files, mu_files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    auto parse_step = [&](const std::string& prefix) -> std::optional<long> {
      if (name.size() <= prefix.size() + 4 || name.rfind(prefix, 0) != 0) return std::nullopt;
      if (name.substr(name.size() - 4) != ".txt") return std::nullopt;
      const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - 4);
      if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
        return std::nullopt;
      return std::stol(digits);
    };
    if (auto s = parse_step("snapshot_v_"))
      v_files[*s] = entry.path();
    else if (auto s2 = parse_step("snapshot_mu_"))
      mu_files[*s2] = entry.path();
    else if (auto s3 = parse_step("snapshot_"))
      u_files[*s3] = entry.path();
  }
  require(!u_files.empty(), "no snapshots in " + dir.string());
  for (const auto& [step, path] : u_files) {
    traj.snapshot_steps.push_back(step);
    traj.snapshots.push_back(read_field_auto(path));
    if (auto it = v_files.find(step); it != v_files.end())
      traj.snapshots_v.push_back(read_field_auto(it->second));
    if (auto it = mu_files.find(step); it != mu_files.end())
      traj.snapshots_mu.push_back(read_field_auto(it->second));
  }
  return traj;
}

CHProblem read_problem(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  json manifest = json::parse(mf);
  RunConfig cfg = parse_run_config(manifest.at("config"));
  return build_problem(cfg, dir);
}

int cmd_validate(const std::filesystem::path& config_file, std::ostream& out) {
  try {
    RunConfig cfg = load_run_config(config_file);
    CHProblem prob = build_problem(cfg, config_file.parent_path());
    CHValidation val = validate(prob);
    out << (val.ok ? "valid" : "invalid") << ": " << prob.m1.size() << " nodes, scheme "
        << to_string(prob.scheme) << ", potential " << prob.potential.graph.name() << "\n";
    out << "  gap1 = " << val.gap1 << ", gap2 = " << val.gap2 << "\n";
    out << "  mass " << val.mass_window.initial_mass << " in (" << val.mass_window.lower << ", "
        << val.mass_window.upper << ")\n";
    out << "  lipschitz l1 = " << val.lipschitz.l1 << ", l2 = " << val.lipschitz.l2
        << ", analytic = " << val.lipschitz.analytic << "\n";
    for (const auto& e : val.errors) out << "  error: " << e << "\n";
    for (const auto& n : val.notices) out << "  notice: " << n << "\n";
    return val.ok ? 0 : 2;
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_run(const RunConfig& cfg, const std::filesystem::path& base_dir, std::ostream& out) {
  std::filesystem::path out_dir = resolve(base_dir, cfg.output_dir);
  try {
    CHProblem prob = build_problem(cfg, base_dir);
    CHValidation val = validate(prob);

    std::filesystem::create_directories(out_dir);
    write_kernel(out_dir / "m1_kernel.txt", prob.m1.kernel());
    write_field(out_dir / "m1_measure.txt", prob.m1.nu().weights());
    write_kernel(out_dir / "m2_kernel.txt", prob.m2.kernel());
    write_field(out_dir / "m2_measure.txt", prob.m2.nu().weights());
    write_field(out_dir / "u0.txt", prob.u0);

    json resolved = cfg.to_json();
    resolved["walk_m1"] = json{{"type", "kernel_with_measure"},
                               {"kernel_path", "m1_kernel.txt"},
                               {"measure_path", "m1_measure.txt"}};
    resolved["walk_m2"] = json{{"type", "kernel_with_measure"},
                               {"kernel_path", "m2_kernel.txt"},
                               {"measure_path", "m2_measure.txt"}};
    resolved["u0"] = json{{"type", "file"}, {"path", "u0.txt"}};
    resolved.erase("restrict_nodes");
    resolved["output_dir"] = ".";

    json manifest{{"tool", "rwsim"},
                  {"format", 1},
                  {"created_at", timestamp_utc()},
                  {"config", resolved},
                  {"validation", validation_json(val)}};
    {
      std::ofstream mf(out_dir / "manifest.json");
      mf << manifest.dump(2) << "\n";
    }

    if (!val.ok) {
      for (const auto& e : val.errors) out << "error: " << e << "\n";
      return 2;
    }
    for (const auto& n : val.notices) out << "notice: " << n << "\n";

    Trajectory traj;
    try {
      traj = rws::solve(prob);
    } catch (const std::exception& e) {
      std::ofstream df(out_dir / "diagnostics.jsonl");
      df << json{{"event", "incomplete"}, {"error", e.what()}}.dump() << "\n";
      out << "run failed: " << e.what() << "\n";
      return 3;
    }

    {
      std::ofstream df(out_dir / "diagnostics.jsonl");
      for (const auto& r : traj.steps) df << record_to_json(r).dump() << "\n";
      df << json{{"event", "complete"}}.dump() << "\n";
    }
    for (std::size_t j = 0; j < traj.snapshot_steps.size(); ++j) {
      const long step = traj.snapshot_steps[j];
      write_field(out_dir / snapshot_name("snapshot_", step), traj.snapshots[j]);
      if (j < traj.snapshots_v.size())
        write_field(out_dir / snapshot_name("snapshot_v_", step), traj.snapshots_v[j]);
      if (j < traj.snapshots_mu.size())
        write_field(out_dir / snapshot_name("snapshot_mu_", step), traj.snapshots_mu[j]);
    }
    if (!traj.notes.empty()) {
      manifest["notes"] = traj.notes;
      std::ofstream mf(out_dir / "manifest.json");
      mf << manifest.dump(2) << "\n";
    }

    const auto& last = traj.steps.back();
    out << "completed " << last.step << " steps to t = " << last.t << "; mass " << last.mass
        << ", energy " << last.energy << "\n";
    out << "wrote " << traj.snapshot_steps.size() << " snapshots to " << out_dir.string()
        << "\n";
    return 0;
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_analyze(const std::filesystem::path& trajectory_dir, int window, double tol,
                std::ostream& out) {
  try {
    CHProblem prob = read_problem(trajectory_dir);
    Trajectory traj = read_trajectory(trajectory_dir);
    AuditReport rep = audit(traj, prob);
    AsymptoticsReport asym = detect_steady_state(traj, prob, window, tol);

    {
      std::ofstream af(trajectory_dir / "audit.json");
      af << audit_json(rep).dump(2) << "\n";
    }
    {
      std::ofstream sf(trajectory_dir / "asymptotics.json");
      sf << asymptotics_json(asym).dump(2) << "\n";
    }

    for (const auto& c : rep.checks) {
      out << (c.pass ? "[pass] " : "[FAIL] ") << c.name;
      if (!c.applicable) out << " (not applicable)";
      out << ": " << c.detail << "\n";
    }
    out << "steady: " << (asym.steady ? "yes" : "no") << " (rate " << asym.steady_rate << ")";
    if (asym.gap2_defined)
      out << "; gap2 = " << asym.gap2 << ", mean convergence "
          << (asym.predicts_mean_convergence ? "expected" : "not implied");
    out << "\n";
    out << "equilibrium residual " << asym.equilibrium.residual << " ("
        << (asym.equilibrium.is_equilibrium ? "stationary" : "moving") << ")\n";
    return rep.all_pass ? 0 : 1;
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_sweep(const std::vector<std::filesystem::path>& config_files, int jobs,
              const char* self_exe, std::ostream& out) {
  require(self_exe != nullptr, "sweep needs the executable path");
  require(!config_files.empty(), "sweep needs at least one config");
  const std::size_t max_jobs = static_cast<std::size_t>(std::max(jobs, 1));

  std::map<pid_t, std::size_t> running;
  std::vector<int> codes(config_files.size(), -1);
  std::size_t next = 0;

  auto launch = [&](std::size_t idx) {
    pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      execl(self_exe, self_exe, "run", "--config", config_files[idx].c_str(),
            static_cast<char*>(nullptr));
      _exit(127);
    }
    running[pid] = idx;
  };

  while (next < config_files.size() || !running.empty()) {
    while (next < config_files.size() && running.size() < max_jobs) launch(next++);
    int status = 0;
    pid_t pid = wait(&status);
    if (pid < 0) break;
    auto it = running.find(pid);
    if (it == running.end()) continue;
    codes[it->second] = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
    running.erase(it);
  }

  int failures = 0;
  for (std::size_t i = 0; i < config_files.size(); ++i) {
    const bool ok = codes[i] == 0;
    if (!ok) ++failures;
    out << (ok ? "[pass] " : "[FAIL] ") << config_files[i].string() << " (exit " << codes[i]
        << ")\n";
  }
  out << failures << " of " << config_files.size() << " runs failed\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace rws::io
