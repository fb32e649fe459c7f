#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rws/analysis.hpp"
#include "rws/ch.hpp"
#include "rws/random_walk.hpp"
#include "rws/trajectory.hpp"

namespace rws::io {

using nlohmann::json;

// Plain text formats. Values are written with enough digits to round-trip
// bitwise. Lines starting with '#' and blank lines are ignored on read.

/// Edge list: one "x y w" triple per line; node ids are arbitrary tokens
/// mapped to indices in first-appearance order.
RandomWalk read_edge_list_walk(const std::filesystem::path& file, bool allow_loops = true);

/// Kernel matrix: header "n n nnz", then "row col value" triples (0-based).
SparseRowMatrix read_kernel(const std::filesystem::path& file);
void write_kernel(const std::filesystem::path& file, const SparseRowMatrix& kernel);

/// Measures and fields: one "node value" line per entry; node is an index.
Field read_field(const std::filesystem::path& file, std::size_t n);
void write_field(const std::filesystem::path& file, const Field& f);

/// Deterministic uniform draw in [a, b] from an explicit seed, independent
/// of the standard library's distribution implementation.
Field deterministic_uniform_field(std::size_t n, double a, double b, std::uint64_t seed);

/// Run configuration, resolved from JSON. Walk sources, initial datum and
/// tolerances keep their JSON form here; build_problem materializes them.
struct RunConfig {
  json walk_m1;
  json walk_m2;
  std::string potential = "obstacle";
  double power_p = 2.0;
  double c = 1.0;
  double delta = 1.0;
  json u0;
  std::string scheme = "imex_split";
  double tau = 1e-2;
  double T = 1.0;
  int snapshot_stride = 1;
  CHTolerances tolerances;
  std::optional<std::vector<std::size_t>> restrict_nodes;
  std::string output_dir = "out";

  json to_json() const;
};

RunConfig parse_run_config(const json& j);
/// Accepts either a run config or a manifest (whose "config" key is then
/// used), resolving relative paths against the file's directory.
RunConfig load_run_config(const std::filesystem::path& file);

RandomWalk build_walk(const json& spec, const std::filesystem::path& base_dir);
CHProblem build_problem(const RunConfig& cfg, const std::filesystem::path& base_dir);

json validation_json(const CHValidation& val);
json audit_json(const AuditReport& rep);
json asymptotics_json(const AsymptoticsReport& rep);

/// Reads back a trajectory written by cmd_run. Throws on an incomplete
/// stream, naming the last valid step.
Trajectory read_trajectory(const std::filesystem::path& dir);
CHProblem read_problem(const std::filesystem::path& dir);

// CLI entry points; each returns a process exit code.
int cmd_validate(const std::filesystem::path& config_file, std::ostream& out);
int cmd_run(const RunConfig& cfg, const std::filesystem::path& base_dir, std::ostream& out);
int cmd_analyze(const std::filesystem::path& trajectory_dir, int window, double tol,
                std::ostream& out);
int cmd_sweep(const std::vector<std::filesystem::path>& config_files, int jobs,
              const char* self_exe, std::ostream& out);

}  // namespace rws::io
