#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gpmax/diagnostics.hpp"

namespace gpmax {

/// Parsed experiment configuration. Plain text, one `key = value` per line,
/// `#` starts a comment, lists are comma separated.
struct ExperimentConfig {
  int schema_version = 1;
  std::string kernel = "bargmann-fock";
  std::vector<double> kernel_params;
  int dimension = 2;
  std::vector<double> levels;
  std::optional<double> level_rule_c;       // u = c sqrt(log R)
  std::vector<double> windows;
  std::optional<double> window_rule_count;  // R with Kac-Rice expected count = value
  long replicates = 0;
  std::optional<std::uint64_t> seed;
  double grid_factor = 0.25;
  std::string tau_policy = "radius";  // radius: count pairs within tau(u) | none
  std::string output = "gpmax-out";
  int threads = 0;  // 0: all available cores
  long palm_pairs = 0;
};

struct ConfigIssue {
  std::string field;
  std::string message;
};

struct ValidationReport {
  std::vector<ConfigIssue> errors;
  std::vector<ConfigIssue> warnings;
  bool ok() const { return errors.empty(); }
};

/// Key/value pairs in file order; throws on unreadable files.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path);

/// Parses and checks a configuration text. Never throws for content errors.
ValidationReport parse_config(const std::vector<std::pair<std::string, std::string>>& kv,
                              ExperimentConfig& out);
ValidationReport validate_config(const std::string& path);

/// Thread count from the config, overridden by GP_THREADS.
int resolve_threads(int configured);

/// One (u, R) pair of an experiment.
struct CellSpec {
  int index = 0;
  double u = 0.0;
  double window_side = 0.0;
  std::uint64_t seed = 0;
};

std::vector<CellSpec> expand_cells(const ExperimentConfig& cfg);

struct ReplicateRecord {
  long replicate = 0;
  std::uint64_t seed = 0;
  long count = 0;
  long cluster_pairs = 0;
  bool unit_box_empty = false;
  long not_converged = 0;
};

struct CellResult {
  CellSpec cell;
  std::string status = "ok";
  std::string message;
  std::vector<ReplicateRecord> records;
  double lambda_hat = 0.0;
  double kac_rice_count = 0.0;
  std::vector<double> histogram;
  std::optional<TvResult> tv_empirical;
  std::optional<TvResult> tv_kac_rice;
  bool in_theorem_window = false;
  std::optional<AvoidanceResult> avoidance_unit_box;
  double cluster_pair_rate = 0.0;
  std::optional<McEstimate> palm_discrepancy;
  double seconds = 0.0;
};

/// Samples all replicates of a cell and computes its diagnostics.
CellResult run_cell(const ExperimentConfig& cfg, const CellSpec& cell, int threads);

/// JSON text of one cell's diagnostics report.
std::string cell_report_json(const CellResult& result);

/// Runs every cell and writes manifest.json, counts.csv and report.json to
/// cfg.output (or `output_override`). Returns the number of failed cells.
int run_experiment(const ExperimentConfig& cfg, const std::optional<std::string>& output_override = {});

/// CSV with one row per replicate: cell, u, R, replicate, seed, count, cluster_pairs.
std::string counts_csv(const std::vector<CellResult>& results);

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

}  // namespace gpmax
