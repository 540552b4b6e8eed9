#pragma once

// Experiment harness: from one declarative config it builds the coefficient,
// the hierarchical basis, the compressed operator stack, solves against
// smooth and piecewise-constant right-hand sides, measures per-level energy
// errors against the global fine solution, and writes deterministic CSV
// artifacts plus a JSON report and SVG charts for re-plotting.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hslod/compress.hpp"
#include "hslod/oracle.hpp"

namespace hslod {

struct CoefficientSpec {
  std::string kind = "random";  // random | channel | constant
  double alpha = 1.0;
  double beta = 100.0;
  std::uint64_t seed = 7;
  // element grid of the random field; -1 = use the fine mesh
  int base_exponent = -1;
  std::string distribution = "loguniform";  // loguniform | uniform
};

struct RhsSpec {
  bool smooth = true;
  // sum of independent piecewise-constant fields on element grids
  // 2^0 .. 2^-piecewise_exponent, values uniform in [-1, 1]
  bool piecewise = false;
  int piecewise_exponent = 5;
  std::uint64_t seed = 1234;
};

struct CompressionSpec {
  int cg_iterations = 7;
  double cg_rtol = 0.0;  // 0 = always run the full iteration budget
  double epsilon = 1e-5;
};

struct ExperimentConfig {
  int dimension = 2;
  int coarse_exponent = 1;
  int levels = 4;  // deepest level index L
  int fine_exponent = 7;
  CoefficientSpec coefficient;
  std::vector<int> m{2};  // uniform when a single entry
  double delta_s = 0.5;
  std::string method = "hslod";  // hslod | hlod | unstabilized
  bool restrict_rows = false;
  CompressionSpec compression;
  std::string stage = "check";  // hat | check | bar | epsilon
  RhsSpec rhs;
  int threads = 1;  // 0 = hardware concurrency
  std::string out_dir = "out";
  bool export_matrices = false;

  void validate() const;  // throws ConfigError
  MeshHierarchy make_mesh() const;
  CoefficientField make_coefficient() const;
  HslodOptions make_options() const;
  OperatorStage make_stage() const;
  int effective_threads() const;
};

// JSON round trip; parsing validates and fills defaults for absent keys.
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);
// FNV-1a hash of the canonical serialization; stamped into every artifact.
std::uint64_t config_hash(const ExperimentConfig& config);

// f(x) = d pi^2 prod_k sin(pi x_k); for A = 1 the exact solution is
// prod_k sin(pi x_k).
ScalarField smooth_rhs(int dim);
ScalarField smooth_rhs_solution(int dim);

// Sum over exponents 0..max_exponent of independent piecewise-constant
// fields with values uniform in [-1, 1]; returned on the finest of those
// grids.  Per-exponent generator seeds derive from `seed`.
Q0Function piecewise_rhs(int dim, int max_exponent, std::uint64_t seed);

struct LevelErrors {
  std::string rhs_name;  // "smooth" | "piecewise"
  std::vector<double> rel_energy;  // per level 0..L
};

struct RunReport {
  ExperimentConfig config;
  std::uint64_t hash = 0;
  std::string coefficient_fingerprint;
  BasisQuality quality;
  TruncationReport truncation;
  std::vector<LevelErrors> errors;
  std::vector<std::int64_t> stage_nonzeros;  // hat, check, bar, epsilon
  std::int64_t n_epsilon = 0;
  double delta_cg_surrogate = 0.0;
  double max_off_block = 0.0;
  std::int64_t max_elements = 0;
  StageChainReport chain;
  bool chain_available = false;
  double build_seconds = 0.0;
  double stiffness_seconds = 0.0;
  double solve_seconds = 0.0;
};

// Full pipeline; writes errors*.csv, blocks.csv, nnz.csv, report.json and
// SVG charts into config.out_dir (created if missing, files replaced
// atomically).  CSV bytes depend only on the config.
RunReport run_experiment(const ExperimentConfig& config);

// Per-level condition numbers of the basis Gram blocks over a grid of
// (contrast, patch order) pairs on the channel coefficient.
struct ChannelTableRow {
  double beta = 0.0;
  int m = 0;
  std::vector<double> kappa;  // per level 0..L
};
struct ChannelTable {
  std::vector<double> H;  // level mesh sizes
  std::vector<ChannelTableRow> rows;
};

ChannelTable channel_table(const ExperimentConfig& base,
                           const std::vector<std::pair<double, int>>& grid);
// Two-significant-figure rendering, one row per (beta, m).
void write_channel_table_csv(const ChannelTable& table, const std::string& path);

// Minimal SVG line chart (values pre-transformed by the caller; tick labels
// rendered with %g).
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& xlabel, const std::string& ylabel,
                          const std::vector<PlotSeries>& series);

}  // namespace hslod
