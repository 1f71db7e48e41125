#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedlrt/federation.hpp"

namespace fedlrt {

enum class ExperimentKind { Homogeneous, Heterogeneous };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment(const std::string& tag);

/// Flat run description. JSON config files and CLI flags use the same field
/// names; flags override file values.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::Homogeneous;
  Algorithm algorithm = Algorithm::FedLrtFull;
  std::size_t n = 20;
  std::size_t r_target = 4;     // heterogeneous targets are rank-1 per client
  std::size_t samples = 10000;
  std::size_t clients = 4;
  std::size_t local_iters = 20;  // s_*
  double lr = 1e-3;              // lambda
  double tau = 0.1;
  std::size_t rank_init = 0;     // 0 = floor(n/2)
  std::size_t rounds = 2000;     // T
  std::vector<std::uint64_t> seeds;  // default 1..20
  std::string out = "metrics.csv";

  void validate() const;
  std::size_t effective_rank_init() const;
  std::vector<std::uint64_t> effective_seeds() const;
};

ExperimentConfig default_config(ExperimentKind kind);

/// Reads a flat JSON document of ExperimentConfig fields.
ExperimentConfig load_config_file(const std::string& path);

/// One CSV row; the header is exactly these field names.
struct MetricsRow {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::size_t rank = 0;
  double global_loss = 0.0;  // global objective minus its oracle minimum
  double dist_to_oracle = 0.0;
  double max_drift = 0.0;
  double grad_norm = 0.0;
  std::uint64_t floats_down = 0;
  std::uint64_t floats_up = 0;
  std::uint64_t comm_rounds_cum = 0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  double l_hat = 0.0;            // smoothness estimate of the global loss
  double oracle_loss = 0.0;      // raw global loss at the minimizer
  double initial_gap = 0.0;      // gap at the initial iterate
  std::vector<MetricsRow> rows;
  std::vector<double> thetas;  // realised truncation threshold per round
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedRun> seeds;
  bool any_failed = false;
};

/// Runs every seed (in parallel), writes `config.out` (CSV) and
/// `config.out + ".meta.json"` atomically.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// In-memory variant without file output.
SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed);

/// Theorem checking over a written run (CSV + meta sibling).
struct TheoremRoundCheck {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  bool drift_ok = true;
  bool descent_ok = true;
};

struct TheoremReport {
  bool applicable = false;       // run used full variance correction
  bool drift_rate_ok = false;    // lambda <= 1/(L s_*)
  bool descent_rate_ok = false;  // lambda <= 1/(12 L s_*)
  std::string note;
  std::vector<TheoremRoundCheck> rounds;
  std::size_t drift_violations = 0;
  std::size_t descent_violations = 0;
  bool passed() const { return drift_violations == 0 && descent_violations == 0; }
};

TheoremReport check_theorems(const std::string& metrics_path);

/// Per-run comparison table (one row per metrics file).
struct SummaryRow {
  std::string algorithm;
  std::size_t clients = 0;
  double median_final_loss = 0.0;
  std::optional<std::size_t> median_rounds_to_threshold;  // loss <= 1e-4
  double median_cumulative_floats = 0.0;
};

std::vector<SummaryRow> compare_summary(const std::vector<std::string>& metrics_paths);
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);

/// CSV helpers (exposed for tests).
std::string metrics_header();
void write_metrics_csv(const std::string& path, const std::vector<SeedRun>& seeds);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

}  // namespace fedlrt
