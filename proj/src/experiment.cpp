#include "fedlrt/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fedlrt/least_squares.hpp"
#include "fedlrt/linalg.hpp"
#include "fedlrt/rng.hpp"

namespace fedlrt {

namespace {

constexpr double kLossThreshold = 1e-4;      // compare_summary convergence mark
constexpr double kSafetyFactor = 1.05;       // applied to the smoothness estimate
constexpr double kTheoremSlack = 1e-9;
constexpr std::size_t kSmoothnessIters = 200;
// Small-magnitude start: the factorization grows into the target's directions
// instead of having to unlearn O(1) random content, which keeps the rank
// trace clean under aggressive truncation.
constexpr double kInitScale = 1e-2;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::string to_string(ExperimentKind k) {
  return k == ExperimentKind::Homogeneous ? "homogeneous" : "heterogeneous";
}

ExperimentKind parse_experiment(const std::string& tag) {
  if (tag == "homogeneous") return ExperimentKind::Homogeneous;
  if (tag == "heterogeneous") return ExperimentKind::Heterogeneous;
  throw std::invalid_argument("unknown experiment tag: " + tag);
}

void ExperimentConfig::validate() const {
  if (n < 2) throw std::invalid_argument("config: n must be >= 2");
  if (samples < clients) throw std::invalid_argument("config: too few samples");
  if (clients < 1) throw std::invalid_argument("config: clients must be >= 1");
  if (local_iters < 1) throw std::invalid_argument("config: local_iters must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (tau < 0.0 || tau >= 1.0) throw std::invalid_argument("config: tau must lie in [0, 1)");
  if (experiment == ExperimentKind::Homogeneous && (r_target < 1 || r_target > n))
    throw std::invalid_argument("config: r_target out of range");
  const std::size_t r0 = effective_rank_init();
  if (r0 < 1 || 2 * r0 > n)
    throw std::invalid_argument("config: rank_init must satisfy 1 <= r <= n/2");
  if (effective_seeds().empty()) throw std::invalid_argument("config: seeds must be non-empty");
  if (out.empty()) throw std::invalid_argument("config: output path is empty");
}

std::size_t ExperimentConfig::effective_rank_init() const {
  return rank_init > 0 ? rank_init : std::max<std::size_t>(1, n / 2);
}

std::vector<std::uint64_t> ExperimentConfig::effective_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out_seeds(20);
  for (std::size_t i = 0; i < out_seeds.size(); ++i) out_seeds[i] = i + 1;
  return out_seeds;
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig cfg;
  cfg.experiment = kind;
  if (kind == ExperimentKind::Heterogeneous) {
    cfg.n = 10;
    cfg.r_target = 1;
    cfg.clients = 4;
    cfg.local_iters = 100;
    cfg.rounds = 500;
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: parse error in " + path + ": " + e.what());
  }

  ExperimentKind kind = ExperimentKind::Homogeneous;
  if (doc.contains("experiment")) kind = parse_experiment(doc.at("experiment").get<std::string>());
  ExperimentConfig cfg = default_config(kind);
  try {
    if (doc.contains("algorithm")) cfg.algorithm = parse_algorithm(doc.at("algorithm"));
    if (doc.contains("n")) cfg.n = doc.at("n").get<std::size_t>();
    if (doc.contains("r_target")) cfg.r_target = doc.at("r_target").get<std::size_t>();
    if (doc.contains("samples")) cfg.samples = doc.at("samples").get<std::size_t>();
    if (doc.contains("clients")) cfg.clients = doc.at("clients").get<std::size_t>();
    if (doc.contains("local_iters")) cfg.local_iters = doc.at("local_iters").get<std::size_t>();
    if (doc.contains("lr")) cfg.lr = doc.at("lr").get<double>();
    if (doc.contains("tau")) cfg.tau = doc.at("tau").get<double>();
    if (doc.contains("rank_init")) cfg.rank_init = doc.at("rank_init").get<std::size_t>();
    if (doc.contains("rounds")) cfg.rounds = doc.at("rounds").get<std::size_t>();
    if (doc.contains("seeds")) cfg.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    if (doc.contains("out")) cfg.out = doc.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: bad field in " + path + ": " + e.what());
  }
  return cfg;
}

namespace {

VarianceMode variance_mode_of(Algorithm a) {
  switch (a) {
    case Algorithm::FedLrtFull: return VarianceMode::Full;
    case Algorithm::FedLrtSimplified: return VarianceMode::Simplified;
    default: return VarianceMode::None;
  }
}

FederatedProblem build_problem(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.experiment == ExperimentKind::Homogeneous)
    return make_homogeneous_problem(cfg.n, cfg.r_target, cfg.samples, cfg.clients, seed);
  return make_heterogeneous_problem(cfg.n, cfg.samples, cfg.clients, seed);
}

}  // namespace

SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;

  FederatedProblem problem = build_problem(cfg, seed);

  FederationConfig fed;
  fed.clients = cfg.clients;
  fed.local_iterations = cfg.local_iters;
  fed.learning_rate = cfg.lr;
  fed.rounds = std::max<std::size_t>(1, cfg.rounds);
  fed.variance_mode = variance_mode_of(cfg.algorithm);
  fed.truncation = TruncationConfig{cfg.tau, 1, 0};
  fed.seed = seed;

  run.l_hat = estimate_smoothness(*problem.global, kSmoothnessIters, seed ^ 0x5eedf00dULL);
  run.oracle_loss = problem.oracle_loss;

  LowRankFactors factors =
      init_factors(cfg.n, cfg.effective_rank_init(), Rng(seed).fork(4).next_u64(), kInitScale);
  Matrix w = reconstruct(factors);
  run.initial_gap = problem.global->loss(w) - run.oracle_loss;

  CommLedger ledger;
  const bool low_rank = is_low_rank(cfg.algorithm);

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundStats stats;
    try {
      switch (cfg.algorithm) {
        case Algorithm::FedAvg:
          w = fedavg_round(w, fed, problem.clients, ledger, &stats);
          break;
        case Algorithm::FedLin:
          w = fedlin_round(w, fed, problem.clients, ledger, &stats);
          break;
        case Algorithm::FedLrtNone:
        case Algorithm::FedLrtFull:
          factors = fedlrt_round(factors, fed, problem.clients, ledger, &stats);
          break;
        case Algorithm::FedLrtSimplified:
          factors = fedlrt_simplified_round(factors, fed, problem.clients, ledger, &stats);
          break;
        case Algorithm::FedLrtNaive:
          factors = naive_fedlrt_round(factors, fed, problem.clients, ledger, &stats);
          break;
      }
    } catch (const std::exception& e) {
      run.failed = true;
      run.failure = e.what();
      break;
    }

    if (low_rank) w = reconstruct(factors);

    const double raw_loss = problem.global->loss(w);
    const double gap = raw_loss - run.oracle_loss;
    const double dist = frobenius_distance(w, problem.oracle);
    if (!std::isfinite(raw_loss) || !std::isfinite(dist) || !all_finite(w)) {
      run.failed = true;
      run.failure = "non-finite state at round " + std::to_string(t);
      break;
    }

    MetricsRow row;
    row.seed = seed;
    row.round = t;
    row.rank = stats.rank_after;
    row.global_loss = gap;
    row.dist_to_oracle = dist;
    row.max_drift = stats.max_drift;
    row.grad_norm = stats.grad_norm;
    row.floats_down = ledger.round_down();
    row.floats_up = ledger.round_up();
    row.comm_rounds_cum = ledger.total_round_trips();
    run.rows.push_back(row);
    run.thetas.push_back(stats.threshold);
  }
  return run;
}

std::string metrics_header() {
  return "seed,round,rank,global_loss,dist_to_oracle,max_drift,grad_norm,"
         "floats_down,floats_up,comm_rounds_cum";
}

namespace {

void atomic_write(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

std::string meta_path_for(const std::string& metrics_path) { return metrics_path + ".meta.json"; }

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<SeedRun>& seeds) {
  std::ostringstream out;
  out << metrics_header() << "\n";
  for (const SeedRun& run : seeds) {
    for (const MetricsRow& r : run.rows) {
      out << r.seed << ',' << r.round << ',' << r.rank << ',' << format_double(r.global_loss)
          << ',' << format_double(r.dist_to_oracle) << ',' << format_double(r.max_drift) << ','
          << format_double(r.grad_norm) << ',' << r.floats_down << ',' << r.floats_up << ','
          << r.comm_rounds_cum << "\n";
    }
  }
  atomic_write(path, out.str());
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open metrics file " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty metrics file " + path);
  if (line != metrics_header())
    throw std::invalid_argument("metrics schema mismatch in " + path);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    MetricsRow r;
    auto next = [&]() -> std::string {
      if (!std::getline(ls, field, ',')) throw std::invalid_argument("short row in " + path);
      return field;
    };
    r.seed = std::stoull(next());
    r.round = std::stoull(next());
    r.rank = std::stoull(next());
    r.global_loss = std::stod(next());
    r.dist_to_oracle = std::stod(next());
    r.max_drift = std::stod(next());
    r.grad_norm = std::stod(next());
    r.floats_down = std::stoull(next());
    r.floats_up = std::stoull(next());
    r.comm_rounds_cum = std::stoull(next());
    rows.push_back(r);
  }
  return rows;
}

namespace {

void write_meta_json(const std::string& path, const ExperimentResult& result) {
  nlohmann::json doc;
  doc["schema"] = "fedlrt-run-meta-1";
  const ExperimentConfig& c = result.config;
  doc["experiment"] = to_string(c.experiment);
  doc["algorithm"] = to_string(c.algorithm);
  doc["n"] = c.n;
  doc["r_target"] = c.r_target;
  doc["samples"] = c.samples;
  doc["clients"] = c.clients;
  doc["local_iters"] = c.local_iters;
  doc["lr"] = c.lr;
  doc["tau"] = c.tau;
  doc["rank_init"] = c.effective_rank_init();
  doc["rounds"] = c.rounds;
  nlohmann::json seeds = nlohmann::json::array();
  for (const SeedRun& run : result.seeds) {
    nlohmann::json s;
    s["seed"] = run.seed;
    s["status"] = run.failed ? "failed" : "ok";
    if (run.failed) s["failure"] = run.failure;
    s["l_hat"] = run.l_hat;
    s["oracle_loss"] = run.oracle_loss;
    s["initial_gap"] = run.initial_gap;
    s["thetas"] = run.thetas;
    seeds.push_back(std::move(s));
  }
  doc["seeds"] = std::move(seeds);
  atomic_write(path, doc.dump(1) + "\n");
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::vector<std::uint64_t> seeds = config.effective_seeds();

  ExperimentResult result;
  result.config = config;
  result.seeds.resize(seeds.size());

  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(),
                                                     seeds.size()));
  if (workers <= 1 || seeds.size() == 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i)
      result.seeds[i] = run_seed(config, seeds[i]);
  } else {
    std::vector<std::thread> pool;
    std::size_t next_index = 0;
    std::mutex mu;
    for (std::size_t wkr = 0; wkr < workers; ++wkr) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next_index >= seeds.size()) return;
            i = next_index++;
          }
          result.seeds[i] = run_seed(config, seeds[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  for (const SeedRun& run : result.seeds) result.any_failed |= run.failed;

  write_metrics_csv(config.out, result.seeds);
  write_meta_json(meta_path_for(config.out), result);
  return result;
}

TheoremReport check_theorems(const std::string& metrics_path) {
  TheoremReport report;

  std::ifstream meta_in(meta_path_for(metrics_path));
  if (!meta_in)
    throw std::invalid_argument("cannot open run artifacts " + meta_path_for(metrics_path));
  nlohmann::json meta;
  meta_in >> meta;

  const std::string algorithm = meta.at("algorithm").get<std::string>();
  const double lambda = meta.at("lr").get<double>();
  const double s_star = static_cast<double>(meta.at("local_iters").get<std::size_t>());

  if (algorithm != to_string(Algorithm::FedLrtFull)) {
    report.note = "not applicable: run used algorithm '" + algorithm +
                  "' (full variance correction required)";
    return report;
  }

  std::vector<MetricsRow> rows = read_metrics_csv(metrics_path);

  struct SeedMeta {
    double l_hat = 0.0;
    double initial_gap = 0.0;
    std::vector<double> thetas;
  };
  std::map<std::uint64_t, SeedMeta> seed_meta;
  double max_l_hat = 0.0;
  for (const auto& s : meta.at("seeds")) {
    SeedMeta sm;
    sm.l_hat = s.at("l_hat").get<double>();
    sm.initial_gap = s.at("initial_gap").get<double>();
    sm.thetas = s.at("thetas").get<std::vector<double>>();
    seed_meta[s.at("seed").get<std::uint64_t>()] = std::move(sm);
    max_l_hat = std::max(max_l_hat, seed_meta[s.at("seed").get<std::uint64_t>()].l_hat);
  }

  const double l_safe_max = kSafetyFactor * max_l_hat;
  report.applicable = true;
  report.drift_rate_ok = lambda <= 1.0 / (l_safe_max * s_star);
  report.descent_rate_ok = lambda <= 1.0 / (12.0 * l_safe_max * s_star);
  if (!report.drift_rate_ok && !report.descent_rate_ok) {
    report.applicable = false;
    report.note = "not applicable: learning rate exceeds both theorem ranges";
    return report;
  }
  if (!report.descent_rate_ok)
    report.note = "descent theorem range not met; its inequality is reported informationally";

  std::map<std::uint64_t, double> prev_gap;
  std::map<std::uint64_t, std::size_t> round_index;
  for (const MetricsRow& r : rows) {
    const auto it = seed_meta.find(r.seed);
    if (it == seed_meta.end()) continue;
    const SeedMeta& sm = it->second;
    if (prev_gap.find(r.seed) == prev_gap.end()) prev_gap[r.seed] = sm.initial_gap;

    const double l_safe = kSafetyFactor * sm.l_hat;
    const std::size_t idx = round_index[r.seed]++;
    const double theta = idx < sm.thetas.size() ? sm.thetas[idx] : 0.0;

    TheoremRoundCheck check;
    check.seed = r.seed;
    check.round = r.round;

    if (report.drift_rate_ok) {
      const double bound = std::exp(1.0) * s_star * lambda * r.grad_norm + kTheoremSlack;
      check.drift_ok = r.max_drift <= bound;
      if (!check.drift_ok) ++report.drift_violations;
    }
    {
      const double change = r.global_loss - prev_gap[r.seed];
      const double bound = -s_star * lambda * (1.0 - 12.0 * s_star * lambda * l_safe) *
                               r.grad_norm * r.grad_norm +
                           l_safe * theta + kTheoremSlack;
      check.descent_ok = change <= bound;
      if (!check.descent_ok) ++report.descent_violations;
    }
    prev_gap[r.seed] = r.global_loss;
    report.rounds.push_back(check);
  }
  return report;
}

std::vector<SummaryRow> compare_summary(const std::vector<std::string>& metrics_paths) {
  if (metrics_paths.empty()) throw std::invalid_argument("compare_summary: no metrics files");
  std::vector<SummaryRow> out;
  for (const std::string& path : metrics_paths) {
    std::ifstream meta_in(meta_path_for(path));
    if (!meta_in)
      throw std::invalid_argument("cannot open run artifacts " + meta_path_for(path));
    nlohmann::json meta;
    meta_in >> meta;

    std::vector<MetricsRow> rows = read_metrics_csv(path);

    SummaryRow row;
    row.algorithm = meta.at("algorithm").get<std::string>();
    row.clients = meta.at("clients").get<std::size_t>();

    std::map<std::uint64_t, double> final_loss;
    std::map<std::uint64_t, std::optional<std::size_t>> first_reach;
    std::map<std::uint64_t, double> floats;
    for (const MetricsRow& r : rows) {
      final_loss[r.seed] = r.global_loss;
      floats[r.seed] += static_cast<double>(r.floats_down + r.floats_up);
      auto& reach = first_reach[r.seed];
      if (!reach && r.global_loss <= kLossThreshold) reach = r.round;
    }

    std::vector<double> finals, cum_floats, reach_rounds;
    for (const auto& [seed, loss] : final_loss) {
      finals.push_back(loss);
      cum_floats.push_back(floats[seed]);
      reach_rounds.push_back(first_reach[seed]
                                 ? static_cast<double>(*first_reach[seed])
                                 : std::numeric_limits<double>::infinity());
    }
    row.median_final_loss = median_of(finals);
    row.median_cumulative_floats = median_of(cum_floats);
    const double med_reach = median_of(reach_rounds);  // infinity when most seeds never reach
    if (std::isfinite(med_reach))
      row.median_rounds_to_threshold = static_cast<std::size_t>(med_reach);
    out.push_back(std::move(row));
  }
  return out;
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "algorithm,clients,median_final_loss,median_rounds_to_1e-4,median_cumulative_floats\n";
  for (const SummaryRow& r : rows) {
    out << r.algorithm << ',' << r.clients << ',' << format_double(r.median_final_loss) << ',';
    if (r.median_rounds_to_threshold)
      out << *r.median_rounds_to_threshold;
    else
      out << "not reached";
    out << ',' << format_double(r.median_cumulative_floats) << "\n";
  }
  atomic_write(path, out.str());
}

}  // namespace fedlrt
