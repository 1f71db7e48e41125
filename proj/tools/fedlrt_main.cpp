#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedlrt/experiment.hpp"

namespace {

// Exit codes: 0 success, 1 config error, 2 numerical failure,
// 3 theorem-check violation.
enum ExitCode { kOk = 0, kConfigError = 1, kNumericalFailure = 2, kTheoremViolation = 3 };

struct Overrides {
  std::string config_path;
  std::string experiment;
  std::string algorithm;
  std::size_t n = 0, r_target = 0, samples = 0, clients = 0, local_iters = 0;
  std::size_t rank_init = 0, rounds = 0;
  double lr = 0.0, tau = -1.0;
  std::vector<std::uint64_t> seeds;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

fedlrt::ExperimentConfig build_config(const Overrides& o) {
  fedlrt::ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    cfg = fedlrt::load_config_file(o.config_path);
    if (!o.experiment.empty() &&
        fedlrt::parse_experiment(o.experiment) != cfg.experiment) {
      // A different experiment kind re-bases the defaults before overrides.
      cfg = fedlrt::default_config(fedlrt::parse_experiment(o.experiment));
    }
  } else {
    cfg = fedlrt::default_config(o.experiment.empty()
                                     ? fedlrt::ExperimentKind::Homogeneous
                                     : fedlrt::parse_experiment(o.experiment));
  }
  if (!o.experiment.empty()) cfg.experiment = fedlrt::parse_experiment(o.experiment);
  if (!o.algorithm.empty()) cfg.algorithm = fedlrt::parse_algorithm(o.algorithm);
  if (o.n) cfg.n = o.n;
  if (o.r_target) cfg.r_target = o.r_target;
  if (o.samples) cfg.samples = o.samples;
  if (o.clients) cfg.clients = o.clients;
  if (o.local_iters) cfg.local_iters = o.local_iters;
  if (o.lr > 0.0) cfg.lr = o.lr;
  if (o.tau >= 0.0) cfg.tau = o.tau;
  if (o.rank_init) cfg.rank_init = o.rank_init;
  if (o.rounds) cfg.rounds = o.rounds;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.seed_set) cfg.seeds = {o.seed};
  if (!o.out.empty()) cfg.out = o.out;
  return cfg;
}

int cmd_run(const Overrides& o) {
  fedlrt::ExperimentConfig cfg;
  try {
    cfg = build_config(o);
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    fedlrt::ExperimentResult result = fedlrt::run_experiment(cfg);
    std::size_t ok = 0;
    for (const auto& s : result.seeds) {
      if (s.failed)
        std::cerr << "seed " << s.seed << " failed: " << s.failure << "\n";
      else
        ++ok;
    }
    std::cout << "wrote " << cfg.out << " (" << ok << "/" << result.seeds.size()
              << " seeds completed)\n";
    return result.any_failed ? kNumericalFailure : kOk;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kNumericalFailure;
  }
}

int cmd_check(const std::string& metrics, bool quiet) {
  fedlrt::TheoremReport report;
  try {
    report = fedlrt::check_theorems(metrics);
  } catch (const std::exception& e) {
    std::cerr << "check error: " << e.what() << "\n";
    return kConfigError;
  }
  if (!report.applicable) {
    std::cout << "not applicable: " << report.note << "\n";
    return kOk;
  }
  if (!report.note.empty()) std::cout << "note: " << report.note << "\n";
  if (!quiet) {
    for (const auto& r : report.rounds) {
      std::cout << "seed " << r.seed << " round " << r.round << ": drift "
                << (r.drift_ok ? "pass" : "FAIL") << ", descent "
                << (r.descent_ok ? "pass" : "FAIL") << "\n";
    }
  }
  std::cout << "drift violations: " << report.drift_violations
            << ", descent violations: " << report.descent_violations << "\n";
  std::cout << "verdict: " << (report.passed() ? "PASS" : "FAIL") << "\n";
  return report.passed() ? kOk : kTheoremViolation;
}

int cmd_summarize(const std::vector<std::string>& metrics, const std::string& out) {
  try {
    auto rows = fedlrt::compare_summary(metrics);
    fedlrt::write_summary_csv(out, rows);
    std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "summarize error: " << e.what() << "\n";
    return kConfigError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated low-rank training simulator"};
  app.require_subcommand(1);

  Overrides o;
  auto* run = app.add_subcommand("run", "run an experiment and write metrics CSV");
  run->add_option("--config", o.config_path, "JSON config file");
  run->add_option("--experiment", o.experiment, "homogeneous | heterogeneous");
  run->add_option("--algorithm", o.algorithm,
                  "fedavg | fedlin | fedlrt-none | fedlrt-full | fedlrt-simplified | "
                  "fedlrt-naive");
  run->add_option("--n", o.n, "weight matrix dimension");
  run->add_option("--r-target", o.r_target, "target rank (homogeneous)");
  run->add_option("--samples", o.samples, "total sample count");
  run->add_option("--clients", o.clients, "client count C");
  run->add_option("--local-iters", o.local_iters, "local iterations s_*");
  run->add_option("--lr", o.lr, "learning rate lambda");
  run->add_option("--tau", o.tau, "relative truncation threshold");
  run->add_option("--rank-init", o.rank_init, "initial rank (default n/2)");
  run->add_option("--rounds", o.rounds, "aggregation rounds T");
  run->add_option("--seeds", o.seeds, "seed list")->delimiter(',');
  run->add_option("--seed", o.seed, "single seed")->each([&](const std::string&) {
    o.seed_set = true;
  });
  run->add_option("--out", o.out, "metrics CSV path");

  std::string check_metrics;
  bool check_quiet = false;
  auto* check = app.add_subcommand("check", "verify drift and descent bounds on a run");
  check->add_option("--metrics", check_metrics, "metrics CSV from `run`")->required();
  check->add_flag("--summary-only", check_quiet, "suppress per-round lines");

  std::vector<std::string> summarize_inputs;
  std::string summarize_out = "summary.csv";
  auto* summarize = app.add_subcommand("summarize", "tabulate one or more runs");
  summarize->add_option("metrics", summarize_inputs, "metrics CSV files")->required();
  summarize->add_option("--out", summarize_out, "summary CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  if (run->parsed()) return cmd_run(o);
  if (check->parsed()) return cmd_check(check_metrics, check_quiet);
  return cmd_summarize(summarize_inputs, summarize_out);
}
