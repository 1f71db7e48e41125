#include "fedlrt/federation.hpp"

#include <algorithm>
#include <cmath>

#include "fedlrt/linalg.hpp"

namespace fedlrt {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedLin: return "fedlin";
    case Algorithm::FedLrtNone: return "fedlrt-none";
    case Algorithm::FedLrtFull: return "fedlrt-full";
    case Algorithm::FedLrtSimplified: return "fedlrt-simplified";
    case Algorithm::FedLrtNaive: return "fedlrt-naive";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& tag) {
  if (tag == "fedavg") return Algorithm::FedAvg;
  if (tag == "fedlin") return Algorithm::FedLin;
  if (tag == "fedlrt-none" || tag == "fedlrt") return Algorithm::FedLrtNone;
  if (tag == "fedlrt-full") return Algorithm::FedLrtFull;
  if (tag == "fedlrt-simplified") return Algorithm::FedLrtSimplified;
  if (tag == "fedlrt-naive") return Algorithm::FedLrtNaive;
  throw std::invalid_argument("unknown algorithm tag: " + tag);
}

bool is_low_rank(Algorithm a) {
  return a != Algorithm::FedAvg && a != Algorithm::FedLin;
}

void FederationConfig::validate() const {
  if (clients < 1) throw std::invalid_argument("FederationConfig: clients must be >= 1");
  if (local_iterations < 1)
    throw std::invalid_argument("FederationConfig: local_iterations must be >= 1");
  if (!(learning_rate >= 0.0))
    throw std::invalid_argument("FederationConfig: learning_rate must be non-negative");
  if (rounds < 1) throw std::invalid_argument("FederationConfig: rounds must be >= 1");
  if (truncation.tau < 0.0 || truncation.tau >= 1.0)
    throw std::invalid_argument("FederationConfig: tau must lie in [0, 1)");
  if (truncation.r_min < 1 ||
      (truncation.r_max > 0 && truncation.r_max < truncation.r_min))
    throw std::invalid_argument("FederationConfig: bad rank bounds");
}

void CommLedger::begin_round() {
  round_down_ = 0;
  round_up_ = 0;
  round_trips_ = 0;
}

void CommLedger::broadcast(std::uint64_t floats) {
  round_down_ += floats;
  total_down_ += floats;
}

void CommLedger::upload(std::uint64_t floats_per_client, std::size_t clients) {
  const std::uint64_t v = floats_per_client * clients;
  round_up_ += v;
  total_up_ += v;
}

void CommLedger::complete_round_trip() {
  round_trips_ += 1;
  total_trips_ += 1;
}

ExpectedComm ledger_expected_floats(Algorithm alg, std::size_t n, std::size_t r,
                                    std::size_t clients) {
  const std::uint64_t n2 = static_cast<std::uint64_t>(n) * n;
  const std::uint64_t nr = static_cast<std::uint64_t>(n) * r;
  const std::uint64_t r2 = static_cast<std::uint64_t>(r) * r;
  const std::uint64_t c = clients;
  ExpectedComm e;
  switch (alg) {
    case Algorithm::FedAvg:
      e = {n2, c * n2, 1};
      break;
    case Algorithm::FedLin:
      e = {2 * n2, 2 * c * n2, 2};
      break;
    case Algorithm::FedLrtNone:
      e = {(2 * nr + r2) + 2 * nr, c * 2 * nr + c * 4 * r2, 2};
      break;
    case Algorithm::FedLrtFull:
      e = {(2 * nr + r2) + 2 * nr + 4 * r2, c * 2 * nr + c * 4 * r2 + c * 4 * r2, 3};
      break;
    case Algorithm::FedLrtSimplified:
      e = {2 * (2 * nr + r2), c * (2 * nr + r2) + c * 4 * r2, 2};
      break;
    case Algorithm::FedLrtNaive:
      e = {2 * nr + r2, c * (4 * nr + 4 * r2), 1};
      break;
    default:
      throw std::invalid_argument("ledger_expected_floats: unknown algorithm tag");
  }
  return e;
}

namespace {

struct LocalSteps {
  Matrix state;
  double max_drift = 0.0;
};

/// s_* corrected gradient-descent steps from `start`; the correction term is
/// held fixed across the loop.
template <typename GradFn>
LocalSteps run_local_steps(const GradFn& gradient, const Matrix& start,
                           const Matrix* correction, double lambda, std::size_t steps) {
  LocalSteps out;
  out.state = start;
  for (std::size_t s = 0; s < steps; ++s) {
    Matrix g = gradient(out.state);
    if (correction) g += *correction;
    g *= lambda;
    out.state -= g;
    out.max_drift = std::max(out.max_drift, frobenius_distance(out.state, start));
  }
  return out;
}

struct TruncationOutcome {
  LowRankFactors factors;
  double threshold = 0.0;
  bool degenerate = false;
};

/// Rank selection used on the naive path: same tail rule as truncate(), on a
/// full n x n SVD.
TruncationOutcome truncate_full_matrix(const Matrix& w, const TruncationConfig& cfg,
                                       std::size_t rank_cap) {
  SvdResult svd = svd_square(w);
  const std::size_t k = svd.sigma.size();
  std::vector<double> tail(k + 1, 0.0);
  for (std::size_t i = k; i-- > 0;) tail[i] = tail[i + 1] + svd.sigma[i] * svd.sigma[i];
  const double total = std::sqrt(tail[0]);
  const double threshold = cfg.tau * total;

  std::size_t r1 = k;
  for (std::size_t rp = 0; rp <= k; ++rp) {
    const double tn = std::sqrt(tail[rp]);
    if (tn < threshold || tn == 0.0) {
      r1 = rp;
      break;
    }
  }
  std::size_t cap = std::min(k, rank_cap);
  if (cfg.r_max > 0) cap = std::min(cap, cfg.r_max);
  r1 = std::max(cfg.r_min, std::min(r1, cap));

  TruncationOutcome out;
  out.threshold = threshold;
  out.degenerate = (total == 0.0);
  out.factors.u = left_columns(svd.p, r1);
  out.factors.v = left_columns(svd.q, r1);
  out.factors.s = Matrix(r1, r1);
  for (std::size_t i = 0; i < r1; ++i)
    out.factors.s(i, i) = out.degenerate ? 1e-12 : svd.sigma[i];
  return out;
}

void check_clients(const FederationConfig& cfg, const ClientModels& clients) {
  cfg.validate();
  if (clients.size() != cfg.clients)
    throw std::invalid_argument("round driver: client model count does not match config");
}

}  // namespace

Matrix fedavg_round(const Matrix& w, const FederationConfig& cfg, const ClientModels& clients,
                    CommLedger& ledger, RoundStats* stats) {
  check_clients(cfg, clients);
  const std::size_t n = w.rows();
  ledger.begin_round();
  ledger.broadcast(n * n);

  std::vector<Matrix> locals;
  locals.reserve(clients.size());
  double max_drift = 0.0;
  Matrix grad_at_start(n, n);
  for (const auto& client : clients) {
    auto ev = client->weight_evaluator(cfg.local_iterations);
    grad_at_start += ev->gradient(w);  // diagnostics only, not communicated
    LocalSteps ls = run_local_steps([&](const Matrix& x) { return ev->gradient(x); }, w,
                                    nullptr, cfg.learning_rate, cfg.local_iterations);
    max_drift = std::max(max_drift, ls.max_drift);
    locals.push_back(std::move(ls.state));
  }
  ledger.upload(n * n, clients.size());
  ledger.complete_round_trip();

  Matrix next = aggregate_mean(locals);
  if (stats) {
    grad_at_start *= 1.0 / static_cast<double>(clients.size());
    *stats = RoundStats{n, max_drift, frobenius_norm(grad_at_start), 0.0, false};
  }
  return next;
}

Matrix fedlin_round(const Matrix& w, const FederationConfig& cfg, const ClientModels& clients,
                    CommLedger& ledger, RoundStats* stats) {
  check_clients(cfg, clients);
  const std::size_t n = w.rows();
  ledger.begin_round();
  ledger.broadcast(n * n);

  std::vector<std::unique_ptr<WeightEvaluator>> evals;
  std::vector<Matrix> local_grads;
  for (const auto& client : clients) {
    evals.push_back(client->weight_evaluator(cfg.local_iterations));
    local_grads.push_back(evals.back()->gradient(w));
  }
  ledger.upload(n * n, clients.size());
  ledger.complete_round_trip();

  Matrix global_grad = aggregate_mean(local_grads);
  ledger.broadcast(n * n);

  std::vector<Matrix> locals;
  double max_drift = 0.0;
  for (std::size_t c = 0; c < clients.size(); ++c) {
    Matrix correction = global_grad;
    correction -= local_grads[c];
    LocalSteps ls = run_local_steps([&](const Matrix& x) { return evals[c]->gradient(x); }, w,
                                    &correction, cfg.learning_rate, cfg.local_iterations);
    max_drift = std::max(max_drift, ls.max_drift);
    locals.push_back(std::move(ls.state));
  }
  ledger.upload(n * n, clients.size());
  ledger.complete_round_trip();

  Matrix next = aggregate_mean(locals);
  if (stats) *stats = RoundStats{n, max_drift, frobenius_norm(global_grad), 0.0, false};
  return next;
}

namespace {

LowRankFactors fedlrt_round_impl(const LowRankFactors& factors, const FederationConfig& cfg,
                                 const ClientModels& clients, CommLedger& ledger,
                                 RoundStats* stats, bool simplified) {
  check_clients(cfg, clients);
  const std::size_t n = factors.n();
  const std::size_t r = factors.rank();
  ledger.begin_round();
  ledger.broadcast(2 * n * r + r * r);  // {U, V, S}

  // Per-client factor gradients, aggregated on the server. The simplified
  // variant ships the r x r coefficient gradient in the same payload.
  std::vector<FactorGradients> grads;
  grads.reserve(clients.size());
  for (const auto& client : clients) grads.push_back(client->factor_gradients(factors));
  std::vector<Matrix> gus, gvs, gss;
  for (auto& g : grads) {
    gus.push_back(std::move(g.g_u));
    gvs.push_back(std::move(g.g_v));
    gss.push_back(std::move(g.g_s));
  }
  Matrix g_u = aggregate_mean(gus);
  Matrix g_v = aggregate_mean(gvs);
  Matrix g_s_mean = aggregate_mean(gss);
  ledger.upload(2 * n * r + (simplified ? r * r : 0), clients.size());
  ledger.complete_round_trip();

  AugmentedState aug = augment_state(factors, g_u, g_v);
  const std::size_t k = aug.s_aug.rows();
  ledger.broadcast(2 * n * r + (simplified ? r * r : 0));  // {Ubar, Vbar} (+ G_S)

  std::vector<std::unique_ptr<CoefficientEvaluator>> evals;
  for (const auto& client : clients)
    evals.push_back(client->coefficient_evaluator(aug.u_aug, aug.v_aug, cfg.local_iterations));

  std::vector<Matrix> corrections;
  double grad_norm = 0.0;
  if (simplified) {
    // [[G_S - G_{S,c}, 0], [0, 0]] evaluated at the pre-augmentation factors.
    for (std::size_t c = 0; c < clients.size(); ++c) {
      Matrix block = g_s_mean;
      block -= gss[c];
      Matrix padded(k, k);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) padded(i, j) = block(i, j);
      corrections.push_back(std::move(padded));
    }
  } else if (cfg.variance_mode == VarianceMode::Full) {
    std::vector<Matrix> coeff_grads;
    for (auto& ev : evals) coeff_grads.push_back(ev->gradient(aug.s_aug));
    ledger.upload(k * k, clients.size());
    ledger.complete_round_trip();
    Matrix global = aggregate_mean(coeff_grads);
    ledger.broadcast(k * k);
    grad_norm = frobenius_norm(global);
    for (std::size_t c = 0; c < clients.size(); ++c) {
      Matrix corr = global;
      corr -= coeff_grads[c];
      corrections.push_back(std::move(corr));
    }
  }

  if (grad_norm == 0.0) {
    // Diagnostics for the uncorrected/simplified paths (not communicated).
    Matrix mean_grad(k, k);
    for (auto& ev : evals) mean_grad += ev->gradient(aug.s_aug);
    mean_grad *= 1.0 / static_cast<double>(clients.size());
    grad_norm = frobenius_norm(mean_grad);
  }

  std::vector<Matrix> locals;
  double max_drift = 0.0;
  for (std::size_t c = 0; c < clients.size(); ++c) {
    const Matrix* corr = corrections.empty() ? nullptr : &corrections[c];
    LocalSteps ls = run_local_steps([&](const Matrix& s) { return evals[c]->gradient(s); },
                                    aug.s_aug, corr, cfg.learning_rate, cfg.local_iterations);
    max_drift = std::max(max_drift, ls.max_drift);
    locals.push_back(std::move(ls.state));
  }
  Matrix s_star = aggregate_mean(locals);
  ledger.upload(k * k, clients.size());
  ledger.complete_round_trip();

  AugmentedState agg = aug;
  agg.s_aug = std::move(s_star);
  TruncationConfig trunc_cfg = cfg.truncation;
  // The next round doubles the basis again, so the rank stays within n/2.
  const std::size_t cap = std::max<std::size_t>(1, n / 2);
  trunc_cfg.r_max = trunc_cfg.r_max > 0 ? std::min(trunc_cfg.r_max, cap) : cap;
  TruncationResult tr = truncate(agg, trunc_cfg);

  if (stats)
    *stats = RoundStats{tr.factors.rank(), max_drift, grad_norm, tr.threshold, tr.degenerate};
  return std::move(tr.factors);
}

}  // namespace

LowRankFactors fedlrt_round(const LowRankFactors& factors, const FederationConfig& cfg,
                            const ClientModels& clients, CommLedger& ledger, RoundStats* stats) {
  if (cfg.variance_mode == VarianceMode::Simplified)
    return fedlrt_round_impl(factors, cfg, clients, ledger, stats, true);
  return fedlrt_round_impl(factors, cfg, clients, ledger, stats, false);
}

LowRankFactors fedlrt_simplified_round(const LowRankFactors& factors,
                                       const FederationConfig& cfg, const ClientModels& clients,
                                       CommLedger& ledger, RoundStats* stats) {
  return fedlrt_round_impl(factors, cfg, clients, ledger, stats, true);
}

LowRankFactors naive_fedlrt_round(const LowRankFactors& factors, const FederationConfig& cfg,
                                  const ClientModels& clients, CommLedger& ledger,
                                  RoundStats* stats) {
  check_clients(cfg, clients);
  const std::size_t n = factors.n();
  const std::size_t r = factors.rank();
  ledger.begin_round();
  ledger.broadcast(2 * n * r + r * r);  // {U, V, S}

  Matrix w_sum(n, n);
  double max_drift = 0.0;
  Matrix g_s_mean(r, r);
  for (const auto& client : clients) {
    FactorGradients fg = client->factor_gradients(factors);
    g_s_mean += fg.g_s;
    AugmentedState aug = augment_state(factors, fg.g_u, fg.g_v);
    auto ev = client->coefficient_evaluator(aug.u_aug, aug.v_aug, 1);
    Matrix g = ev->gradient(aug.s_aug);
    g *= cfg.learning_rate;
    Matrix s_next = aug.s_aug;
    s_next -= g;
    max_drift = std::max(max_drift, frobenius_distance(s_next, aug.s_aug));
    w_sum += matmul(matmul(aug.u_aug, s_next), transpose(aug.v_aug));
  }
  ledger.upload(4 * n * r + 4 * r * r, clients.size());  // {U_aug, V_aug, S_aug} per client
  ledger.complete_round_trip();

  w_sum *= 1.0 / static_cast<double>(clients.size());
  g_s_mean *= 1.0 / static_cast<double>(clients.size());

  TruncationOutcome tr = truncate_full_matrix(w_sum, cfg.truncation,
                                              std::max<std::size_t>(1, n / 2));
  if (stats)
    *stats = RoundStats{tr.factors.rank(), max_drift, frobenius_norm(g_s_mean), tr.threshold,
                        tr.degenerate};
  return std::move(tr.factors);
}

}  // namespace fedlrt
