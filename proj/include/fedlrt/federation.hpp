#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedlrt/loss_model.hpp"
#include "fedlrt/low_rank.hpp"
#include "fedlrt/matrix.hpp"

namespace fedlrt {

enum class Algorithm {
  FedAvg,
  FedLin,
  FedLrtNone,        // FeDLRT without variance correction
  FedLrtFull,        // FeDLRT with full variance correction
  FedLrtSimplified,  // FeDLRT with the r x r block correction
  FedLrtNaive,       // per-client bases, full-matrix aggregation
};

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& tag);  // throws std::invalid_argument
bool is_low_rank(Algorithm a);

enum class VarianceMode { None, Full, Simplified };

struct FederationConfig {
  std::size_t clients = 1;           // C
  std::size_t local_iterations = 1;  // s_*
  double learning_rate = 1e-3;       // lambda
  std::size_t rounds = 1;            // T
  VarianceMode variance_mode = VarianceMode::None;
  TruncationConfig truncation;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Exact scalar counts exchanged with the server. Downstream broadcasts are
/// counted once per payload; upstream uploads once per client. A
/// "communication round" is one broadcast/aggregate round trip.
class CommLedger {
 public:
  void begin_round();
  void broadcast(std::uint64_t floats);
  void upload(std::uint64_t floats_per_client, std::size_t clients);
  void complete_round_trip();

  std::uint64_t round_down() const { return round_down_; }
  std::uint64_t round_up() const { return round_up_; }
  std::uint64_t round_trips() const { return round_trips_; }
  std::uint64_t total_down() const { return total_down_; }
  std::uint64_t total_up() const { return total_up_; }
  std::uint64_t total_round_trips() const { return total_trips_; }

 private:
  std::uint64_t round_down_ = 0, round_up_ = 0, round_trips_ = 0;
  std::uint64_t total_down_ = 0, total_up_ = 0, total_trips_ = 0;
};

struct ExpectedComm {
  std::uint64_t floats_down = 0;
  std::uint64_t floats_up = 0;
  std::uint64_t comm_rounds = 0;
  std::uint64_t total() const { return floats_down + floats_up; }
};

/// The float traffic one round of `alg` generates at rank r (ignored by the
/// full-rank algorithms) with C clients.
ExpectedComm ledger_expected_floats(Algorithm alg, std::size_t n, std::size_t r,
                                    std::size_t clients);

/// Per-round diagnostics shared by all drivers.
struct RoundStats {
  std::size_t rank_after = 0;
  double max_drift = 0.0;   // max_{c,s} distance of a local iterate from its start
  double grad_norm = 0.0;   // || grad_S L || at the shared augmented state
                            // (|| grad_W L(W^t) || for the full-rank drivers)
  double threshold = 0.0;   // realised truncation cut, 0 for full-rank drivers
  bool degenerate = false;
};

using ClientModels = std::vector<std::shared_ptr<const LossModel>>;

Matrix fedavg_round(const Matrix& w, const FederationConfig& cfg, const ClientModels& clients,
                    CommLedger& ledger, RoundStats* stats = nullptr);

Matrix fedlin_round(const Matrix& w, const FederationConfig& cfg, const ClientModels& clients,
                    CommLedger& ledger, RoundStats* stats = nullptr);

/// One aggregation round of the shared-basis low-rank scheme; cfg.variance_mode
/// selects no correction or the full augmented-coefficient correction.
LowRankFactors fedlrt_round(const LowRankFactors& factors, const FederationConfig& cfg,
                            const ClientModels& clients, CommLedger& ledger,
                            RoundStats* stats = nullptr);

/// The two-round variant whose correction only uses the leading r x r block.
LowRankFactors fedlrt_simplified_round(const LowRankFactors& factors,
                                       const FederationConfig& cfg, const ClientModels& clients,
                                       CommLedger& ledger, RoundStats* stats = nullptr);

/// Per-client basis augmentation with full-matrix averaging and an n x n SVD
/// on the server.
LowRankFactors naive_fedlrt_round(const LowRankFactors& factors, const FederationConfig& cfg,
                                  const ClientModels& clients, CommLedger& ledger,
                                  RoundStats* stats = nullptr);

}  // namespace fedlrt
