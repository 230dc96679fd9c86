#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedguard/attack.hpp"
#include "fedguard/data.hpp"
#include "fedguard/model.hpp"
#include "fedguard/rng.hpp"

namespace fedguard {

using ClientId = std::size_t;

enum class Mode { fedavg, secure };

// median: lower median of the round's scores. mean: their arithmetic mean.
// fixed: a constant cut supplied up front (FederationConfig::threshold_value).
enum class ThresholdRule { median, mean, fixed };

// uploaded_eval: mean loss of the uploaded weights over the client's data.
// final_epoch_mean: mean of the minibatch losses seen in the last local epoch.
enum class LossStatistic { uploaded_eval, final_epoch_mean };

std::string to_string(Mode mode);
std::string to_string(ThresholdRule rule);
std::string to_string(LossStatistic stat);

struct FederationConfig {
  std::size_t clients = 10;
  double fraction = 1.0;
  std::size_t local_epochs = 10;
  std::size_t batch_size = 124;
  double learning_rate = 0.1;
  std::size_t rounds = 10;
  Mode mode = Mode::secure;
  ThresholdRule threshold_rule = ThresholdRule::median;
  double threshold_value = 2.0;  // only read by ThresholdRule::fixed
  std::uint64_t master_seed = 0;
  LossStatistic loss_statistic = LossStatistic::uploaded_eval;
  // Also drop clients flagged this round from this round's aggregate.
  bool strict_ban = false;
  // fedavg only: draw a fresh client sample every round.
  bool resample_each_round = false;
  // Worker threads for client updates; 0 runs them inline.
  std::size_t threads = 0;

  // Throws ValidationError naming the offending field.
  void validate() const;
  std::size_t clients_per_round() const;
};

struct ClientState {
  ClientId id = 0;
  std::vector<std::size_t> sample_indices;
  const AttackSpec* attack = nullptr;  // not owned

  std::size_t sample_count() const noexcept { return sample_indices.size(); }
};

struct ClientReport {
  ClientId id = 0;
  double loss = 0.0;                  // +inf when training or evaluation diverged
  std::optional<double> anomaly_score;  // secure mode only
  bool banned_now = false;
  bool diverged = false;

  friend bool operator==(const ClientReport&, const ClientReport&) = default;
};

struct RoundRecord {
  std::size_t round = 0;
  Mode mode = Mode::secure;
  std::vector<ClientId> participants;
  std::vector<ClientId> aggregated;  // clients whose uploads entered the mean
  std::vector<ClientReport> clients;  // ascending id, one per participant
  std::optional<double> sigma;        // secure mode only
  std::optional<double> threshold;    // secure mode only
  std::vector<ClientId> newly_banned;
  double global_loss = 0.0;
  double global_accuracy = 0.0;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct ServerState {
  ModelParams global;
  std::size_t round = 0;
  std::vector<ClientId> initial_selection;
  std::set<ClientId> banned;
  std::vector<RoundRecord> history;
  // Score every client starts from before it has reported; never read.
  double initial_score = 1.0;
};

// Progress callbacks; any may be left empty. Invoked from the coordinating
// thread only, in ascending client order.
struct RoundEvents {
  std::function<void(std::size_t round, std::span<const ClientId> participants)> round_started;
  std::function<void(std::size_t round, const ClientReport& report)> client_finished;
  std::function<void(std::size_t round, ClientId client)> client_banned;
};

// Read-only inputs shared by every round of one experiment.
struct FederationContext {
  const ModelSpec& spec;
  const Dataset& train;
  const Dataset& test;
};

// m = max(floor(F * C), 1) distinct clients, ascending.
std::vector<ClientId> select_initial_clients(std::size_t clients, double fraction, Rng& rng);

// fedavg: s_1 unchanged. secure: s_1 minus the banned set. Throws
// ProtocolError when nobody is left.
std::vector<ClientId> participants(std::size_t round, std::span<const ClientId> initial_selection,
                                   const std::set<ClientId>& banned, Mode mode);

struct ClientResult {
  ModelParams weights;
  double loss = 0.0;
  bool diverged = false;
};

// E epochs of minibatch SGD over the client's shuffled samples (short final
// batch kept), then the attack transform if the client is a target.
ClientResult client_update(const ClientState& client, const ModelParams& global, const FederationConfig& cfg,
                           const FederationContext& ctx, std::size_t round, Rng& rng);

struct AnomalyScores {
  std::map<ClientId, double> scores;
  double sigma = 0.0;
};

// sigma = min finite loss; score_c = (1 + loss_c) / (1 + sigma).
AnomalyScores anomaly_scores(const std::map<ClientId, double>& losses);

// Cut over the finite scores; `fixed_value` is returned for the fixed rule.
double threshold(const std::map<ClientId, double>& scores, ThresholdRule rule, double fixed_value = 2.0);

// Clients whose score is strictly greater than `cut`.
std::set<ClientId> flag_anomalous(const std::map<ClientId, double>& scores, double cut);

// n_c / sum(n), keyed by client.
std::map<ClientId, double> aggregation_weights(const std::map<ClientId, std::size_t>& counts);

// Sample-count weighted mean, accumulated in ascending client order.
ModelParams aggregate(const std::map<ClientId, ModelParams>& updates, const std::map<ClientId, std::size_t>& counts);

// One communication round; appends to server.history and returns the record.
const RoundRecord& run_round(ServerState& server, std::span<const ClientState> clients, const FederationConfig& cfg,
                             const FederationContext& ctx, const RoundEvents& events = {});

struct ExperimentResult {
  ServerState server;
  ModelParams initial_params;
};

// Seeds w_0, picks s_1 once, and runs cfg.rounds rounds.
ExperimentResult run_experiment(const FederationConfig& cfg, const FederationContext& ctx, const PartitionPlan& plan,
                                const std::optional<AttackSpec>& attack, const RoundEvents& events = {});

}  // namespace fedguard
