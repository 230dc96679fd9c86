#include "fedguard/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedguard/errors.hpp"
#include "fedguard/nn.hpp"
#include "fedguard/parallel.hpp"

namespace fedguard {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> finite_values(const std::map<ClientId, double>& scores) {
  std::vector<double> out;
  out.reserve(scores.size());
  for (const auto& [id, s] : scores) {
    if (std::isfinite(s)) out.push_back(s);
  }
  return out;
}

}  // namespace

std::string to_string(Mode mode) { return mode == Mode::fedavg ? "fedavg" : "secure"; }

std::string to_string(ThresholdRule rule) {
  switch (rule) {
    case ThresholdRule::median:
      return "median";
    case ThresholdRule::mean:
      return "mean";
    case ThresholdRule::fixed:
      return "fixed";
  }
  return "unknown";
}

std::string to_string(LossStatistic stat) {
  return stat == LossStatistic::uploaded_eval ? "uploaded_eval" : "final_epoch_mean";
}

void FederationConfig::validate() const {
  if (clients == 0) throw ValidationError("clients", "must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fraction", "must lie in (0, 1]");
  if (local_epochs == 0) throw ValidationError("local_epochs", "must be >= 1");
  if (batch_size == 0) throw ValidationError("batch_size", "must be >= 1");
  if (!(learning_rate > 0.0 && std::isfinite(learning_rate))) {
    throw ValidationError("learning_rate", "must be a positive finite number");
  }
  if (threshold_rule == ThresholdRule::fixed && !(threshold_value >= 1.0)) {
    // Scores are >= 1 by construction; a cut below 1 would flag every client.
    throw ValidationError("threshold_value", "must be >= 1 (may be +inf)");
  }
}

std::size_t FederationConfig::clients_per_round() const {
  const auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(clients)));
  return std::max<std::size_t>(m, 1);
}

std::vector<ClientId> select_initial_clients(std::size_t clients, double fraction, Rng& rng) {
  if (clients == 0) throw ValidationError("clients", "must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fraction", "must lie in (0, 1]");
  const auto m = std::max<std::size_t>(static_cast<std::size_t>(std::floor(fraction * static_cast<double>(clients))), 1);
  std::vector<ClientId> all(clients);
  std::iota(all.begin(), all.end(), ClientId{0});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(m, clients));
  std::sort(all.begin(), all.end());
  return all;
}

std::vector<ClientId> participants(std::size_t round, std::span<const ClientId> initial_selection,
                                   const std::set<ClientId>& banned, Mode mode) {
  if (round == 0) throw DomainError("rounds are numbered from 1");
  std::vector<ClientId> out;
  for (ClientId c : initial_selection) {
    if (mode == Mode::fedavg || !banned.contains(c)) out.push_back(c);
  }
  if (out.empty()) {
    throw ProtocolError("all clients banned before round " + std::to_string(round) + " (" +
                        std::to_string(banned.size()) + " banned of " + std::to_string(initial_selection.size()) +
                        " selected)");
  }
  return out;
}

ClientResult client_update(const ClientState& client, const ModelParams& global, const FederationConfig& cfg,
                           const FederationContext& ctx, std::size_t round, Rng& rng) {
  if (client.sample_count() == 0) throw DomainError("client " + std::to_string(client.id) + " owns no samples");
  if (cfg.local_epochs == 0) throw ValidationError("local_epochs", "must be >= 1");
  if (cfg.batch_size == 0) throw ValidationError("batch_size", "must be >= 1");

  ModelParams w = global;
  std::vector<std::size_t> order = client.sample_indices;
  double last_epoch_sum = 0.0;
  std::size_t last_epoch_batches = 0;
  try {
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      last_epoch_sum = 0.0;
      last_epoch_batches = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t len = std::min(cfg.batch_size, order.size() - start);
        const Batch batch = gather_batch(ctx.train.images, ctx.train.labels,
                                         std::span<const std::size_t>(order).subspan(start, len));
        LossAndGrad lg = loss_and_grad(ctx.spec, w, batch);
        sgd_step_inplace(w, lg.grads, cfg.learning_rate);
        last_epoch_sum += lg.loss;
        ++last_epoch_batches;
      }
    }
  } catch (const NumericError&) {
    // Diverged: upload the unchanged global model and report an infinite loss.
    return ClientResult{global, kInf, true};
  }

  if (client.attack) w = inject(w, client.id, round, *client.attack);

  double loss = kInf;
  if (cfg.loss_statistic == LossStatistic::final_epoch_mean) {
    loss = last_epoch_sum / static_cast<double>(last_epoch_batches);
  } else {
    try {
      loss = evaluate(ctx.spec, w, ctx.train.images, ctx.train.labels, client.sample_indices).loss;
    } catch (const NumericError&) {
      loss = kInf;
    }
  }
  return ClientResult{std::move(w), loss, !std::isfinite(loss)};
}

AnomalyScores anomaly_scores(const std::map<ClientId, double>& losses) {
  if (losses.empty()) throw DomainError("anomaly scores of an empty round");
  double sigma = kInf;
  for (const auto& [id, loss] : losses) {
    if (std::isnan(loss) || loss < 0.0) {
      throw DomainError("client " + std::to_string(id) + " reported invalid loss " + std::to_string(loss));
    }
    sigma = std::min(sigma, loss);
  }
  if (!std::isfinite(sigma)) throw ProtocolError("every participant reported a non-finite loss");
  AnomalyScores out;
  out.sigma = sigma;
  for (const auto& [id, loss] : losses) {
    out.scores[id] = std::isfinite(loss) ? (1.0 + loss) / (1.0 + sigma) : kInf;
  }
  return out;
}

double threshold(const std::map<ClientId, double>& scores, ThresholdRule rule, double fixed_value) {
  if (rule == ThresholdRule::fixed) return fixed_value;
  std::vector<double> values = finite_values(scores);
  if (values.empty()) throw DomainError("threshold over an empty score set");
  if (rule == ThresholdRule::mean) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
  }
  // Lower median: the ceil(n/2)-th smallest score.
  const std::size_t k = (values.size() + 1) / 2 - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

std::set<ClientId> flag_anomalous(const std::map<ClientId, double>& scores, double cut) {
  std::set<ClientId> out;
  for (const auto& [id, s] : scores) {
    if (s > cut) out.insert(id);
  }
  return out;
}

std::map<ClientId, double> aggregation_weights(const std::map<ClientId, std::size_t>& counts) {
  std::size_t total = 0;
  for (const auto& [id, n] : counts) total += n;
  if (total == 0) throw DomainError("aggregation weights need a positive total sample count");
  std::map<ClientId, double> out;
  for (const auto& [id, n] : counts) out[id] = static_cast<double>(n) / static_cast<double>(total);
  return out;
}

ModelParams aggregate(const std::map<ClientId, ModelParams>& updates, const std::map<ClientId, std::size_t>& counts) {
  if (updates.empty()) throw DomainError("aggregate of zero updates");
  std::map<ClientId, std::size_t> used;
  for (const auto& [id, params] : updates) {
    const auto it = counts.find(id);
    if (it == counts.end()) throw DomainError("no sample count for client " + std::to_string(id));
    used[id] = it->second;
  }
  const auto weights = aggregation_weights(used);

  // w_ref + sum_c (n_c / m) (w_c - w_ref): the same weighted mean, but
  // identical inputs reproduce w_ref bit for bit.
  const ModelParams& ref = updates.begin()->second;
  for (const auto& [id, params] : updates) {
    require_same_structure(ref, params, "aggregate (client " + std::to_string(id) + ")");
  }
  ModelParams out = ref;
  for (std::size_t t = 0; t < out.tensors.size(); ++t) {
    auto acc = out.tensors[t].value.values();
    const auto base = ref.tensors[t].value.values();
    for (const auto& [id, params] : updates) {
      const double weight = weights.at(id);
      const auto v = params.tensors[t].value.values();
      for (std::size_t j = 0; j < acc.size(); ++j) {
        const double d = v[j] - base[j];
        if (d != 0.0) acc[j] += weight * d;
      }
    }
  }
  return out;
}

const RoundRecord& run_round(ServerState& server, std::span<const ClientState> clients, const FederationConfig& cfg,
                             const FederationContext& ctx, const RoundEvents& events) {
  const std::size_t t = server.round + 1;
  RoundRecord record;
  record.round = t;
  record.mode = cfg.mode;

  if (cfg.mode == Mode::fedavg && cfg.resample_each_round && t > 1) {
    Rng rng = make_rng(cfg.master_seed, {stream::kSelect, t});
    record.participants = select_initial_clients(cfg.clients, cfg.fraction, rng);
  } else {
    record.participants = participants(t, server.initial_selection, server.banned, cfg.mode);
  }
  if (events.round_started) events.round_started(t, record.participants);

  std::vector<const ClientState*> active;
  for (ClientId id : record.participants) {
    const auto it = std::find_if(clients.begin(), clients.end(), [&](const ClientState& c) { return c.id == id; });
    if (it == clients.end()) throw ProtocolError("selected client " + std::to_string(id) + " has no state");
    active.push_back(&*it);
  }

  std::vector<ClientResult> results(active.size());
  parallel_for(active.size(), cfg.threads, [&](std::size_t i) {
    Rng rng = make_rng(cfg.master_seed, {stream::kClient, active[i]->id, t});
    results[i] = client_update(*active[i], server.global, cfg, ctx, t, rng);
  });

  std::map<ClientId, double> losses;
  for (std::size_t i = 0; i < active.size(); ++i) {
    losses[active[i]->id] = results[i].loss;
    record.clients.push_back(ClientReport{active[i]->id, results[i].loss, std::nullopt, false, results[i].diverged});
  }

  std::set<ClientId> flagged;
  if (cfg.mode == Mode::secure) {
    const AnomalyScores scored = anomaly_scores(losses);
    const double cut = threshold(scored.scores, cfg.threshold_rule, cfg.threshold_value);
    flagged = flag_anomalous(scored.scores, cut);
    for (const auto& [id, s] : scored.scores) {
      if (std::isinf(s)) flagged.insert(id);  // divergent uploads are anomalous outright
    }
    record.sigma = scored.sigma;
    record.threshold = cut;
    for (auto& report : record.clients) {
      report.anomaly_score = scored.scores.at(report.id);
      report.banned_now = flagged.contains(report.id);
    }
    for (ClientId id : flagged) {
      if (server.banned.insert(id).second) record.newly_banned.push_back(id);
    }
  }

  std::map<ClientId, ModelParams> uploads;
  std::map<ClientId, std::size_t> counts;
  for (std::size_t i = 0; i < active.size(); ++i) {
    const ClientId id = active[i]->id;
    if (cfg.strict_ban && flagged.contains(id)) continue;
    record.aggregated.push_back(id);
    counts[id] = active[i]->sample_count();
    uploads.emplace(id, std::move(results[i].weights));
  }
  if (uploads.empty()) throw ProtocolError("round " + std::to_string(t) + " has no update left to aggregate");
  server.global = aggregate(uploads, counts);

  try {
    const Evaluation ev = evaluate(ctx.spec, server.global, ctx.test.images, ctx.test.labels);
    record.global_loss = ev.loss;
    record.global_accuracy = ev.accuracy;
  } catch (const NumericError&) {
    record.global_loss = kInf;
    record.global_accuracy = 0.0;
  }

  if (events.client_finished) {
    for (const auto& report : record.clients) events.client_finished(t, report);
  }
  if (events.client_banned) {
    for (ClientId id : record.newly_banned) events.client_banned(t, id);
  }

  server.round = t;
  server.history.push_back(std::move(record));
  return server.history.back();
}

ExperimentResult run_experiment(const FederationConfig& cfg, const FederationContext& ctx, const PartitionPlan& plan,
                                const std::optional<AttackSpec>& attack, const RoundEvents& events) {
  cfg.validate();
  ctx.spec.validate();
  if (plan.clients() != cfg.clients) {
    throw ConfigError("partition plan covers " + std::to_string(plan.clients()) + " clients, config expects " +
                      std::to_string(cfg.clients));
  }
  plan.validate(ctx.train.size());
  if (attack) attack->validate(cfg.clients);

  ExperimentResult result;
  Rng init_rng = make_rng(cfg.master_seed, {stream::kInit});
  result.initial_params = init_params(ctx.spec, init_rng);
  result.server.global = result.initial_params;
  Rng select_rng = make_rng(cfg.master_seed, {stream::kSelect, 1});
  result.server.initial_selection = select_initial_clients(cfg.clients, cfg.fraction, select_rng);

  std::vector<ClientState> clients(cfg.clients);
  for (ClientId c = 0; c < cfg.clients; ++c) {
    clients[c].id = c;
    clients[c].sample_indices = plan.assignments[c];
    if (attack && attack->targets_client(c)) clients[c].attack = &*attack;
  }

  for (std::size_t r = 0; r < cfg.rounds; ++r) run_round(result.server, clients, cfg, ctx, events);
  return result;
}

}  // namespace fedguard
