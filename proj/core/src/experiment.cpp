#include "fedguard/experiment.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fedguard/errors.hpp"
#include "fedguard/model.hpp"
#include "fedguard/serialize.hpp"
#include "json.hpp"

namespace fedguard {
namespace {

using nlohmann::ordered_json;

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

// JSON has no infinity; keep the value readable instead of null.
ordered_json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_float(v);
}

template <class T>
ordered_json json_optional(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

}  // namespace

LoadedData load_data(const ExperimentConfig& cfg) {
  if (const auto* idx = std::get_if<IdxSource>(&cfg.dataset)) {
    LoadedData data{load_idx_dataset(idx->train_images, idx->train_labels, idx->train_limit, cfg.classes()),
                    load_idx_dataset(idx->test_images, idx->test_labels, idx->test_limit, cfg.classes())};
    return data;
  }
  const auto& syn = std::get<SyntheticSource>(cfg.dataset);
  Rng rng = make_rng(cfg.federation.master_seed, {stream::kSynthetic});
  auto tt = synthetic_train_test(syn.n, syn.test_n, syn.classes, rng);
  return {std::move(tt.train), std::move(tt.test)};
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("FEDGUARD_THREADS");
  if (!raw || !*raw) return 0;
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(raw, &end, 10);
  if (*end != '\0' || errno != 0 || v < 0 || v > 1024) {
    throw ConfigError(std::string("FEDGUARD_THREADS must be an integer in [0, 1024], got \"") + raw + "\"");
  }
  return static_cast<std::size_t>(v);
}

PartitionPlan make_plan(const ExperimentConfig& cfg, const Dataset& train) {
  Rng rng = make_rng(cfg.federation.master_seed, {stream::kPartition});
  return partition(train, cfg.partition, cfg.federation.clients, rng);
}

ExperimentOutcome execute(const ExperimentConfig& cfg, const LoadedData& data, const RoundEvents& events) {
  cfg.validate();
  const ModelSpec spec = model_by_name(cfg.model, cfg.classes());
  ExperimentOutcome outcome{cfg, make_plan(cfg, data.train), {}};
  const FederationContext ctx{spec, data.train, data.test};

  std::vector<Mode> modes;
  if (cfg.compare) {
    modes = {Mode::fedavg, Mode::secure};
  } else {
    modes = {cfg.federation.mode};
  }
  for (Mode mode : modes) {
    FederationConfig fed = cfg.federation;
    fed.mode = mode;
    outcome.runs.push_back({mode, run_experiment(fed, ctx, outcome.plan, cfg.attack, events)});
  }
  return outcome;
}

std::optional<std::size_t> convergence_round(std::span<const RoundRecord> history, double tolerance) {
  if (history.empty()) return std::nullopt;
  const double final_loss = history.back().global_loss;
  for (const auto& r : history) {
    if (std::abs(r.global_loss - final_loss) <= tolerance * std::abs(final_loss)) return r.round;
  }
  return history.back().round;
}

std::optional<std::size_t> rounds_to_reach(std::span<const RoundRecord> history, double target) {
  for (const auto& r : history) {
    if (r.global_loss <= target) return r.round;
  }
  return std::nullopt;
}

std::string format_float(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

std::string metrics_csv(const ExperimentOutcome& outcome) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const auto& run : outcome.runs) {
    const std::string mode = to_string(run.mode);
    for (const auto& rec : run.result.server.history) {
      for (const auto& c : rec.clients) {
        out << mode << ',' << rec.round << ',' << c.id << ',' << format_float(c.loss) << ',';
        if (c.anomaly_score) out << format_float(*c.anomaly_score);
        out << ',';
        if (run.mode == Mode::secure) out << (c.banned_now ? "true" : "false");
        out << ",,\n";
      }
      out << mode << ',' << rec.round << ",global," << format_float(rec.global_loss) << ",,,"
          << format_float(rec.global_loss) << ',' << format_float(rec.global_accuracy) << '\n';
    }
  }
  return out.str();
}

std::string summary_json(const ExperimentOutcome& outcome) {
  const ExperimentConfig& cfg = outcome.config;
  const std::uint64_t seed = cfg.federation.master_seed;
  ordered_json j;
  j["config"] = ordered_json::parse(config_to_json(cfg));
  j["seeds"] = {{"master", seed},
                {"init", derive_seed(seed, {stream::kInit})},
                {"selection", derive_seed(seed, {stream::kSelect, 1})},
                {"partition", derive_seed(seed, {stream::kPartition})},
                {"synthetic", derive_seed(seed, {stream::kSynthetic})},
                {"attack", cfg.attack ? ordered_json(cfg.attack->seed) : ordered_json(nullptr)}};
  j["partition_checksum"] = hex64(outcome.plan.checksum());
  j["client_samples"] = ordered_json::array();
  for (const auto& a : outcome.plan.assignments) j["client_samples"].push_back(a.size());

  const RoundRecord* fedavg_final = nullptr;
  for (const auto& run : outcome.runs) {
    if (run.mode == Mode::fedavg && !run.result.server.history.empty()) {
      fedavg_final = &run.result.server.history.back();
    }
  }

  j["runs"] = ordered_json::array();
  for (const auto& run : outcome.runs) {
    const auto& server = run.result.server;
    const auto& hist = server.history;
    ordered_json r;
    r["mode"] = to_string(run.mode);
    r["initial_params_checksum"] = hex64(params_checksum(run.result.initial_params));
    r["final_params_checksum"] = hex64(params_checksum(server.global));
    r["initial_selection"] = server.initial_selection;
    r["rounds"] = hist.size();
    if (!hist.empty()) {
      const RoundRecord* best = &hist.front();
      for (const auto& rec : hist) {
        if (rec.global_accuracy > best->global_accuracy) best = &rec;
      }
      r["final_accuracy"] = json_number(hist.back().global_accuracy);
      r["best_accuracy"] = json_number(best->global_accuracy);
      r["best_round"] = best->round;
      r["final_global_loss"] = json_number(hist.back().global_loss);
    } else {
      r["final_accuracy"] = r["best_accuracy"] = r["best_round"] = r["final_global_loss"] = nullptr;
    }
    r["banned"] = server.banned;
    ordered_json bans = ordered_json::object();
    for (const auto& rec : hist) {
      for (ClientId c : rec.newly_banned) bans[std::to_string(c)] = rec.round;
    }
    r["ban_round"] = bans;
    r["convergence_round"] = json_optional(convergence_round(hist));
    if (fedavg_final) {
      r["rounds_to_fedavg_final_loss"] = json_optional(rounds_to_reach(hist, fedavg_final->global_loss));
    }
    j["runs"].push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

void write_outputs(const ExperimentOutcome& outcome, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_text(dir / "metrics.csv", metrics_csv(outcome));
  write_text(dir / "summary.json", summary_json(outcome));
}

std::vector<ClientStats> partition_stats(const Dataset& train, const PartitionPlan& plan) {
  std::vector<ClientStats> stats;
  stats.reserve(plan.clients());
  for (std::size_t c = 0; c < plan.clients(); ++c) {
    ClientStats s;
    s.id = c;
    s.samples = plan.assignments[c].size();
    s.histogram.assign(train.classes, 0);
    for (std::size_t i : plan.assignments[c]) ++s.histogram[static_cast<std::size_t>(train.labels[i])];
    s.distinct_labels = distinct_labels(train, plan.assignments[c]);
    stats.push_back(std::move(s));
  }
  return stats;
}

}  // namespace fedguard
