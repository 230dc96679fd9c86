#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedguard/config.hpp"
#include "fedguard/data.hpp"
#include "fedguard/federation.hpp"

namespace fedguard {

inline constexpr const char* kMetricsHeader =
    "mode,round,client_id,loss,anomaly_score,banned,global_loss,global_accuracy";

struct LoadedData {
  Dataset train;
  Dataset test;
};

// IDX files or the seeded synthetic generator (stream kSynthetic).
LoadedData load_data(const ExperimentConfig& cfg);

// FEDGUARD_THREADS, 0 when unset. Throws ConfigError on garbage.
std::size_t threads_from_env();

struct ModeRun {
  Mode mode = Mode::secure;
  ExperimentResult result;
};

struct ExperimentOutcome {
  ExperimentConfig config;
  PartitionPlan plan;
  std::vector<ModeRun> runs;  // fedavg first when comparing
};

// Runs every requested mode on one partition plan and one w_0.
ExperimentOutcome execute(const ExperimentConfig& cfg, const LoadedData& data, const RoundEvents& events = {});

// 1-based round of the first global loss within `tolerance` (relative) of
// the final one; nullopt for an empty history.
std::optional<std::size_t> convergence_round(std::span<const RoundRecord> history, double tolerance = 0.05);

// First round whose global loss is <= target.
std::optional<std::size_t> rounds_to_reach(std::span<const RoundRecord> history, double target);

// %.9g, with "inf"/"-inf"/"nan" spelled out.
std::string format_float(double value);

std::string metrics_csv(const ExperimentOutcome& outcome);
std::string summary_json(const ExperimentOutcome& outcome);

// Writes metrics.csv and summary.json into `dir` (created if needed).
void write_outputs(const ExperimentOutcome& outcome, const std::filesystem::path& dir);

struct ClientStats {
  std::size_t id = 0;
  std::size_t samples = 0;
  std::size_t distinct_labels = 0;
  std::vector<std::size_t> histogram;  // one count per class
};

PartitionPlan make_plan(const ExperimentConfig& cfg, const Dataset& train);
std::vector<ClientStats> partition_stats(const Dataset& train, const PartitionPlan& plan);

}  // namespace fedguard
