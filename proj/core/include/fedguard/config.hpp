#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "fedguard/attack.hpp"
#include "fedguard/data.hpp"
#include "fedguard/federation.hpp"

namespace fedguard {

struct IdxSource {
  std::filesystem::path train_images = "data/mnist/train-images-idx3-ubyte";
  std::filesystem::path train_labels = "data/mnist/train-labels-idx1-ubyte";
  std::filesystem::path test_images = "data/mnist/t10k-images-idx3-ubyte";
  std::filesystem::path test_labels = "data/mnist/t10k-labels-idx1-ubyte";
  std::optional<std::size_t> train_limit;
  std::optional<std::size_t> test_limit;
};

struct SyntheticSource {
  std::size_t n = 2000;
  std::size_t test_n = 500;
  std::size_t classes = 10;
};

using DatasetSource = std::variant<IdxSource, SyntheticSource>;

struct ExperimentConfig {
  FederationConfig federation;
  DatasetSource dataset = IdxSource{};
  PartitionScheme partition = IidScheme{};
  std::string model = "paper_cnn";
  std::optional<AttackSpec> attack;
  std::filesystem::path output_dir = "out";
  // Run fedavg and secure on the same seed and partition.
  bool compare = true;

  std::size_t classes() const;
  // Range checks across all sections; throws ValidationError.
  void validate() const;
};

// Parses and validates a JSON experiment description. Missing keys take the
// defaults above; unknown keys are rejected. Relative dataset paths are
// resolved against `base_dir` when given.
ExperimentConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical JSON echo of a config (used in summary.json).
std::string config_to_json(const ExperimentConfig& cfg, int indent = -1);

}  // namespace fedguard
