#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <variant>

#include "fedguard/model.hpp"

namespace fedguard {

// Zero-mean Gaussian noise added to the first weight tensor of the model.
struct FirstLayerNoise {
  double stddev = 1.0;
};

// Every parameter replaced by U(-scale, scale).
struct RandomParams {
  double scale = 1.0;
};

using AttackKind = std::variant<FirstLayerNoise, RandomParams>;

struct AttackSpec {
  std::set<std::size_t> targets{1, 2};
  AttackKind kind = FirstLayerNoise{};
  std::uint64_t seed = 0;

  bool targets_client(std::size_t client) const { return targets.contains(client); }
  // Throws ConfigError for negative magnitudes or targets >= clients.
  void validate(std::size_t clients) const;
};

// Applied to a client's upload after local training. Honest clients get `w`
// back unchanged; the noise stream is keyed on (seed, client, round).
ModelParams inject(const ModelParams& w, std::size_t client, std::size_t round, const AttackSpec& spec);

}  // namespace fedguard
