#include "fedguard/attack.hpp"

#include <cmath>
#include <string>

#include "fedguard/errors.hpp"
#include "fedguard/rng.hpp"

namespace fedguard {

void AttackSpec::validate(std::size_t clients) const {
  for (std::size_t t : targets) {
    if (t >= clients) {
      throw ValidationError("attack.targets", "client " + std::to_string(t) + " outside [0, " +
                                                  std::to_string(clients) + ")");
    }
  }
  if (const auto* n = std::get_if<FirstLayerNoise>(&kind); n && !(n->stddev >= 0.0 && std::isfinite(n->stddev))) {
    throw ValidationError("attack.std", "must be a finite value >= 0");
  }
  if (const auto* r = std::get_if<RandomParams>(&kind); r && !(r->scale >= 0.0 && std::isfinite(r->scale))) {
    throw ValidationError("attack.scale", "must be a finite value >= 0");
  }
}

ModelParams inject(const ModelParams& w, std::size_t client, std::size_t round, const AttackSpec& spec) {
  if (!spec.targets_client(client)) return w;
  Rng rng = make_rng(spec.seed, {stream::kAttack, client, round});
  ModelParams out = w;
  if (const auto* noise = std::get_if<FirstLayerNoise>(&spec.kind)) {
    if (noise->stddev == 0.0) return out;
    for (auto& t : out.tensors) {
      if (t.role != ParamRole::weight) continue;
      std::normal_distribution<double> dist(0.0, noise->stddev);
      for (double& v : t.value.values()) v += dist(rng);
      break;
    }
  } else if (const auto* random = std::get_if<RandomParams>(&spec.kind)) {
    std::uniform_real_distribution<double> dist(-random->scale, random->scale);
    for (auto& t : out.tensors) {
      for (double& v : t.value.values()) v = dist(rng);
    }
  }
  return out;
}

}  // namespace fedguard
