#include "fedguard/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include "fedguard/errors.hpp"
#include "fedguard/model.hpp"
#include "json.hpp"

namespace fedguard {
namespace {

using nlohmann::json;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::string qualified(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void reject_unknown(const json& obj, const std::string& prefix, std::initializer_list<const char*> allowed) {
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!keys.contains(key)) throw ValidationError(qualified(prefix, key), "unknown key");
  }
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void read_size(const json& obj, const char* key, const std::string& prefix, std::size_t& out) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_number_integer() || v->get<std::int64_t>() < 0) {
    throw ValidationError(qualified(prefix, key), "must be a non-negative integer");
  }
  out = v->get<std::size_t>();
}

void read_optional_size(const json& obj, const char* key, const std::string& prefix, std::optional<std::size_t>& out) {
  const json* v = find(obj, key);
  if (!v || v->is_null()) return;
  std::size_t n = 0;
  read_size(obj, key, prefix, n);
  out = n;
}

void read_u64(const json& obj, const char* key, const std::string& prefix, std::uint64_t& out) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
    throw ValidationError(qualified(prefix, key), "must be an unsigned 64-bit integer");
  }
  out = v->get<std::uint64_t>();
}

void read_double(const json& obj, const char* key, const std::string& prefix, double& out) {
  const json* v = find(obj, key);
  if (!v) return;
  if (v->is_string() && (v->get<std::string>() == "inf" || v->get<std::string>() == "infinity")) {
    out = std::numeric_limits<double>::infinity();
    return;
  }
  if (!v->is_number()) throw ValidationError(qualified(prefix, key), "must be a number");
  out = v->get<double>();
}

void read_bool(const json& obj, const char* key, const std::string& prefix, bool& out) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_boolean()) throw ValidationError(qualified(prefix, key), "must be true or false");
  out = v->get<bool>();
}

std::optional<std::string> read_string(const json& obj, const char* key, const std::string& prefix) {
  const json* v = find(obj, key);
  if (!v) return std::nullopt;
  if (!v->is_string()) throw ValidationError(qualified(prefix, key), "must be a string");
  return v->get<std::string>();
}

const json& require_object(const json& v, const std::string& key) {
  if (!v.is_object()) throw ValidationError(key, "must be a JSON object");
  return v;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return (base.empty() || path.is_absolute()) ? path : base / path;
}

DatasetSource parse_dataset(const json& v, const std::filesystem::path& base) {
  const json& obj = require_object(v, "dataset");
  const std::string type = read_string(obj, "type", "dataset").value_or("idx");
  if (type == "idx") {
    reject_unknown(obj, "dataset", {"type", "train_images", "train_labels", "test_images", "test_labels",
                                    "train_limit", "test_limit"});
    IdxSource src;
    if (auto s = read_string(obj, "train_images", "dataset")) src.train_images = resolve(base, *s);
    if (auto s = read_string(obj, "train_labels", "dataset")) src.train_labels = resolve(base, *s);
    if (auto s = read_string(obj, "test_images", "dataset")) src.test_images = resolve(base, *s);
    if (auto s = read_string(obj, "test_labels", "dataset")) src.test_labels = resolve(base, *s);
    read_optional_size(obj, "train_limit", "dataset", src.train_limit);
    read_optional_size(obj, "test_limit", "dataset", src.test_limit);
    return src;
  }
  if (type == "synthetic") {
    reject_unknown(obj, "dataset", {"type", "n", "test_n", "classes"});
    SyntheticSource src;
    read_size(obj, "n", "dataset", src.n);
    read_size(obj, "test_n", "dataset", src.test_n);
    read_size(obj, "classes", "dataset", src.classes);
    return src;
  }
  throw ValidationError("dataset.type", "expected \"idx\" or \"synthetic\", got \"" + type + "\"");
}

PartitionScheme parse_partition(const json& v) {
  const json& obj = require_object(v, "partition");
  const std::string scheme = read_string(obj, "scheme", "partition").value_or("iid");
  if (scheme == "iid") {
    reject_unknown(obj, "partition", {"scheme"});
    return IidScheme{};
  }
  if (scheme == "noniid_equal") {
    reject_unknown(obj, "partition", {"scheme", "shards_per_client"});
    NonIidEqualScheme s;
    read_size(obj, "shards_per_client", "partition", s.shards_per_client);
    return s;
  }
  if (scheme == "noniid_unequal") {
    reject_unknown(obj, "partition", {"scheme", "min_shards", "max_shards"});
    NonIidUnequalScheme s;
    read_size(obj, "min_shards", "partition", s.min_shards);
    read_size(obj, "max_shards", "partition", s.max_shards);
    return s;
  }
  throw ValidationError("partition.scheme",
                        "expected \"iid\", \"noniid_equal\" or \"noniid_unequal\", got \"" + scheme + "\"");
}

std::optional<AttackSpec> parse_attack(const json& v) {
  if (v.is_null()) return std::nullopt;
  const json& obj = require_object(v, "attack");
  reject_unknown(obj, "attack", {"targets", "kind", "std", "scale", "seed"});
  AttackSpec spec;
  if (const json* t = find(obj, "targets")) {
    if (!t->is_array()) throw ValidationError("attack.targets", "must be an array of client ids");
    spec.targets.clear();
    for (const auto& id : *t) {
      if (!id.is_number_integer() || id.get<std::int64_t>() < 0) {
        throw ValidationError("attack.targets", "client ids must be non-negative integers");
      }
      spec.targets.insert(id.get<std::size_t>());
    }
  }
  const std::string kind = read_string(obj, "kind", "attack").value_or("first_layer_noise");
  if (kind == "first_layer_noise") {
    if (find(obj, "scale")) throw ValidationError("attack.scale", "only valid for kind \"random_params\"");
    FirstLayerNoise noise;
    read_double(obj, "std", "attack", noise.stddev);
    spec.kind = noise;
  } else if (kind == "random_params") {
    if (find(obj, "std")) throw ValidationError("attack.std", "only valid for kind \"first_layer_noise\"");
    RandomParams random;
    read_double(obj, "scale", "attack", random.scale);
    spec.kind = random;
  } else {
    throw ValidationError("attack.kind", "expected \"first_layer_noise\" or \"random_params\", got \"" + kind + "\"");
  }
  read_u64(obj, "seed", "attack", spec.seed);
  return spec;
}

template <class Enum>
Enum parse_enum(const json& obj, const char* key, Enum fallback,
                std::initializer_list<std::pair<const char*, Enum>> names) {
  const auto text = read_string(obj, key, "");
  if (!text) return fallback;
  std::string expected;
  for (const auto& [name, value] : names) {
    if (*text == name) return value;
    expected += expected.empty() ? std::string("\"") + name + "\"" : std::string(", \"") + name + "\"";
  }
  throw ValidationError(key, "expected one of " + expected + ", got \"" + *text + "\"");
}

}  // namespace

std::size_t ExperimentConfig::classes() const {
  return std::visit(overloaded{[](const IdxSource&) -> std::size_t { return 10; },
                               [](const SyntheticSource& s) { return s.classes; }},
                    dataset);
}

void ExperimentConfig::validate() const {
  federation.validate();
  if (federation.rounds == 0) throw ValidationError("rounds", "must be >= 1");
  std::visit(overloaded{
                 [](const IdxSource& s) {
                   if (s.train_limit && *s.train_limit == 0) throw ValidationError("dataset.train_limit", "must be >= 1");
                   if (s.test_limit && *s.test_limit == 0) throw ValidationError("dataset.test_limit", "must be >= 1");
                 },
                 [](const SyntheticSource& s) {
                   if (s.classes == 0 || s.classes > 256) throw ValidationError("dataset.classes", "must lie in [1, 256]");
                   if (s.n < s.classes) throw ValidationError("dataset.n", "must be >= classes");
                   if (s.test_n < s.classes) throw ValidationError("dataset.test_n", "must be >= classes");
                 },
             },
             dataset);
  std::visit(overloaded{
                 [](const IidScheme&) {},
                 [](const NonIidEqualScheme& s) {
                   if (s.shards_per_client == 0) throw ValidationError("partition.shards_per_client", "must be >= 1");
                 },
                 [](const NonIidUnequalScheme& s) {
                   if (s.min_shards == 0) throw ValidationError("partition.min_shards", "must be >= 1");
                   if (s.max_shards < s.min_shards) throw ValidationError("partition.max_shards", "must be >= min_shards");
                 },
             },
             partition);
  try {
    model_by_name(model, classes()).validate();
  } catch (const ConfigError& e) {
    throw ValidationError("model", e.what());
  }
  if (attack) attack->validate(federation.clients);
  if (output_dir.empty()) throw ValidationError("output_dir", "must not be empty");
}

ExperimentConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError("experiment config must be a JSON object");
  reject_unknown(root, "", {"clients", "fraction", "local_epochs", "batch_size", "learning_rate", "rounds", "mode",
                            "threshold_rule", "threshold_value", "master_seed", "loss_statistic", "strict_ban",
                            "resample_each_round", "model", "dataset", "partition", "attack", "output_dir",
                            "compare"});

  ExperimentConfig cfg;
  FederationConfig& fed = cfg.federation;
  read_size(root, "clients", "", fed.clients);
  read_double(root, "fraction", "", fed.fraction);
  read_size(root, "local_epochs", "", fed.local_epochs);
  read_size(root, "batch_size", "", fed.batch_size);
  read_double(root, "learning_rate", "", fed.learning_rate);
  read_size(root, "rounds", "", fed.rounds);
  fed.mode = parse_enum(root, "mode", fed.mode, {{"fedavg", Mode::fedavg}, {"secure", Mode::secure}});
  fed.threshold_rule =
      parse_enum(root, "threshold_rule", fed.threshold_rule,
                 {{"median", ThresholdRule::median}, {"mean", ThresholdRule::mean}, {"fixed", ThresholdRule::fixed}});
  read_double(root, "threshold_value", "", fed.threshold_value);
  read_u64(root, "master_seed", "", fed.master_seed);
  fed.loss_statistic = parse_enum(root, "loss_statistic", fed.loss_statistic,
                                  {{"uploaded_eval", LossStatistic::uploaded_eval},
                                   {"final_epoch_mean", LossStatistic::final_epoch_mean}});
  read_bool(root, "strict_ban", "", fed.strict_ban);
  read_bool(root, "resample_each_round", "", fed.resample_each_round);
  if (auto m = read_string(root, "model", "")) cfg.model = *m;
  if (const json* d = find(root, "dataset")) cfg.dataset = parse_dataset(*d, base_dir);
  if (const json* p = find(root, "partition")) cfg.partition = parse_partition(*p);
  if (const json* a = find(root, "attack")) cfg.attack = parse_attack(*a);
  if (auto o = read_string(root, "output_dir", "")) cfg.output_dir = *o;
  read_bool(root, "compare", "", cfg.compare);

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, path.parent_path());
}

std::string config_to_json(const ExperimentConfig& cfg, int indent) {
  const FederationConfig& fed = cfg.federation;
  json j;
  j["clients"] = fed.clients;
  j["fraction"] = fed.fraction;
  j["local_epochs"] = fed.local_epochs;
  j["batch_size"] = fed.batch_size;
  j["learning_rate"] = fed.learning_rate;
  j["rounds"] = fed.rounds;
  j["mode"] = to_string(fed.mode);
  j["threshold_rule"] = to_string(fed.threshold_rule);
  if (std::isinf(fed.threshold_value)) {
    j["threshold_value"] = "inf";
  } else {
    j["threshold_value"] = fed.threshold_value;
  }
  j["master_seed"] = fed.master_seed;
  j["loss_statistic"] = to_string(fed.loss_statistic);
  j["strict_ban"] = fed.strict_ban;
  j["resample_each_round"] = fed.resample_each_round;
  j["model"] = cfg.model;
  j["output_dir"] = cfg.output_dir.string();
  j["compare"] = cfg.compare;
  j["dataset"] = std::visit(overloaded{
                                [](const IdxSource& s) {
                                  json d{{"type", "idx"},
                                         {"train_images", s.train_images.string()},
                                         {"train_labels", s.train_labels.string()},
                                         {"test_images", s.test_images.string()},
                                         {"test_labels", s.test_labels.string()}};
                                  d["train_limit"] = s.train_limit ? json(*s.train_limit) : json(nullptr);
                                  d["test_limit"] = s.test_limit ? json(*s.test_limit) : json(nullptr);
                                  return d;
                                },
                                [](const SyntheticSource& s) {
                                  return json{{"type", "synthetic"}, {"n", s.n}, {"test_n", s.test_n},
                                              {"classes", s.classes}};
                                },
                            },
                            cfg.dataset);
  j["partition"] = std::visit(overloaded{
                                  [](const IidScheme&) { return json{{"scheme", "iid"}}; },
                                  [](const NonIidEqualScheme& s) {
                                    return json{{"scheme", "noniid_equal"}, {"shards_per_client", s.shards_per_client}};
                                  },
                                  [](const NonIidUnequalScheme& s) {
                                    return json{{"scheme", "noniid_unequal"},
                                                {"min_shards", s.min_shards},
                                                {"max_shards", s.max_shards}};
                                  },
                              },
                              cfg.partition);
  if (cfg.attack) {
    json a;
    a["targets"] = cfg.attack->targets;
    a["seed"] = cfg.attack->seed;
    std::visit(overloaded{
                   [&](const FirstLayerNoise& n) {
                     a["kind"] = "first_layer_noise";
                     a["std"] = n.stddev;
                   },
                   [&](const RandomParams& r) {
                     a["kind"] = "random_params";
                     a["scale"] = r.scale;
                   },
               },
               cfg.attack->kind);
    j["attack"] = a;
  } else {
    j["attack"] = nullptr;
  }
  return j.dump(indent);
}

}  // namespace fedguard
