#include <algorithm>
#include <numeric>
#include <string>

#include "fedguard/data.hpp"
#include "fedguard/errors.hpp"
#include "fedguard/serialize.hpp"

namespace fedguard {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::vector<std::size_t> label_sorted_indices(const Dataset& ds) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ds.labels[a] < ds.labels[b]; });
  return order;
}

std::size_t shard_size_for(std::size_t n, std::size_t shards) {
  if (shards == 0 || shards > n || n % shards != 0) {
    throw ConfigError("cannot cut " + std::to_string(n) + " samples into " + std::to_string(shards) +
                      " equal shards");
  }
  return n / shards;
}

// Every client takes one shard from a random permutation, then each
// remaining shard goes to a uniformly chosen client still below its target.
PartitionPlan deal_shards(const Dataset& ds, std::size_t clients, std::size_t total_shards,
                          const std::vector<std::size_t>& targets, Rng& rng) {
  const std::size_t shard_size = shard_size_for(ds.size(), total_shards);
  const auto sorted = label_sorted_indices(ds);

  std::vector<std::size_t> shard_order(total_shards);
  std::iota(shard_order.begin(), shard_order.end(), std::size_t{0});
  std::shuffle(shard_order.begin(), shard_order.end(), rng);

  std::vector<std::vector<std::size_t>> owned(clients);
  for (std::size_t c = 0; c < clients; ++c) owned[c].push_back(shard_order[c]);

  std::vector<std::size_t> open;
  for (std::size_t s = clients; s < total_shards; ++s) {
    open.clear();
    for (std::size_t c = 0; c < clients; ++c) {
      if (owned[c].size() < targets[c]) open.push_back(c);
    }
    if (open.empty()) break;
    std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
    owned[open[pick(rng)]].push_back(shard_order[s]);
  }

  PartitionPlan plan;
  plan.assignments.resize(clients);
  for (std::size_t c = 0; c < clients; ++c) {
    auto& out = plan.assignments[c];
    for (std::size_t shard : owned[c]) {
      const auto first = sorted.begin() + static_cast<std::ptrdiff_t>(shard * shard_size);
      out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(shard_size));
    }
    std::sort(out.begin(), out.end());
  }
  return plan;
}

}  // namespace

std::string scheme_name(const PartitionScheme& scheme) {
  return std::visit(overloaded{
                        [](const IidScheme&) { return std::string("iid"); },
                        [](const NonIidEqualScheme& s) {
                          return "noniid_equal(" + std::to_string(s.shards_per_client) + ")";
                        },
                        [](const NonIidUnequalScheme& s) {
                          return "noniid_unequal(" + std::to_string(s.min_shards) + "," +
                                 std::to_string(s.max_shards) + ")";
                        },
                    },
                    scheme);
}

void PartitionPlan::validate(std::size_t n) const {
  std::vector<bool> seen(n, false);
  for (std::size_t c = 0; c < assignments.size(); ++c) {
    if (assignments[c].empty()) throw ProtocolError("client " + std::to_string(c) + " owns no samples");
    for (std::size_t idx : assignments[c]) {
      if (idx >= n) throw ProtocolError("client " + std::to_string(c) + " owns out-of-range sample " + std::to_string(idx));
      if (seen[idx]) throw ProtocolError("sample " + std::to_string(idx) + " assigned twice");
      seen[idx] = true;
    }
  }
}

std::uint64_t PartitionPlan::checksum() const {
  std::vector<std::uint8_t> bytes;
  auto put = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(assignments.size());
  for (const auto& a : assignments) {
    put(a.size());
    for (std::size_t idx : a) put(idx);
  }
  return fnv1a64(bytes);
}

PartitionPlan partition(const Dataset& ds, const PartitionScheme& scheme, std::size_t clients, Rng& rng) {
  if (clients == 0) throw ConfigError("partition needs at least one client");
  if (ds.size() == 0) throw ConfigError("cannot partition an empty dataset");

  PartitionPlan plan = std::visit(
      overloaded{
          [&](const IidScheme&) {
            if (ds.size() < clients) {
              throw ConfigError("IID partition of " + std::to_string(ds.size()) + " samples over " +
                                std::to_string(clients) + " clients leaves a client empty");
            }
            std::vector<std::size_t> perm(ds.size());
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            std::shuffle(perm.begin(), perm.end(), rng);
            PartitionPlan p;
            p.assignments.resize(clients);
            const std::size_t base = ds.size() / clients, extra = ds.size() % clients;
            std::size_t offset = 0;
            for (std::size_t c = 0; c < clients; ++c) {
              const std::size_t take = base + (c < extra ? 1 : 0);
              auto& out = p.assignments[c];
              out.assign(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                         perm.begin() + static_cast<std::ptrdiff_t>(offset + take));
              std::sort(out.begin(), out.end());
              offset += take;
            }
            return p;
          },
          [&](const NonIidEqualScheme& s) {
            if (s.shards_per_client == 0) throw ConfigError("shards_per_client must be >= 1");
            return deal_shards(ds, clients, clients * s.shards_per_client,
                               std::vector<std::size_t>(clients, s.shards_per_client), rng);
          },
          [&](const NonIidUnequalScheme& s) {
            if (s.min_shards == 0 || s.max_shards < s.min_shards) {
              throw ConfigError("non-IID unequal partition needs 1 <= min_shards <= max_shards");
            }
            // Validate divisibility before drawing targets.
            (void)shard_size_for(ds.size(), clients * s.max_shards);
            std::uniform_int_distribution<std::size_t> draw(s.min_shards, s.max_shards);
            std::vector<std::size_t> targets(clients);
            for (;;) {
              for (auto& t : targets) t = draw(rng);
              const bool all_equal = std::adjacent_find(targets.begin(), targets.end(),
                                                        std::not_equal_to<>()) == targets.end();
              if (clients < 2 || s.max_shards == s.min_shards || !all_equal) break;
            }
            return deal_shards(ds, clients, clients * s.max_shards, targets, rng);
          },
      },
      scheme);
  plan.validate(ds.size());
  return plan;
}

std::size_t distinct_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<bool> seen(ds.classes, false);
  std::size_t count = 0;
  for (std::size_t idx : indices) {
    const auto y = static_cast<std::size_t>(ds.labels.at(idx));
    if (y < seen.size() && !seen[y]) {
      seen[y] = true;
      ++count;
    }
  }
  return count;
}

}  // namespace fedguard
