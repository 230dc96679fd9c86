#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "fedguard/rng.hpp"
#include "fedguard/tensor.hpp"

namespace fedguard {

struct Dataset {
  Tensor images;            // [N, 1, rows, cols], values in [0, 1]
  std::vector<int> labels;  // N entries in [0, classes)
  std::size_t classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
  // Throws DomainError when the invariants above do not hold.
  void validate() const;
  // Keeps the first `n` samples.
  Dataset head(std::size_t n) const;
};

// --- IDX ------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

// Inflates gzip members (stream starting 0x1f 0x8b); other input is
// returned unchanged.
std::vector<std::uint8_t> maybe_gunzip(std::span<const std::uint8_t> bytes);

// Pixel bytes are scaled by 1/255. gzip input is accepted.
Tensor load_idx_images(std::span<const std::uint8_t> bytes);
std::vector<int> load_idx_labels(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_idx_images(const Tensor& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Loads a matching image/label file pair, optionally truncated to `limit`
// samples, and checks every label is below `classes`.
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::optional<std::size_t> limit = std::nullopt, std::size_t classes = 10);

// --- synthetic data -------------------------------------------------------

// Each class owns a template of Gaussian blobs on a 28x28 canvas; samples are
// scaled templates plus clipped pixel noise. Labels are balanced (counts
// differ by at most one) and appear in shuffled order.
Dataset synthetic_dataset(std::size_t n, std::size_t classes, Rng& rng);

struct TrainTest {
  Dataset train;
  Dataset test;
};

// Train and holdout sets drawn around the same class templates.
TrainTest synthetic_train_test(std::size_t n_train, std::size_t n_test, std::size_t classes, Rng& rng);

// --- partitioning ---------------------------------------------------------

struct IidScheme {};
struct NonIidEqualScheme {
  std::size_t shards_per_client = 2;
};
struct NonIidUnequalScheme {
  std::size_t min_shards = 1;
  std::size_t max_shards = 4;
};
using PartitionScheme = std::variant<IidScheme, NonIidEqualScheme, NonIidUnequalScheme>;

std::string scheme_name(const PartitionScheme& scheme);

struct PartitionPlan {
  // assignments[c] holds the sorted sample indices owned by client c.
  std::vector<std::vector<std::size_t>> assignments;

  std::size_t clients() const noexcept { return assignments.size(); }
  // Disjoint, non-empty, and within [0, n).
  void validate(std::size_t n) const;
  std::uint64_t checksum() const;
  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

// IID: shuffled indices split into near-equal chunks.
// Non-IID: indices sorted by (label, index) and cut into equal shards; every
// client first receives one random shard and the rest are dealt at random.
PartitionPlan partition(const Dataset& dataset, const PartitionScheme& scheme, std::size_t clients, Rng& rng);

std::size_t distinct_labels(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace fedguard
