#pragma once

// Implicit-feedback interaction data: loading, k-core filtering, per-user
// splitting, synthetic generation with planted groups, and the split/label
// file formats.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fairlab {

enum class SplitTag : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

std::string_view split_tag_name(SplitTag tag);
SplitTag parse_split_tag(std::string_view name);  // ArgumentError if unknown

struct Interaction {
  std::uint32_t user;
  std::uint32_t item;
  SplitTag tag = SplitTag::kTrain;

  bool operator==(const Interaction&) const = default;
};

// Immutable once built. Interactions keep insertion order; per-user indices
// are precomputed so histories are cheap.
class InteractionDataset {
 public:
  InteractionDataset() = default;
  // Validates indices and rejects duplicate (user, item) pairs.
  InteractionDataset(std::size_t user_count, std::size_t item_count,
                     std::vector<Interaction> interactions,
                     std::vector<std::string> user_ids = {},
                     std::vector<std::string> item_ids = {},
                     std::vector<std::string> item_titles = {});

  std::size_t user_count() const { return user_count_; }
  std::size_t item_count() const { return item_count_; }
  std::size_t size() const { return interactions_.size(); }
  const std::vector<Interaction>& interactions() const { return interactions_; }

  // Indices into interactions() for user u, insertion order.
  std::span<const std::uint32_t> user_rows(std::size_t u) const;
  std::size_t user_degree(std::size_t u) const { return user_rows(u).size(); }
  // Sorted items of u across all splits.
  std::span<const std::uint32_t> user_items_sorted(std::size_t u) const;
  bool has_interaction(std::size_t u, std::size_t item) const;

  const std::string& user_id(std::size_t u) const { return user_ids_[u]; }
  const std::string& item_id(std::size_t v) const { return item_ids_[v]; }
  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  bool has_titles() const { return !item_titles_.empty(); }
  // Falls back to the raw item id when no metadata was attached.
  const std::string& item_title(std::size_t v) const;

  InteractionDataset with_titles(std::vector<std::string> titles) const;
  InteractionDataset with_tags(std::span<const SplitTag> tags) const;

  std::size_t count(SplitTag tag) const;

 private:
  std::size_t user_count_ = 0;
  std::size_t item_count_ = 0;
  std::vector<Interaction> interactions_;
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
  std::vector<std::string> item_titles_;
  std::vector<std::uint32_t> user_offsets_;
  std::vector<std::uint32_t> user_rows_;
  std::vector<std::uint32_t> user_items_;
};

enum class LabelVisibility { kTestOnly, kSimulation };

// Hidden sensitive labels. Only evaluation and the simulated annotator backend
// take this type; no training entry point accepts it.
struct GroundTruthLabels {
  std::vector<int> labels;
  int arity = 2;
  LabelVisibility visibility = LabelVisibility::kTestOnly;
};

enum class InteractionFormat { kMovielensDat, kTsv };
InteractionFormat parse_interaction_format(std::string_view name);

struct LoadOptions {
  // Fraction of distinct users kept (sampled before any filtering).
  double user_sample_frac = 1.0;
  std::uint64_t sample_seed = 0;
};

InteractionDataset load_interactions(const std::filesystem::path& path,
                                     InteractionFormat format,
                                     const LoadOptions& options = {});

// Iterative k-core: drops users and items with fewer than k interactions
// until nothing changes, then re-indexes densely.
InteractionDataset core_filter(const InteractionDataset& ds, std::size_t k);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Per user of n interactions: test = max(1, floor(test*n)),
// val = max(1, floor(val*n)), the rest is train.
struct SplitSizes {
  std::size_t train;
  std::size_t val;
  std::size_t test;
};
SplitSizes split_sizes(std::size_t n, const SplitRatios& ratios);

InteractionDataset split_per_user(const InteractionDataset& ds,
                                  const SplitRatios& ratios,
                                  std::uint64_t seed);

std::vector<std::uint32_t> user_history(const InteractionDataset& ds,
                                        std::size_t user, SplitTag tag);
std::vector<std::uint32_t> user_history(const InteractionDataset& ds,
                                        std::size_t user,
                                        std::string_view tag);

struct SyntheticSpec {
  std::size_t user_count = 1000;
  std::size_t item_count = 400;
  double group_ratio = 0.5;  // fraction of users in group 0
  std::size_t cluster_count = 2;
  double preference_mix = 0.8;
  std::size_t interactions_per_user = 30;
  // Zipf exponent for item popularity inside a cluster; 0 is uniform.
  double popularity_skew = 0.0;
  std::uint64_t seed = 0;
};

void validate(const SyntheticSpec& spec);

// Item v belongs to cluster cluster_of(v); clusters are contiguous blocks
// whose sizes differ by at most one.
std::size_t synthetic_cluster_of(const SyntheticSpec& spec, std::size_t item);

std::pair<InteractionDataset, GroundTruthLabels> generate_synthetic(
    const SyntheticSpec& spec);
// Same generator with caller-chosen groups (group g prefers cluster g).
InteractionDataset generate_synthetic_with_groups(const SyntheticSpec& spec,
                                                  std::span<const int> groups);

// Metadata sidecar: iid<TAB>title keyed by raw item id.
InteractionDataset attach_metadata(const InteractionDataset& ds,
                                   const std::filesystem::path& path);

// uid<TAB>iid<TAB>{train|val|test}
void write_split_file(const InteractionDataset& ds,
                      const std::filesystem::path& path);
InteractionDataset read_split_file(const std::filesystem::path& path);

// user<TAB>label with raw user ids.
void write_labels(const InteractionDataset& ds, const GroundTruthLabels& labels,
                  const std::filesystem::path& path);
GroundTruthLabels read_labels(const InteractionDataset& ds,
                              const std::filesystem::path& path,
                              LabelVisibility visibility);

}  // namespace fairlab
