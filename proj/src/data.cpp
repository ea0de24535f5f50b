#include "fairlab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "fairlab/errors.hpp"
#include "fairlab/rng.hpp"

namespace fairlab {
namespace {

std::vector<std::string_view> split_fields(std::string_view line,
                                           std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  const auto* end = text.data() + text.size();
  const auto result = std::from_chars(text.data(), end, out);
  return result.ec == std::errc() && result.ptr == end;
}

// Dense re-indexing in first-appearance order.
class IdIndex {
 public:
  std::uint32_t get(std::string_view raw) {
    auto [it, inserted] =
        index_.try_emplace(std::string(raw), static_cast<std::uint32_t>(ids_.size()));
    if (inserted) ids_.emplace_back(raw);
    return it->second;
  }
  std::vector<std::string> take() { return std::move(ids_); }

 private:
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::string> ids_;
};

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

std::string_view split_tag_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::kTrain:
      return "train";
    case SplitTag::kVal:
      return "val";
    case SplitTag::kTest:
      return "test";
  }
  return "train";
}

SplitTag parse_split_tag(std::string_view name) {
  if (name == "train") return SplitTag::kTrain;
  if (name == "val") return SplitTag::kVal;
  if (name == "test") return SplitTag::kTest;
  throw ArgumentError("unknown split tag '" + std::string(name) + "'");
}

InteractionFormat parse_interaction_format(std::string_view name) {
  if (name == "movielens-dat" || name == "dat") return InteractionFormat::kMovielensDat;
  if (name == "tsv") return InteractionFormat::kTsv;
  throw ArgumentError("unknown interaction format '" + std::string(name) + "'");
}

InteractionDataset::InteractionDataset(std::size_t user_count,
                                       std::size_t item_count,
                                       std::vector<Interaction> interactions,
                                       std::vector<std::string> user_ids,
                                       std::vector<std::string> item_ids,
                                       std::vector<std::string> item_titles)
    : user_count_(user_count),
      item_count_(item_count),
      interactions_(std::move(interactions)),
      user_ids_(std::move(user_ids)),
      item_ids_(std::move(item_ids)),
      item_titles_(std::move(item_titles)) {
  if (user_ids_.empty()) {
    for (std::size_t u = 0; u < user_count_; ++u) user_ids_.push_back(std::to_string(u));
  }
  if (item_ids_.empty()) {
    for (std::size_t v = 0; v < item_count_; ++v) item_ids_.push_back(std::to_string(v));
  }
  if (user_ids_.size() != user_count_ || item_ids_.size() != item_count_) {
    throw ArgumentError("raw id tables do not match dataset dimensions");
  }
  if (!item_titles_.empty() && item_titles_.size() != item_count_) {
    throw ArgumentError("title table does not match item count");
  }
  std::vector<std::uint32_t> degree(user_count_, 0);
  for (const auto& r : interactions_) {
    if (r.user >= user_count_ || r.item >= item_count_) {
      throw ArgumentError("interaction (" + std::to_string(r.user) + ", " +
                          std::to_string(r.item) + ") out of range");
    }
    ++degree[r.user];
  }
  user_offsets_.assign(user_count_ + 1, 0);
  for (std::size_t u = 0; u < user_count_; ++u) {
    user_offsets_[u + 1] = user_offsets_[u] + degree[u];
  }
  user_rows_.resize(interactions_.size());
  std::vector<std::uint32_t> cursor(user_offsets_.begin(), user_offsets_.end() - 1);
  for (std::size_t i = 0; i < interactions_.size(); ++i) {
    user_rows_[cursor[interactions_[i].user]++] = static_cast<std::uint32_t>(i);
  }
  user_items_.resize(interactions_.size());
  for (std::size_t u = 0; u < user_count_; ++u) {
    const auto begin = user_offsets_[u];
    const auto end = user_offsets_[u + 1];
    for (auto j = begin; j < end; ++j) {
      user_items_[j] = interactions_[user_rows_[j]].item;
    }
    std::sort(user_items_.begin() + begin, user_items_.begin() + end);
    const auto dup = std::adjacent_find(user_items_.begin() + begin,
                                        user_items_.begin() + end);
    if (dup != user_items_.begin() + end) {
      throw ArgumentError("duplicate interaction (" + std::to_string(u) + ", " +
                          std::to_string(*dup) + ")");
    }
  }
}

std::span<const std::uint32_t> InteractionDataset::user_rows(std::size_t u) const {
  return {user_rows_.data() + user_offsets_[u],
          user_offsets_[u + 1] - user_offsets_[u]};
}

std::span<const std::uint32_t> InteractionDataset::user_items_sorted(
    std::size_t u) const {
  return {user_items_.data() + user_offsets_[u],
          user_offsets_[u + 1] - user_offsets_[u]};
}

bool InteractionDataset::has_interaction(std::size_t u, std::size_t item) const {
  const auto items = user_items_sorted(u);
  return std::binary_search(items.begin(), items.end(),
                            static_cast<std::uint32_t>(item));
}

const std::string& InteractionDataset::item_title(std::size_t v) const {
  return item_titles_.empty() ? item_ids_[v] : item_titles_[v];
}

InteractionDataset InteractionDataset::with_titles(
    std::vector<std::string> titles) const {
  return InteractionDataset(user_count_, item_count_, interactions_, user_ids_,
                            item_ids_, std::move(titles));
}

InteractionDataset InteractionDataset::with_tags(
    std::span<const SplitTag> tags) const {
  if (tags.size() != interactions_.size()) {
    throw ArgumentError("tag count does not match interaction count");
  }
  auto rows = interactions_;
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].tag = tags[i];
  return InteractionDataset(user_count_, item_count_, std::move(rows),
                            user_ids_, item_ids_, item_titles_);
}

std::size_t InteractionDataset::count(SplitTag tag) const {
  return static_cast<std::size_t>(
      std::count_if(interactions_.begin(), interactions_.end(),
                    [tag](const Interaction& r) { return r.tag == tag; }));
}

InteractionDataset load_interactions(const std::filesystem::path& path,
                                     InteractionFormat format,
                                     const LoadOptions& options) {
  auto in = open_input(path);
  const std::string_view sep =
      format == InteractionFormat::kMovielensDat ? "::" : "\t";
  struct RawRow {
    std::string user;
    std::string item;
  };
  std::vector<RawRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    const auto fields = split_fields(text, sep);
    if (fields.size() < 2 || fields.size() > 4) {
      throw ParseError("expected 2 to 4 fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    const auto user = trim(fields[0]);
    const auto item = trim(fields[1]);
    if (user.empty() || item.empty()) throw ParseError("empty id", line_no);
    if (fields.size() >= 3) {
      double rating = 0.0;
      if (!parse_double(fields[2], rating)) {
        throw ParseError("rating is not a number", line_no);
      }
      if (!(rating > 0.0)) continue;
    }
    if (fields.size() == 4) {
      double ts = 0.0;
      if (!parse_double(fields[3], ts)) throw ParseError("bad timestamp", line_no);
    }
    rows.push_back({std::string(user), std::string(item)});
  }
  if (rows.empty()) throw EmptyDatasetError("no interactions in " + path.string());

  if (options.user_sample_frac < 1.0) {
    if (!(options.user_sample_frac > 0.0)) {
      throw ArgumentError("user sample fraction must be in (0, 1]");
    }
    std::vector<std::string> users;
    std::unordered_set<std::string> seen;
    for (const auto& r : rows) {
      if (seen.insert(r.user).second) users.push_back(r.user);
    }
    Rng rng(derive_seed(options.sample_seed, "user-sample"));
    rng.shuffle(std::span(users));
    const auto keep = static_cast<std::size_t>(
        std::llround(options.user_sample_frac * static_cast<double>(users.size())));
    const std::unordered_set<std::string> kept(users.begin(),
                                               users.begin() + std::max<std::size_t>(keep, 1));
    std::erase_if(rows, [&](const RawRow& r) { return !kept.contains(r.user); });
  }

  IdIndex users;
  IdIndex items;
  std::vector<Interaction> interactions;
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const auto& r : rows) {
    const auto u = users.get(r.user);
    const auto v = items.get(r.item);
    if (seen.emplace(u, v).second) interactions.push_back({u, v, SplitTag::kTrain});
  }
  auto user_ids = users.take();
  auto item_ids = items.take();
  const std::size_t m = user_ids.size();
  const std::size_t n = item_ids.size();
  return InteractionDataset(m, n, std::move(interactions), std::move(user_ids),
                            std::move(item_ids));
}

InteractionDataset core_filter(const InteractionDataset& ds, std::size_t k) {
  if (k < 1) throw ArgumentError("core size must be >= 1");
  const auto& rows = ds.interactions();
  std::vector<bool> alive(rows.size(), true);
  std::vector<std::size_t> user_deg(ds.user_count(), 0);
  std::vector<std::size_t> item_deg(ds.item_count(), 0);
  for (const auto& r : rows) {
    ++user_deg[r.user];
    ++item_deg[r.item];
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!alive[i]) continue;
      if (user_deg[rows[i].user] < k || item_deg[rows[i].item] < k) {
        alive[i] = false;
        --user_deg[rows[i].user];
        --item_deg[rows[i].item];
        changed = true;
      }
    }
  }
  std::vector<std::int64_t> user_map(ds.user_count(), -1);
  std::vector<std::int64_t> item_map(ds.item_count(), -1);
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::vector<std::string> titles;
  std::vector<Interaction> kept;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!alive[i]) continue;
    const auto& r = rows[i];
    if (user_map[r.user] < 0) {
      user_map[r.user] = static_cast<std::int64_t>(user_ids.size());
      user_ids.push_back(ds.user_id(r.user));
    }
    if (item_map[r.item] < 0) {
      item_map[r.item] = static_cast<std::int64_t>(item_ids.size());
      item_ids.push_back(ds.item_id(r.item));
      if (ds.has_titles()) titles.push_back(ds.item_title(r.item));
    }
    kept.push_back({static_cast<std::uint32_t>(user_map[r.user]),
                    static_cast<std::uint32_t>(item_map[r.item]), r.tag});
  }
  if (kept.empty()) {
    throw EmptyDatasetError(std::to_string(k) +
                            "-core filtering removed every interaction");
  }
  const std::size_t m = user_ids.size();
  const std::size_t n = item_ids.size();
  return InteractionDataset(m, n, std::move(kept), std::move(user_ids),
                            std::move(item_ids), std::move(titles));
}

SplitSizes split_sizes(std::size_t n, const SplitRatios& ratios) {
  const auto portion = [n](double r) {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(r * static_cast<double>(n))));
  };
  const std::size_t test = portion(ratios.test);
  const std::size_t val = portion(ratios.val);
  if (test + val >= n) {
    throw ValidationError("cannot split " + std::to_string(n) +
                          " interactions into nonempty train/val/test");
  }
  return {n - test - val, val, test};
}

InteractionDataset split_per_user(const InteractionDataset& ds,
                                  const SplitRatios& ratios,
                                  std::uint64_t seed) {
  std::vector<SplitTag> tags(ds.size(), SplitTag::kTrain);
  for (std::size_t u = 0; u < ds.user_count(); ++u) {
    const auto rows = ds.user_rows(u);
    if (rows.size() < 3) {
      throw ValidationError("user " + ds.user_id(u) + " has " +
                            std::to_string(rows.size()) +
                            " interactions; splitting needs at least 3");
    }
    std::vector<std::uint32_t> order(rows.begin(), rows.end());
    Rng rng(derive_seed(seed, u, 0x5b117));
    rng.shuffle(std::span(order));
    const auto sizes = split_sizes(order.size(), ratios);
    for (std::size_t j = 0; j < order.size(); ++j) {
      SplitTag tag = SplitTag::kTrain;
      if (j < sizes.test) {
        tag = SplitTag::kTest;
      } else if (j < sizes.test + sizes.val) {
        tag = SplitTag::kVal;
      }
      tags[order[j]] = tag;
    }
  }
  return ds.with_tags(tags);
}

std::vector<std::uint32_t> user_history(const InteractionDataset& ds,
                                        std::size_t user, SplitTag tag) {
  if (user >= ds.user_count()) {
    throw ArgumentError("user index " + std::to_string(user) + " out of range");
  }
  std::vector<std::uint32_t> out;
  for (auto row : ds.user_rows(user)) {
    const auto& r = ds.interactions()[row];
    if (r.tag == tag) out.push_back(r.item);
  }
  return out;
}

std::vector<std::uint32_t> user_history(const InteractionDataset& ds,
                                        std::size_t user,
                                        std::string_view tag) {
  return user_history(ds, user, parse_split_tag(tag));
}

void validate(const SyntheticSpec& spec) {
  if (spec.user_count < 1 || spec.item_count < 1) {
    throw ArgumentError("synthetic spec needs users and items");
  }
  if (!(spec.group_ratio > 0.0 && spec.group_ratio < 1.0)) {
    throw ArgumentError("group_ratio must lie in (0, 1)");
  }
  if (spec.cluster_count < 2 || spec.cluster_count > spec.item_count) {
    throw ArgumentError("cluster_count must be in [2, item_count]");
  }
  if (!(spec.preference_mix > 0.5 && spec.preference_mix <= 1.0)) {
    throw ArgumentError("preference_mix must lie in (0.5, 1]");
  }
  if (!(spec.popularity_skew >= 0.0)) {
    throw ArgumentError("popularity_skew must be >= 0");
  }
  if (spec.interactions_per_user < 10) {
    throw ArgumentError("interactions_per_user must be >= 10");
  }
  if (spec.interactions_per_user > spec.item_count) {
    throw ArgumentError("infeasible synthetic spec: " +
                        std::to_string(spec.interactions_per_user) +
                        " interactions per user exceed " +
                        std::to_string(spec.item_count) + " items");
  }
  const std::size_t smallest_cluster = spec.item_count / spec.cluster_count;
  if (spec.preference_mix == 1.0 &&
      spec.interactions_per_user > smallest_cluster) {
    throw ArgumentError(
        "infeasible synthetic spec: preference_mix = 1 needs clusters of at "
        "least interactions_per_user items");
  }
}

namespace {

std::size_t cluster_begin(const SyntheticSpec& spec, std::size_t c) {
  const std::size_t base = spec.item_count / spec.cluster_count;
  const std::size_t extra = spec.item_count % spec.cluster_count;
  return c * base + std::min(c, extra);
}

std::size_t cluster_size(const SyntheticSpec& spec, std::size_t c) {
  return cluster_begin(spec, c + 1) - cluster_begin(spec, c);
}

}  // namespace

std::size_t synthetic_cluster_of(const SyntheticSpec& spec, std::size_t item) {
  std::size_t c = 0;
  while (c + 1 < spec.cluster_count && cluster_begin(spec, c + 1) <= item) ++c;
  return c;
}

InteractionDataset generate_synthetic_with_groups(const SyntheticSpec& spec,
                                                  std::span<const int> groups) {
  validate(spec);
  if (groups.size() != spec.user_count) {
    throw ArgumentError("group vector does not match user count");
  }
  const std::size_t clusters = spec.cluster_count;
  std::vector<Interaction> rows;
  rows.reserve(spec.user_count * spec.interactions_per_user);
  std::vector<std::size_t> taken(clusters);
  std::vector<std::vector<double>> popularity(clusters);
  if (spec.popularity_skew > 0.0) {
    for (std::size_t c = 0; c < clusters; ++c) {
      for (std::size_t j = 0; j < cluster_size(spec, c); ++j) {
        popularity[c].push_back(
            std::pow(static_cast<double>(j + 1), -spec.popularity_skew));
      }
    }
  }
  for (std::size_t u = 0; u < spec.user_count; ++u) {
    const auto own = static_cast<std::size_t>(groups[u]) % clusters;
    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < clusters; ++c) {
      if (c != own) others.push_back(c);
    }
    // Draws are made in cluster-relative coordinates (own vs. the i-th other
    // cluster, offset within the cluster) so relabelling groups together with
    // the matching cluster permutation maps datasets onto each other.
    Rng rng(derive_seed(spec.seed, u, 0x5e7e));
    std::vector<std::uint32_t> chosen;
    std::fill(taken.begin(), taken.end(), 0);
    while (chosen.size() < spec.interactions_per_user) {
      const bool in_own = rng.uniform() < spec.preference_mix;
      const std::size_t cluster =
          in_own ? own : others[rng.uniform_index(others.size())];
      if (taken[cluster] == cluster_size(spec, cluster)) continue;
      const std::size_t offset =
          popularity[cluster].empty()
              ? rng.uniform_index(cluster_size(spec, cluster))
              : rng.categorical(popularity[cluster]);
      const auto item =
          static_cast<std::uint32_t>(cluster_begin(spec, cluster) + offset);
      if (std::find(chosen.begin(), chosen.end(), item) != chosen.end()) continue;
      chosen.push_back(item);
      ++taken[cluster];
    }
    for (auto item : chosen) {
      rows.push_back({static_cast<std::uint32_t>(u), item, SplitTag::kTrain});
    }
  }
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::vector<std::string> titles;
  for (std::size_t u = 0; u < spec.user_count; ++u) user_ids.push_back("u" + std::to_string(u));
  for (std::size_t c = 0; c < clusters; ++c) {
    for (std::size_t j = 0; j < cluster_size(spec, c); ++j) {
      item_ids.push_back("i" + std::to_string(cluster_begin(spec, c) + j));
      titles.push_back("cluster" + std::to_string(c) + "_item" + std::to_string(j));
    }
  }
  return InteractionDataset(spec.user_count, spec.item_count, std::move(rows),
                            std::move(user_ids), std::move(item_ids),
                            std::move(titles));
}

std::pair<InteractionDataset, GroundTruthLabels> generate_synthetic(
    const SyntheticSpec& spec) {
  validate(spec);
  GroundTruthLabels labels;
  labels.arity = 2;
  labels.visibility = LabelVisibility::kSimulation;
  labels.labels.resize(spec.user_count);
  Rng rng(derive_seed(spec.seed, "synthetic-groups"));
  for (auto& g : labels.labels) g = rng.uniform() < spec.group_ratio ? 0 : 1;
  auto ds = generate_synthetic_with_groups(spec, labels.labels);
  return {std::move(ds), std::move(labels)};
}

InteractionDataset attach_metadata(const InteractionDataset& ds,
                                   const std::filesystem::path& path) {
  auto in = open_input(path);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t v = 0; v < ds.item_count(); ++v) index.emplace(ds.item_id(v), v);
  std::vector<std::string> titles(ds.item_ids());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto tab = text.find('\t');
    if (tab == std::string_view::npos) throw ParseError("expected iid<TAB>title", line_no);
    const auto it = index.find(std::string(trim(text.substr(0, tab))));
    if (it != index.end()) titles[it->second] = std::string(trim(text.substr(tab + 1)));
  }
  return ds.with_titles(std::move(titles));
}

void write_split_file(const InteractionDataset& ds,
                      const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& r : ds.interactions()) {
    out << ds.user_id(r.user) << '\t' << ds.item_id(r.item) << '\t'
        << split_tag_name(r.tag) << '\n';
  }
}

InteractionDataset read_split_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  IdIndex users;
  IdIndex items;
  std::vector<Interaction> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto fields = split_fields(text, "\t");
    if (fields.size() != 3) throw ParseError("expected uid<TAB>iid<TAB>tag", line_no);
    SplitTag tag;
    try {
      tag = parse_split_tag(trim(fields[2]));
    } catch (const ArgumentError& e) {
      throw ParseError(e.what(), line_no);
    }
    rows.push_back({users.get(trim(fields[0])), items.get(trim(fields[1])), tag});
  }
  if (rows.empty()) throw EmptyDatasetError("no interactions in " + path.string());
  auto user_ids = users.take();
  auto item_ids = items.take();
  const std::size_t m = user_ids.size();
  const std::size_t n = item_ids.size();
  return InteractionDataset(m, n, std::move(rows), std::move(user_ids),
                            std::move(item_ids));
}

void write_labels(const InteractionDataset& ds, const GroundTruthLabels& labels,
                  const std::filesystem::path& path) {
  auto out = open_output(path);
  for (std::size_t u = 0; u < labels.labels.size(); ++u) {
    out << ds.user_id(u) << '\t' << labels.labels[u] << '\n';
  }
}

GroundTruthLabels read_labels(const InteractionDataset& ds,
                              const std::filesystem::path& path,
                              LabelVisibility visibility) {
  auto in = open_input(path);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t u = 0; u < ds.user_count(); ++u) index.emplace(ds.user_id(u), u);
  GroundTruthLabels labels;
  labels.visibility = visibility;
  labels.labels.assign(ds.user_count(), -1);
  int max_label = 1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto fields = split_fields(text, "\t");
    double value = 0.0;
    if (fields.size() != 2 || !parse_double(fields[1], value) || value < 0 ||
        value != std::floor(value)) {
      throw ParseError("expected user<TAB>nonnegative integer label", line_no);
    }
    const auto it = index.find(std::string(trim(fields[0])));
    if (it == index.end()) continue;
    labels.labels[it->second] = static_cast<int>(value);
    max_label = std::max(max_label, static_cast<int>(value));
  }
  labels.arity = max_label + 1;
  return labels;
}

}  // namespace fairlab
