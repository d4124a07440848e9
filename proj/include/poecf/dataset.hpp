#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "poecf/rng.hpp"

namespace poecf {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One raw review tuple. Before binarization `rating` is the raw score; after
// it is exactly 1.
struct RatingRecord {
  std::string user_key;
  std::string item_key;
  double rating = 0.0;
  int domain_id = 0;
};

// Sparse binary interactions of one domain. Row u lists the column ids the
// user interacted with, sorted ascending and duplicate-free. Column ids are
// dense in [0, item_count); `item_keys` is the column -> key bijection (keys
// sorted, so index_of is a binary search).
struct DomainDataset {
  int domain_id = 0;
  std::int32_t item_count = 0;
  std::vector<std::string> item_keys;
  std::vector<std::vector<std::int32_t>> rows;

  std::int32_t interactions(std::int32_t u) const {
    return static_cast<std::int32_t>(rows[static_cast<std::size_t>(u)].size());
  }

  std::int64_t total_interactions() const {
    std::int64_t n = 0;
    for (const auto& r : rows) n += static_cast<std::int64_t>(r.size());
    return n;
  }

  std::int32_t item_index_of(const std::string& key) const {
    auto it = std::lower_bound(item_keys.begin(), item_keys.end(), key);
    if (it == item_keys.end() || *it != key) return -1;
    return static_cast<std::int32_t>(it - item_keys.begin());
  }
};

// All domains over one shared user row space. presence bit d of user u is set
// iff the user has at least one interaction in domain d.
struct MultiDomainDataset {
  std::vector<std::string> user_keys;  // row -> key, sorted
  std::vector<DomainDataset> domains;
  std::vector<std::uint64_t> presence;

  int domain_count() const { return static_cast<int>(domains.size()); }
  std::int32_t user_count() const { return static_cast<std::int32_t>(user_keys.size()); }

  std::int32_t user_index_of(const std::string& key) const {
    auto it = std::lower_bound(user_keys.begin(), user_keys.end(), key);
    if (it == user_keys.end() || *it != key) return -1;
    return static_cast<std::int32_t>(it - user_keys.begin());
  }

  bool present(std::int32_t u, int d) const {
    return (presence[static_cast<std::size_t>(u)] >> d) & 1u;
  }

  std::vector<int> present_domains(std::int32_t u) const {
    std::vector<int> out;
    for (int d = 0; d < domain_count(); ++d)
      if (present(u, d)) out.push_back(d);
    return out;
  }

  std::span<const std::int32_t> items(std::int32_t u, int d) const {
    const auto& r = domains[static_cast<std::size_t>(d)].rows[static_cast<std::size_t>(u)];
    return {r.data(), r.size()};
  }
};

inline std::vector<std::uint64_t> recompute_presence(const MultiDomainDataset& ds) {
  std::vector<std::uint64_t> mask(static_cast<std::size_t>(ds.user_count()), 0);
  for (int d = 0; d < ds.domain_count(); ++d)
    for (std::int32_t u = 0; u < ds.user_count(); ++u)
      if (!ds.domains[static_cast<std::size_t>(d)].rows[static_cast<std::size_t>(u)].empty())
        mask[static_cast<std::size_t>(u)] |= (1ull << d);
  return mask;
}

struct SplitSpec {
  double train_fraction = 0.95;
  double fold_in_fraction = 0.80;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw DatasetError("SplitSpec: train_fraction must be in (0,1)");
    if (!(fold_in_fraction > 0.0 && fold_in_fraction < 1.0))
      throw DatasetError("SplitSpec: fold_in_fraction must be in (0,1)");
  }
};

// ---------------------------------------------------------------------------
// Pipeline: binarize -> filter_items -> filter_users -> build -> split.
// ---------------------------------------------------------------------------

// Keeps records with rating >= threshold, rewritten as rating 1.
inline std::vector<RatingRecord> binarize(const std::vector<RatingRecord>& records,
                                          double threshold) {
  if (!std::isfinite(threshold)) throw DatasetError("binarize: threshold must be finite");
  std::vector<RatingRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!std::isfinite(r.rating)) throw DatasetError("binarize: non-finite rating");
    if (r.rating >= threshold) {
      out.push_back(r);
      out.back().rating = 1.0;
    }
  }
  return out;
}

// An item survives iff its record count within its domain reaches the
// domain's threshold. Domains absent from the map keep everything.
inline std::vector<RatingRecord> filter_items(const std::vector<RatingRecord>& records,
                                              const std::map<int, std::int64_t>& min_reviews_per_item,
                                              int num_domains) {
  for (const auto& [d, thr] : min_reviews_per_item) {
    if (d < 0 || d >= num_domains)
      throw DatasetError("filter_items: threshold for unknown domain " + std::to_string(d));
    if (thr < 1) throw DatasetError("filter_items: thresholds must be >= 1");
  }
  std::vector<std::unordered_map<std::string, std::int64_t>> counts(
      static_cast<std::size_t>(num_domains));
  for (const auto& r : records) {
    if (r.domain_id < 0 || r.domain_id >= num_domains)
      throw DatasetError("filter_items: record domain out of range");
    ++counts[static_cast<std::size_t>(r.domain_id)][r.item_key];
  }
  std::vector<RatingRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = min_reviews_per_item.find(r.domain_id);
    const std::int64_t thr = (it == min_reviews_per_item.end()) ? 1 : it->second;
    if (counts[static_cast<std::size_t>(r.domain_id)][r.item_key] >= thr) out.push_back(r);
  }
  return out;
}

enum class UserFilterScope { global, per_domain };

// global: a user survives iff their record count across all domains reaches
// the minimum. per_domain: each (user, domain) pair is filtered on its own
// count, so a user can keep one domain and lose another.
inline std::vector<RatingRecord> filter_users(const std::vector<RatingRecord>& records,
                                              std::int64_t min_interactions,
                                              UserFilterScope scope = UserFilterScope::global) {
  if (min_interactions < 0) throw DatasetError("filter_users: min_interactions must be >= 0");
  std::vector<RatingRecord> out;
  out.reserve(records.size());
  if (scope == UserFilterScope::global) {
    std::unordered_map<std::string, std::int64_t> counts;
    for (const auto& r : records) ++counts[r.user_key];
    for (const auto& r : records)
      if (counts[r.user_key] >= min_interactions) out.push_back(r);
  } else {
    std::unordered_map<std::string, std::int64_t> counts;
    for (const auto& r : records) ++counts[r.user_key + "\x1f" + std::to_string(r.domain_id)];
    for (const auto& r : records)
      if (counts[r.user_key + "\x1f" + std::to_string(r.domain_id)] >= min_interactions)
        out.push_back(r);
  }
  return out;
}

// Index assignment is by sorted key order, so any permutation of the same
// record multiset builds the identical dataset. Duplicate (user, item, domain)
// records collapse to a single entry.
inline MultiDomainDataset build_multidomain(const std::vector<RatingRecord>& records,
                                            int num_domains) {
  if (records.empty()) throw DatasetError("build_multidomain: empty record stream");
  if (num_domains < 1 || num_domains > 64)
    throw DatasetError("build_multidomain: need 1..64 domains");

  std::vector<std::string> user_keys;
  std::vector<std::vector<std::string>> item_keys(static_cast<std::size_t>(num_domains));
  {
    std::unordered_set<std::string> users;
    std::vector<std::unordered_set<std::string>> items(static_cast<std::size_t>(num_domains));
    for (const auto& r : records) {
      if (r.domain_id < 0 || r.domain_id >= num_domains)
        throw DatasetError("build_multidomain: record domain out of range");
      users.insert(r.user_key);
      items[static_cast<std::size_t>(r.domain_id)].insert(r.item_key);
    }
    user_keys.assign(users.begin(), users.end());
    std::sort(user_keys.begin(), user_keys.end());
    for (int d = 0; d < num_domains; ++d) {
      auto& ks = item_keys[static_cast<std::size_t>(d)];
      ks.assign(items[static_cast<std::size_t>(d)].begin(), items[static_cast<std::size_t>(d)].end());
      std::sort(ks.begin(), ks.end());
    }
  }

  MultiDomainDataset ds;
  ds.user_keys = std::move(user_keys);
  ds.domains.resize(static_cast<std::size_t>(num_domains));
  for (int d = 0; d < num_domains; ++d) {
    auto& dom = ds.domains[static_cast<std::size_t>(d)];
    dom.domain_id = d;
    dom.item_keys = std::move(item_keys[static_cast<std::size_t>(d)]);
    dom.item_count = static_cast<std::int32_t>(dom.item_keys.size());
    dom.rows.resize(static_cast<std::size_t>(ds.user_count()));
  }
  for (const auto& r : records) {
    const std::int32_t u = ds.user_index_of(r.user_key);
    auto& dom = ds.domains[static_cast<std::size_t>(r.domain_id)];
    dom.rows[static_cast<std::size_t>(u)].push_back(dom.item_index_of(r.item_key));
  }
  for (auto& dom : ds.domains) {
    for (auto& row : dom.rows) {
      std::sort(row.begin(), row.end());
      row.erase(std::unique(row.begin(), row.end()), row.end());
    }
  }
  ds.presence = recompute_presence(ds);
  return ds;
}

namespace detail {

inline constexpr std::uint64_t kSplitStream = 0x5314u;
inline constexpr std::uint64_t kFoldStream = 0xF01Du;

// Dataset restricted to a subset of user rows (keys keep their sorted order,
// so the result satisfies the same indexing invariants).
inline MultiDomainDataset select_users(const MultiDomainDataset& ds,
                                       const std::vector<std::int32_t>& rows_sorted) {
  MultiDomainDataset out;
  out.user_keys.reserve(rows_sorted.size());
  for (auto u : rows_sorted) out.user_keys.push_back(ds.user_keys[static_cast<std::size_t>(u)]);
  out.domains.resize(static_cast<std::size_t>(ds.domain_count()));
  for (int d = 0; d < ds.domain_count(); ++d) {
    auto& dom = out.domains[static_cast<std::size_t>(d)];
    const auto& src = ds.domains[static_cast<std::size_t>(d)];
    dom.domain_id = d;
    dom.item_count = src.item_count;
    dom.item_keys = src.item_keys;
    dom.rows.reserve(rows_sorted.size());
    for (auto u : rows_sorted) dom.rows.push_back(src.rows[static_cast<std::size_t>(u)]);
  }
  out.presence = recompute_presence(out);
  return out;
}

}  // namespace detail

// User-disjoint train/test partition. Test membership is decided by ranking
// seeded per-user hashes and taking the smallest max(1, U - floor(U * f)), so
// counts hit the requested fractions within one user and membership is stable
// under dataset growth except at the rank boundary.
inline std::pair<MultiDomainDataset, MultiDomainDataset> split_users(const MultiDomainDataset& ds,
                                                                     const SplitSpec& spec) {
  spec.validate();
  const std::int32_t n = ds.user_count();
  if (n < 2) throw DatasetError("split_users: need at least 2 users");
  // The nudge keeps exactly-representable products like 0.95 * 100 from
  // flooring one short.
  const auto n_train_target = static_cast<std::int32_t>(
      std::floor(static_cast<double>(n) * spec.train_fraction + 1e-9));
  const std::int32_t n_test = std::max<std::int32_t>(1, n - n_train_target);

  std::vector<std::pair<std::uint64_t, std::int32_t>> ranked;
  ranked.reserve(static_cast<std::size_t>(n));
  for (std::int32_t u = 0; u < n; ++u)
    ranked.emplace_back(
        Rng::keyed(spec.seed, {detail::kSplitStream, static_cast<std::uint64_t>(u)}).next_u64(), u);
  std::sort(ranked.begin(), ranked.end());

  std::vector<std::int32_t> test_rows, train_rows;
  for (std::int32_t i = 0; i < n; ++i)
    (i < n_test ? test_rows : train_rows).push_back(ranked[static_cast<std::size_t>(i)].second);
  std::sort(test_rows.begin(), test_rows.end());
  std::sort(train_rows.begin(), train_rows.end());
  return {detail::select_users(ds, train_rows), detail::select_users(ds, test_rows)};
}

// Single-domain view with the disjoint union of all item spaces, restricted
// to users present in every domain (the merged-domain model only applies in
// the fully supervised setting). `offsets[d]` is where domain d's item block
// starts in the merged space.
struct ConcatView {
  MultiDomainDataset data;
  std::vector<std::int32_t> offsets;
  std::vector<std::int32_t> source_items;
};

inline ConcatView concat_view(const MultiDomainDataset& ds) {
  const int d_count = ds.domain_count();
  if (d_count < 1) throw DatasetError("concat_view: empty dataset");
  ConcatView out;
  std::int32_t off = 0;
  for (int d = 0; d < d_count; ++d) {
    out.offsets.push_back(off);
    const auto n = ds.domains[static_cast<std::size_t>(d)].item_count;
    out.source_items.push_back(n);
    off += n;
  }

  std::vector<std::int32_t> rows;
  const std::uint64_t full = (d_count == 64) ? ~0ull : ((1ull << d_count) - 1);
  for (std::int32_t u = 0; u < ds.user_count(); ++u)
    if (ds.presence[static_cast<std::size_t>(u)] == full) rows.push_back(u);
  if (rows.empty()) throw DatasetError("concat_view: no user is present in every domain");

  out.data.user_keys.reserve(rows.size());
  for (auto u : rows) out.data.user_keys.push_back(ds.user_keys[static_cast<std::size_t>(u)]);
  DomainDataset merged;
  merged.domain_id = 0;
  merged.item_count = off;
  for (int d = 0; d < d_count; ++d) {
    // Fixed-width prefix keeps the merged key list sorted in block order.
    const std::string prefix = (d < 10 ? "d0" : "d") + std::to_string(d) + ":";
    for (const auto& key : ds.domains[static_cast<std::size_t>(d)].item_keys)
      merged.item_keys.push_back(prefix + key);
  }
  merged.rows.reserve(rows.size());
  for (auto u : rows) {
    std::vector<std::int32_t> row;
    for (int d = 0; d < d_count; ++d)
      for (auto c : ds.domains[static_cast<std::size_t>(d)].rows[static_cast<std::size_t>(u)])
        row.push_back(c + out.offsets[static_cast<std::size_t>(d)]);
    merged.rows.push_back(std::move(row));
  }
  out.data.domains.push_back(std::move(merged));
  out.data.presence = recompute_presence(out.data);
  return out;
}

// Per user and domain, masks floor((1 - fold_in_fraction) * N) interactions
// (at least 1 when N >= 2, none when N == 1) into the held-out part; the rest
// stay in the input part. Selection is a seeded uniform sample without
// replacement keyed by (seed, user row, domain).
inline std::pair<MultiDomainDataset, MultiDomainDataset> fold_in_split(
    const MultiDomainDataset& test, const SplitSpec& spec) {
  spec.validate();
  MultiDomainDataset input = test;
  MultiDomainDataset held = test;
  for (int d = 0; d < test.domain_count(); ++d) {
    for (std::int32_t u = 0; u < test.user_count(); ++u) {
      const auto& row = test.domains[static_cast<std::size_t>(d)].rows[static_cast<std::size_t>(u)];
      const auto n = static_cast<std::int32_t>(row.size());
      std::int32_t n_held = 0;
      if (n >= 2) {
        n_held = static_cast<std::int32_t>(
            std::floor((1.0 - spec.fold_in_fraction) * static_cast<double>(n) + 1e-9));
        n_held = std::max<std::int32_t>(1, n_held);
      }
      auto& in_row = input.domains[static_cast<std::size_t>(d)].rows[static_cast<std::size_t>(u)];
      auto& out_row = held.domains[static_cast<std::size_t>(d)].rows[static_cast<std::size_t>(u)];
      in_row.clear();
      out_row.clear();
      if (n == 0) continue;
      Rng rng = Rng::keyed(spec.seed, {detail::kFoldStream, static_cast<std::uint64_t>(u),
                                       static_cast<std::uint64_t>(d)});
      auto picks = rng.sample_without_replacement(n, n_held);
      std::vector<bool> is_held(static_cast<std::size_t>(n), false);
      for (auto p : picks) is_held[static_cast<std::size_t>(p)] = true;
      for (std::int32_t i = 0; i < n; ++i)
        (is_held[static_cast<std::size_t>(i)] ? out_row : in_row).push_back(row[static_cast<std::size_t>(i)]);
    }
  }
  input.presence = recompute_presence(input);
  held.presence = recompute_presence(held);
  return {input, held};
}

}  // namespace poecf
