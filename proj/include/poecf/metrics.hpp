#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace poecf {

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using ItemSet = std::unordered_set<std::int32_t>;

// |top-K intersect held_out| / min(K, |held_out|).
inline double recall_at_k(const std::vector<std::int32_t>& ranked, const ItemSet& held_out, int k) {
  if (held_out.empty()) throw MetricError("recall_at_k: empty held-out set");
  if (k < 1 || static_cast<std::size_t>(k) > ranked.size())
    throw MetricError("recall_at_k: ranking shorter than K");
  int hits = 0;
  for (int r = 0; r < k; ++r)
    if (held_out.count(ranked[static_cast<std::size_t>(r)])) ++hits;
  const auto norm = std::min<std::size_t>(static_cast<std::size_t>(k), held_out.size());
  return static_cast<double>(hits) / static_cast<double>(norm);
}

// Binary-relevance NDCG with the ideal DCG truncated at min(K, |held_out|).
inline double ndcg_at_k(const std::vector<std::int32_t>& ranked, const ItemSet& held_out, int k) {
  if (held_out.empty()) throw MetricError("ndcg_at_k: empty held-out set");
  if (k < 1 || static_cast<std::size_t>(k) > ranked.size())
    throw MetricError("ndcg_at_k: ranking shorter than K");
  double dcg = 0.0;
  for (int r = 1; r <= k; ++r)
    if (held_out.count(ranked[static_cast<std::size_t>(r - 1)]))
      dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  double idcg = 0.0;
  const auto ideal = std::min<std::size_t>(static_cast<std::size_t>(k), held_out.size());
  for (std::size_t r = 1; r <= ideal; ++r)
    idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return dcg / idcg;
}

// Items ranked by interaction count descending, ties by ascending id.
inline std::vector<std::int32_t> popularity_ranking(const std::vector<std::int64_t>& counts) {
  if (counts.empty()) throw MetricError("popularity_ranking: empty domain");
  std::vector<std::int32_t> ids(counts.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int32_t>(i);
  std::sort(ids.begin(), ids.end(), [&counts](std::int32_t a, std::int32_t b) {
    const auto ca = counts[static_cast<std::size_t>(a)], cb = counts[static_cast<std::size_t>(b)];
    if (ca != cb) return ca > cb;
    return a < b;
  });
  return ids;
}

struct ParetoPoint {
  std::string label;
  std::vector<double> w;
};

// p dominates q iff p.w >= q.w elementwise with a strict inequality
// somewhere. Identical points never dominate each other, so duplicates stay
// on the front.
inline bool pareto_dominates(const ParetoPoint& p, const ParetoPoint& q) {
  bool strictly = false;
  for (std::size_t d = 0; d < p.w.size(); ++d) {
    if (p.w[d] < q.w[d]) return false;
    if (p.w[d] > q.w[d]) strictly = true;
  }
  return strictly;
}

inline std::vector<ParetoPoint> pareto_front(const std::vector<ParetoPoint>& points) {
  for (const auto& p : points) {
    if (p.w.size() != points.front().w.size())
      throw MetricError("pareto_front: mixed dimensions");
    for (double v : p.w)
      if (!std::isfinite(v)) throw MetricError("pareto_front: non-finite value");
  }
  std::vector<ParetoPoint> front;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j)
      if (j != i && pareto_dominates(points[j], points[i])) dominated = true;
    if (!dominated) front.push_back(points[i]);
  }
  return front;
}

inline std::vector<bool> pareto_front_mask(const std::vector<ParetoPoint>& points) {
  std::vector<bool> on_front(points.size(), true);
  for (const auto& p : points) {
    if (p.w.size() != points.front().w.size())
      throw MetricError("pareto_front: mixed dimensions");
    for (double v : p.w)
      if (!std::isfinite(v)) throw MetricError("pareto_front: non-finite value");
  }
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = 0; j < points.size(); ++j)
      if (j != i && pareto_dominates(points[j], points[i])) {
        on_front[i] = false;
        break;
      }
  return on_front;
}

}  // namespace poecf
