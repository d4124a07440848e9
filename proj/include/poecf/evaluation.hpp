#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poecf/checkpoint.hpp"
#include "poecf/dataset.hpp"
#include "poecf/metrics.hpp"
#include "poecf/model.hpp"

namespace poecf {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalOptions {
  std::vector<int> ks = {10, 50};
  // Cross-domain protocol knobs. By default the encoder sees the user's full
  // test-set source history and is scored against the target held-out split
  // (the same ground truth the single-domain protocol uses).
  bool source_history_full = true;
  bool ground_truth_full = false;
};

// Mean metrics for one (protocol, target domain) pair.
struct DomainEval {
  int domain = 0;
  std::vector<int> ks;
  std::vector<double> recall;  // aligned with ks
  std::vector<double> ndcg;
  long long n_users = 0;    // users contributing to the means
  long long n_skipped = 0;  // ineligible users
};

namespace eval_detail {

inline int max_k(const std::vector<int>& ks) {
  if (ks.empty()) throw EvalError("eval: empty K list");
  int m = 0;
  for (int k : ks) {
    if (k < 1) throw EvalError("eval: K must be positive");
    m = std::max(m, k);
  }
  return m;
}

struct Accum {
  std::vector<double> recall_sum, ndcg_sum;
  long long n = 0, skipped = 0;
  explicit Accum(std::size_t n_ks) : recall_sum(n_ks, 0.0), ndcg_sum(n_ks, 0.0) {}

  void add(const std::vector<std::int32_t>& ranked, const ItemSet& held,
           const std::vector<int>& ks) {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      recall_sum[i] += recall_at_k(ranked, held, ks[i]);
      ndcg_sum[i] += ndcg_at_k(ranked, held, ks[i]);
    }
    ++n;
  }

  DomainEval finish(int domain, const std::vector<int>& ks) const {
    DomainEval out;
    out.domain = domain;
    out.ks = ks;
    out.n_users = n;
    out.n_skipped = skipped;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      out.recall.push_back(n ? recall_sum[i] / static_cast<double>(n) : 0.0);
      out.ndcg.push_back(n ? ndcg_sum[i] / static_cast<double>(n) : 0.0);
    }
    return out;
  }
};

inline ItemSet to_set(ItemSpan items) {
  ItemSet s;
  for (auto i : items) s.insert(i);
  return s;
}

inline std::vector<std::int32_t> to_vec(ItemSpan items) {
  return {items.begin(), items.end()};
}

}  // namespace eval_detail

// Encode the fold-in input of domain t, rank t excluding those inputs, score
// against the held-out part. Users without both an input and a held-out
// interaction in t are skipped and counted.
inline DomainEval eval_single_domain(const PoeModel& model, const MultiDomainDataset& input,
                                     const MultiDomainDataset& held, int t,
                                     const std::vector<int>& ks) {
  const int kmax = eval_detail::max_k(ks);
  eval_detail::Accum acc(ks.size());
  for (std::int32_t u = 0; u < input.user_count(); ++u) {
    const auto in_items = input.items(u, t);
    const auto held_items = held.items(u, t);
    if (in_items.empty() || held_items.empty() ||
        model.items(t) - static_cast<int>(in_items.size()) < kmax) {
      ++acc.skipped;
      continue;
    }
    UserFeedback x(static_cast<std::size_t>(input.domain_count()));
    x[static_cast<std::size_t>(t)] = in_items;
    const Vec z = infer_latent(model, x, {t});
    const auto ranked = recommend(model, z, t, eval_detail::to_vec(in_items), kmax);
    acc.add(ranked, eval_detail::to_set(held_items), ks);
  }
  return acc.finish(t, ks);
}

// Encode the user's source-domain history, rank the target domain. Only users
// with history in both domains are eligible. Ground truth defaults to the
// target held-out split; with ground_truth_full it is the user's entire
// target history and nothing is excluded from the ranking.
inline DomainEval eval_cross_domain(const PoeModel& model, const MultiDomainDataset& test_full,
                                    const MultiDomainDataset& input, const MultiDomainDataset& held,
                                    int s, int t, const EvalOptions& opts) {
  const int kmax = eval_detail::max_k(opts.ks);
  eval_detail::Accum acc(opts.ks.size());
  for (std::int32_t u = 0; u < test_full.user_count(); ++u) {
    const auto source_items = opts.source_history_full ? test_full.items(u, s) : input.items(u, s);
    const auto in_t = input.items(u, t);
    const auto truth_items = opts.ground_truth_full ? test_full.items(u, t) : held.items(u, t);
    const std::vector<std::int32_t> exclude =
        opts.ground_truth_full ? std::vector<std::int32_t>{} : eval_detail::to_vec(in_t);
    if (source_items.empty() || truth_items.empty() ||
        model.items(t) - static_cast<int>(exclude.size()) < kmax) {
      ++acc.skipped;
      continue;
    }
    UserFeedback x(static_cast<std::size_t>(test_full.domain_count()));
    x[static_cast<std::size_t>(s)] = source_items;
    const Vec z = infer_latent(model, x, {s});
    const auto ranked = recommend(model, z, t, exclude, kmax);
    acc.add(ranked, eval_detail::to_set(truth_items), opts.ks);
  }
  return acc.finish(t, opts.ks);
}

// Unpersonalized baseline under the same protocol as the model evaluations:
// the popularity order is recomputed per user after removing the fold-in
// items. With source >= 0 the user set matches the cross-domain protocol.
inline DomainEval eval_popularity(const std::vector<std::int64_t>& train_counts,
                                  const MultiDomainDataset& test_full,
                                  const MultiDomainDataset& input, const MultiDomainDataset& held,
                                  int t, const std::vector<int>& ks, int source = -1) {
  if (static_cast<std::int32_t>(train_counts.size()) !=
      test_full.domains[static_cast<std::size_t>(t)].item_count)
    throw EvalError("eval_popularity: count vector does not match the item space");
  const int kmax = eval_detail::max_k(ks);
  const auto full_ranking = popularity_ranking(train_counts);
  eval_detail::Accum acc(ks.size());
  for (std::int32_t u = 0; u < test_full.user_count(); ++u) {
    const auto in_t = input.items(u, t);
    const auto held_items = held.items(u, t);
    const bool source_ok = source < 0 || !test_full.items(u, source).empty();
    if (in_t.empty() || held_items.empty() || !source_ok ||
        static_cast<int>(train_counts.size() - in_t.size()) < kmax) {
      ++acc.skipped;
      continue;
    }
    const auto exclude = eval_detail::to_set(in_t);
    std::vector<std::int32_t> ranked;
    ranked.reserve(static_cast<std::size_t>(kmax));
    for (auto id : full_ranking) {
      if (exclude.count(id)) continue;
      ranked.push_back(id);
      if (static_cast<int>(ranked.size()) == kmax) break;
    }
    acc.add(ranked, eval_detail::to_set(held_items), ks);
  }
  return acc.finish(t, ks);
}

// Merged-domain baseline: the concatenated fold-in input of every domain is
// encoded with the single-domain checkpoint, the target block of the merged
// logits is sliced out and ranked. Only users present in all domains are
// eligible.
inline DomainEval eval_concat(const PoeModel& concat_model, const ConcatInfo& info,
                              const MultiDomainDataset& test_full, const MultiDomainDataset& input,
                              const MultiDomainDataset& held, int t, const std::vector<int>& ks) {
  const int d_count = test_full.domain_count();
  if (static_cast<int>(info.offsets.size()) != d_count)
    throw EvalError("eval_concat: checkpoint concat info does not match the dataset");
  for (int d = 0; d < d_count; ++d)
    if (info.source_items[static_cast<std::size_t>(d)] !=
        test_full.domains[static_cast<std::size_t>(d)].item_count)
      throw EvalError("eval_concat: item count mismatch in domain " + std::to_string(d));
  const int kmax = eval_detail::max_k(ks);
  const std::int32_t off_t = info.offsets[static_cast<std::size_t>(t)];
  const std::int32_t n_t = info.source_items[static_cast<std::size_t>(t)];
  eval_detail::Accum acc(ks.size());
  for (std::int32_t u = 0; u < test_full.user_count(); ++u) {
    bool all_present = true;
    for (int d = 0; d < d_count; ++d)
      if (test_full.items(u, d).empty()) all_present = false;
    const auto in_t = input.items(u, t);
    const auto held_items = held.items(u, t);
    if (!all_present || in_t.empty() || held_items.empty() ||
        n_t - static_cast<int>(in_t.size()) < kmax) {
      ++acc.skipped;
      continue;
    }
    std::vector<std::int32_t> merged_input;
    for (int d = 0; d < d_count; ++d)
      for (auto c : input.items(u, d))
        merged_input.push_back(c + info.offsets[static_cast<std::size_t>(d)]);
    UserFeedback x{ItemSpan{merged_input.data(), merged_input.size()}};
    const Vec z = infer_latent(concat_model, x, {0});
    const Vec merged_logits = decode_domain(concat_model, 0, z);
    const Vec logits(merged_logits.begin() + off_t, merged_logits.begin() + off_t + n_t);
    const auto ranked = rank_top_k(logits, eval_detail::to_vec(in_t), kmax);
    acc.add(ranked, eval_detail::to_set(held_items), ks);
  }
  return acc.finish(t, ks);
}

inline std::vector<std::int64_t> domain_interaction_counts(const MultiDomainDataset& ds, int d) {
  const auto& dom = ds.domains[static_cast<std::size_t>(d)];
  std::vector<std::int64_t> counts(static_cast<std::size_t>(dom.item_count), 0);
  for (const auto& row : dom.rows)
    for (auto c : row) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

// Items of domain t ranked by train-set interaction count.
inline std::vector<std::int32_t> popularity_baseline(const MultiDomainDataset& train, int t) {
  return popularity_ranking(domain_interaction_counts(train, t));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalEntry {
  std::string setting;
  int domain = 0;
  std::string metric;
  int k = 0;
  double value = 0.0;
  long long n_users = 0;
};

struct EvalReport {
  std::string label;
  std::vector<EvalEntry> entries;
};

inline void append_entries(EvalReport& report, const std::string& setting, const DomainEval& ev) {
  for (std::size_t i = 0; i < ev.ks.size(); ++i) {
    report.entries.push_back({setting, ev.domain, "recall", ev.ks[i], ev.recall[i], ev.n_users});
    report.entries.push_back({setting, ev.domain, "ndcg", ev.ks[i], ev.ndcg[i], ev.n_users});
  }
}

inline void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::json j;
  j["label"] = report.label;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : report.entries)
    j["entries"].push_back({{"setting", e.setting},
                            {"domain", e.domain},
                            {"metric", e.metric},
                            {"K", e.k},
                            {"value", e.value},
                            {"n_users", e.n_users}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EvalError("cannot write report: " + path.string());
  out << j.dump(2) << "\n";
}

inline EvalReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open report: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw EvalError("malformed report " + path.string() + ": " + e.what());
  }
  EvalReport report;
  report.label = j.at("label").get<std::string>();
  for (const auto& e : j.at("entries"))
    report.entries.push_back({e.at("setting").get<std::string>(), e.at("domain").get<int>(),
                              e.at("metric").get<std::string>(), e.at("K").get<int>(),
                              e.at("value").get<double>(), e.at("n_users").get<long long>()});
  return report;
}

inline void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EvalError("cannot write report: " + path.string());
  out << "setting,domain,metric,K,value,n_users\n";
  char buf[64];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.value);
    out << e.setting << ',' << e.domain << ',' << e.metric << ',' << e.k << ',' << buf << ','
        << e.n_users << "\n";
  }
}

inline void write_pareto_csv(const std::filesystem::path& path,
                             const std::vector<ParetoPoint>& points,
                             const std::vector<bool>& on_front) {
  if (points.size() != on_front.size()) throw EvalError("write_pareto_csv: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EvalError("cannot write pareto csv: " + path.string());
  const std::size_t dims = points.empty() ? 0 : points.front().w.size();
  out << "label";
  for (std::size_t d = 1; d <= dims; ++d) out << ",w_" << d;
  out << ",on_front\n";
  char buf[64];
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << points[i].label;
    for (double v : points[i].w) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << ',' << (on_front[i] ? 1 : 0) << "\n";
  }
}

}  // namespace poecf
