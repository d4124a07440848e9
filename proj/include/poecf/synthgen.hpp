#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "poecf/dataset.hpp"
#include "poecf/matrix.hpp"
#include "poecf/ops.hpp"
#include "poecf/rng.hpp"

namespace poecf {

struct SynthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Multi-domain generator with known latent structure. Domain 0 uses the
// user's shared latent; every other domain uses
//   rho * shared + sqrt(1 - rho^2) * independent noise,
// so rho = 1 means one preference vector drives all domains and rho = 0 means
// the domains are unrelated. Interactions are drawn without replacement from
// softmax(scale * (E_d w + pop_d)) with a Poisson-distributed count.
struct SynthConfig {
  std::int32_t n_users = 0;
  std::vector<std::int32_t> n_items;
  int latent_dim = 8;
  double poisson_mean = 20.0;
  double rho = 1.0;
  double missing_domain_fraction = 0.0;  // users whose non-primary domains are erased
  double affinity_scale = 1.5;
  double popularity_spread = 0.5;  // stddev of the per-item offset; 0 disables it
  bool shared_item_embeddings = false;  // reuse domain 0's embeddings everywhere
  std::uint64_t seed = 1;

  void validate() const {
    if (n_users < 1) throw SynthError("SynthConfig: n_users must be positive");
    if (n_items.empty()) throw SynthError("SynthConfig: need at least one domain");
    for (auto n : n_items)
      if (n < 1) throw SynthError("SynthConfig: every domain needs items");
    if (latent_dim < 1) throw SynthError("SynthConfig: latent_dim must be positive");
    if (!(rho >= 0.0 && rho <= 1.0)) throw SynthError("SynthConfig: rho must be in [0,1]");
    if (!(missing_domain_fraction >= 0.0 && missing_domain_fraction < 1.0))
      throw SynthError("SynthConfig: missing_domain_fraction must be in [0,1)");
    if (!(poisson_mean > 0.0)) throw SynthError("SynthConfig: poisson_mean must be positive");
    for (auto n : n_items)
      if (static_cast<double>(n) < poisson_mean)
        throw SynthError("SynthConfig: fewer items than requested interactions per user");
    if (shared_item_embeddings)
      for (auto n : n_items)
        if (n != n_items.front())
          throw SynthError("SynthConfig: shared embeddings need equal item counts");
  }
};

// The ground-truth preference structure behind a generated dataset; exposed
// so tests can compare per-user affinity rankings across domains.
struct SynthLatents {
  std::vector<DenseMatrix> user_latents;     // per domain, n_users x g
  std::vector<DenseMatrix> item_embeddings;  // per domain, n_items x g
  std::vector<Vec> popularity_offsets;       // per domain, n_items
};

namespace synth_detail {

inline constexpr std::uint64_t kUserStream = 0x5A1Du;
inline constexpr std::uint64_t kItemStream = 0x17E8u;
inline constexpr std::uint64_t kDrawStream = 0xD4A3u;
inline constexpr std::uint64_t kMissStream = 0x815Bu;

}  // namespace synth_detail

inline SynthLatents build_synth_latents(const SynthConfig& cfg) {
  cfg.validate();
  const int d_count = static_cast<int>(cfg.n_items.size());
  const int g = cfg.latent_dim;
  SynthLatents lat;
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(g));
  for (int d = 0; d < d_count; ++d) {
    const std::int32_t n = cfg.shared_item_embeddings ? cfg.n_items.front()
                                                      : cfg.n_items[static_cast<std::size_t>(d)];
    DenseMatrix emb(n, g);
    Vec pop(static_cast<std::size_t>(n), 0.0);
    Rng rng = Rng::keyed(cfg.seed, {synth_detail::kItemStream,
                                    cfg.shared_item_embeddings ? 0ull
                                                               : static_cast<std::uint64_t>(d)});
    for (double& v : emb.data) v = rng.next_normal() * emb_scale;
    for (double& v : pop) v = rng.next_normal() * cfg.popularity_spread;
    lat.item_embeddings.push_back(std::move(emb));
    lat.popularity_offsets.push_back(std::move(pop));
  }
  const double noise_scale = std::sqrt(std::max(0.0, 1.0 - cfg.rho * cfg.rho));
  for (int d = 0; d < d_count; ++d)
    lat.user_latents.emplace_back(cfg.n_users, g);
  for (std::int32_t u = 0; u < cfg.n_users; ++u) {
    Rng rng = Rng::keyed(cfg.seed, {synth_detail::kUserStream, static_cast<std::uint64_t>(u)});
    Vec shared(static_cast<std::size_t>(g));
    for (double& v : shared) v = rng.next_normal();
    for (int j = 0; j < g; ++j) lat.user_latents[0].at(u, j) = shared[static_cast<std::size_t>(j)];
    for (int d = 1; d < d_count; ++d)
      for (int j = 0; j < g; ++j)
        lat.user_latents[static_cast<std::size_t>(d)].at(u, j) =
            cfg.rho * shared[static_cast<std::size_t>(j)] + noise_scale * rng.next_normal();
  }
  return lat;
}

// Unnormalized preference logits of user u over domain d's items.
inline Vec synth_affinity(const SynthConfig& cfg, const SynthLatents& lat, std::int32_t u, int d) {
  const auto& emb = lat.item_embeddings[static_cast<std::size_t>(d)];
  const auto& pop = lat.popularity_offsets[static_cast<std::size_t>(d)];
  Vec out(static_cast<std::size_t>(emb.rows));
  for (int i = 0; i < emb.rows; ++i)
    out[static_cast<std::size_t>(i)] =
        cfg.affinity_scale *
        (dot(emb.row(i), lat.user_latents[static_cast<std::size_t>(d)].row(u), emb.cols) +
         pop[static_cast<std::size_t>(i)]);
  return out;
}

inline MultiDomainDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const SynthLatents lat = build_synth_latents(cfg);
  const int d_count = static_cast<int>(cfg.n_items.size());

  // Zero-padded keys so sorted key order equals generation order.
  auto pad = [](std::int64_t v) {
    std::string s = std::to_string(v);
    return std::string(9 - std::min<std::size_t>(9, s.size()), '0') + s;
  };

  MultiDomainDataset ds;
  ds.user_keys.reserve(static_cast<std::size_t>(cfg.n_users));
  for (std::int32_t u = 0; u < cfg.n_users; ++u) ds.user_keys.push_back("u" + pad(u));
  ds.domains.resize(static_cast<std::size_t>(d_count));
  for (int d = 0; d < d_count; ++d) {
    auto& dom = ds.domains[static_cast<std::size_t>(d)];
    dom.domain_id = d;
    dom.item_count = cfg.n_items[static_cast<std::size_t>(d)];
    dom.item_keys.reserve(static_cast<std::size_t>(dom.item_count));
    for (std::int32_t i = 0; i < dom.item_count; ++i) dom.item_keys.push_back("i" + pad(i));
    dom.rows.resize(static_cast<std::size_t>(cfg.n_users));
  }

  for (std::int32_t u = 0; u < cfg.n_users; ++u) {
    const bool erased =
        cfg.missing_domain_fraction > 0.0 &&
        Rng::keyed(cfg.seed, {synth_detail::kMissStream, static_cast<std::uint64_t>(u)})
                .next_unit() < cfg.missing_domain_fraction;
    for (int d = 0; d < d_count; ++d) {
      if (erased && d > 0) continue;
      const auto n_items = cfg.n_items[static_cast<std::size_t>(d)];
      Rng rng = Rng::keyed(cfg.seed, {synth_detail::kDrawStream, static_cast<std::uint64_t>(u),
                                      static_cast<std::uint64_t>(d)});
      std::int32_t n_draw = std::max(1, rng.next_poisson(cfg.poisson_mean));
      n_draw = std::min(n_draw, n_items);

      // Gumbel top-k: keys log p_i + g_i give a sample without replacement
      // proportional to softmax probabilities.
      const Vec logits = synth_affinity(cfg, lat, u, d);
      std::vector<std::pair<double, std::int32_t>> keys;
      keys.reserve(static_cast<std::size_t>(n_items));
      for (std::int32_t i = 0; i < n_items; ++i)
        keys.emplace_back(logits[static_cast<std::size_t>(i)] + rng.next_gumbel(), i);
      std::partial_sort(keys.begin(), keys.begin() + n_draw, keys.end(),
                        [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                        });
      auto& row = ds.domains[static_cast<std::size_t>(d)].rows[static_cast<std::size_t>(u)];
      row.reserve(static_cast<std::size_t>(n_draw));
      for (std::int32_t i = 0; i < n_draw; ++i) row.push_back(keys[static_cast<std::size_t>(i)].second);
      std::sort(row.begin(), row.end());
    }
  }
  ds.presence = recompute_presence(ds);
  return ds;
}

}  // namespace poecf
