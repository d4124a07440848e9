#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "poecf/dataset.hpp"
#include "poecf/synthgen.hpp"

using poecf::SynthConfig;

TEST_CASE("generated data satisfies the dataset invariants") {
  SynthConfig cfg;
  cfg.n_users = 400;
  cfg.n_items = {50, 40};
  cfg.latent_dim = 6;
  cfg.poisson_mean = 10.0;
  cfg.rho = 0.7;
  cfg.missing_domain_fraction = 0.3;
  cfg.seed = 12;
  const auto ds = poecf::generate(cfg);

  REQUIRE(ds.user_count() == 400);
  REQUIRE(ds.domain_count() == 2);
  CHECK(ds.presence == poecf::recompute_presence(ds));
  for (int d = 0; d < 2; ++d) {
    for (const auto& row : ds.domains[static_cast<std::size_t>(d)].rows) {
      REQUIRE(std::is_sorted(row.begin(), row.end()));
      REQUIRE(std::adjacent_find(row.begin(), row.end()) == row.end());
      for (auto c : row) REQUIRE(c < ds.domains[static_cast<std::size_t>(d)].item_count);
    }
  }
  // domain 0 is never erased
  for (std::int32_t u = 0; u < ds.user_count(); ++u) REQUIRE(ds.present(u, 0));
  // roughly the requested fraction lost domain 1
  std::int32_t missing = 0;
  for (std::int32_t u = 0; u < ds.user_count(); ++u)
    if (!ds.present(u, 1)) ++missing;
  CHECK(missing > 60);
  CHECK(missing < 180);
}

TEST_CASE("fixed seed reproduces the dataset, another seed does not") {
  SynthConfig cfg;
  cfg.n_users = 100;
  cfg.n_items = {30, 30};
  cfg.seed = 77;
  cfg.poisson_mean = 6.0;
  const auto a = poecf::generate(cfg);
  const auto b = poecf::generate(cfg);
  for (int d = 0; d < 2; ++d)
    REQUIRE(a.domains[static_cast<std::size_t>(d)].rows == b.domains[static_cast<std::size_t>(d)].rows);
  cfg.seed = 78;
  const auto c = poecf::generate(cfg);
  CHECK(a.domains[0].rows != c.domains[0].rows);
}

TEST_CASE("empirical interaction mean tracks the Poisson mean") {
  SynthConfig cfg;
  cfg.n_users = 5000;
  cfg.n_items = {200};
  cfg.poisson_mean = 15.0;
  cfg.seed = 9;
  const auto ds = poecf::generate(cfg);
  const double mean = static_cast<double>(ds.domains[0].total_interactions()) /
                      static_cast<double>(ds.user_count());
  CHECK(std::abs(mean - cfg.poisson_mean) / cfg.poisson_mean < 0.05);
}

TEST_CASE("rho 1 with shared embeddings aligns preference rankings across domains") {
  SynthConfig cfg;
  cfg.n_users = 50;
  cfg.n_items = {40, 40};
  cfg.rho = 1.0;
  cfg.shared_item_embeddings = true;
  cfg.seed = 4;
  const auto lat = poecf::build_synth_latents(cfg);
  for (std::int32_t u = 0; u < cfg.n_users; ++u) {
    const auto a0 = poecf::synth_affinity(cfg, lat, u, 0);
    const auto a1 = poecf::synth_affinity(cfg, lat, u, 1);
    std::vector<std::int32_t> order0(40), order1(40);
    std::iota(order0.begin(), order0.end(), 0);
    std::iota(order1.begin(), order1.end(), 0);
    const auto by = [](const std::vector<double>& v) {
      return [&v](std::int32_t x, std::int32_t y) {
        if (v[static_cast<std::size_t>(x)] != v[static_cast<std::size_t>(y)])
          return v[static_cast<std::size_t>(x)] > v[static_cast<std::size_t>(y)];
        return x < y;
      };
    };
    std::sort(order0.begin(), order0.end(), by(a0));
    std::sort(order1.begin(), order1.end(), by(a1));
    REQUIRE(order0 == order1);
  }
}

TEST_CASE("rho 0 decorrelates the per-domain latents") {
  SynthConfig cfg;
  cfg.n_users = 2000;
  cfg.n_items = {20, 20};
  cfg.rho = 0.0;
  cfg.latent_dim = 3;
  cfg.seed = 14;
  const auto lat = poecf::build_synth_latents(cfg);
  double dot_sum = 0.0;
  for (std::int32_t u = 0; u < cfg.n_users; ++u)
    for (int j = 0; j < 3; ++j) dot_sum += lat.user_latents[0].at(u, j) * lat.user_latents[1].at(u, j);
  CHECK(std::abs(dot_sum / cfg.n_users) < 0.15);
}

TEST_CASE("infeasible interaction counts are rejected") {
  SynthConfig cfg;
  cfg.n_users = 10;
  cfg.n_items = {5};
  cfg.poisson_mean = 9.0;
  CHECK_THROWS_AS(poecf::generate(cfg), poecf::SynthError);
}
