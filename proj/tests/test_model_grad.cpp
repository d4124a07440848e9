#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "poecf/grad_check.hpp"
#include "poecf/model.hpp"
#include "poecf/rng.hpp"

using poecf::GradAccum;
using poecf::LossConfig;
using poecf::ModelConfig;
using poecf::PoeModel;
using poecf::Rng;
using poecf::UserFeedback;
using poecf::Vec;

namespace {

struct GradCase {
  std::vector<std::vector<std::int32_t>> items;  // per domain; empty = absent
  std::vector<int> inputs;
  std::vector<int> targets;
};

double check_elbo_grad(PoeModel& model, const GradCase& gc, const LossConfig& cfg, bool training,
                       std::uint64_t rng_seed) {
  UserFeedback x(gc.items.size());
  for (std::size_t d = 0; d < gc.items.size(); ++d)
    x[d] = {gc.items[d].data(), gc.items[d].size()};

  GradAccum grads(model);
  poecf::elbo(model, x, gc.inputs, gc.targets, cfg, training, Rng(rng_seed), &grads);
  const Vec analytic = grads.flatten();
  const Vec point = model.flatten_params();
  const auto f = [&](const Vec& p) {
    model.set_flat_params(p);
    const double loss = poecf::elbo(model, x, gc.inputs, gc.targets, cfg, training, Rng(rng_seed)).loss;
    return loss;
  };
  const double err = poecf::grad_check(f, analytic, point, 1e-5);
  model.set_flat_params(point);
  return err;
}

double check_subsampled_grad(PoeModel& model, const std::vector<std::vector<std::int32_t>>& items,
                             const std::vector<int>& present, const LossConfig& cfg,
                             std::uint64_t rng_seed) {
  UserFeedback x(items.size());
  for (std::size_t d = 0; d < items.size(); ++d) x[d] = {items[d].data(), items[d].size()};

  GradAccum grads(model);
  poecf::subsampled_objective(model, x, present, cfg, true, Rng(rng_seed), &grads);
  const Vec analytic = grads.flatten();
  const Vec point = model.flatten_params();
  const auto f = [&](const Vec& p) {
    model.set_flat_params(p);
    return poecf::subsampled_objective(model, x, present, cfg, true, Rng(rng_seed)).loss;
  };
  const double err = poecf::grad_check(f, analytic, point, 1e-5);
  model.set_flat_params(point);
  return err;
}

}  // namespace

TEST_CASE("elbo gradients pass the finite-difference check across input configurations") {
  ModelConfig mc;
  mc.latent_dim = 3;
  mc.hidden_dim = 4;
  PoeModel model(mc, {6, 5}, 21);

  LossConfig cfg;
  cfg.beta = 0.4;
  cfg.lambda = {1.0, 0.7};
  cfg.input_dropout = 0.5;

  const std::vector<GradCase> cases = {
      {{{0, 2, 5}, {1, 4}}, {0, 1}, {0, 1}},  // joint input, joint targets
      {{{0, 2, 5}, {1, 4}}, {0}, {0, 1}},     // single input, cross-reconstruction
      {{{0, 2, 5}, {1, 4}}, {1}, {0, 1}},
      {{{3}, {}}, {0}, {0}},                  // user present in one domain
  };

  int idx = 0;
  for (const auto& gc : cases) {
    SECTION("case " + std::to_string(idx) + " with dropout") {
      const double err = check_elbo_grad(model, gc, cfg, /*training=*/true, 1000 + idx);
      CHECK(err < 1e-4);
    }
    SECTION("case " + std::to_string(idx) + " without training noise") {
      LossConfig plain = cfg;
      plain.input_dropout = 0.0;
      const double err = check_elbo_grad(model, gc, plain, /*training=*/false, 2000 + idx);
      CHECK(err < 1e-4);
    }
    ++idx;
  }
}

TEST_CASE("elbo gradients hold without the prior expert and at beta 0") {
  ModelConfig mc;
  mc.latent_dim = 2;
  mc.hidden_dim = 3;
  mc.prior_expert = false;
  PoeModel model(mc, {4, 4}, 3);

  LossConfig cfg;
  cfg.beta = 0.0;
  cfg.lambda = {0.5, 2.0};
  cfg.input_dropout = 0.0;

  GradCase gc{{{0, 3}, {1, 2}}, {0, 1}, {0, 1}};
  CHECK(check_elbo_grad(model, gc, cfg, false, 7) < 1e-4);
}

TEST_CASE("elbo gradients hold with several monte-carlo samples") {
  ModelConfig mc;
  mc.latent_dim = 3;
  mc.hidden_dim = 4;
  PoeModel model(mc, {6, 5}, 55);

  LossConfig cfg;
  cfg.beta = 0.3;
  cfg.lambda = {1.0, 0.8};
  cfg.input_dropout = 0.4;
  cfg.mc_samples = 3;

  GradCase gc{{{0, 2, 5}, {1, 4}}, {0, 1}, {0, 1}};
  CHECK(check_elbo_grad(model, gc, cfg, true, 91) < 1e-4);
}

TEST_CASE("subsampled objective gradients pass the finite-difference check") {
  ModelConfig mc;
  mc.latent_dim = 3;
  mc.hidden_dim = 4;
  PoeModel model(mc, {6, 5}, 33);

  LossConfig cfg;
  cfg.beta = 0.25;
  cfg.lambda = {1.0, 1.3};
  cfg.input_dropout = 0.5;

  CHECK(check_subsampled_grad(model, {{0, 2, 5}, {1, 4}}, {0, 1}, cfg, 11) < 1e-4);
  CHECK(check_subsampled_grad(model, {{1, 2}, {}}, {0}, cfg, 12) < 1e-4);
}
