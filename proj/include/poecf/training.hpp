#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "poecf/adam.hpp"
#include "poecf/dataset.hpp"
#include "poecf/model.hpp"

namespace poecf {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Objective { joint_only, subsampled };

struct TrainConfig {
  int batch_size = 500;
  int epochs = 0;  // required; there is no default stopping rule
  double learning_rate = 1e-3;
  double anneal_cap = 0.2;
  long long anneal_steps = 200000;
  std::uint64_t seed = 1;
  std::vector<double> lambda;  // empty means all ones
  Objective objective = Objective::subsampled;
  double input_dropout = 0.5;
  int mc_samples = 1;
  int threads = 0;  // 0 = hardware concurrency; part of the determinism key
  bool dedupe_single_domain = false;
  bool trace_grad_norms = false;

  void validate() const {
    if (batch_size < 1) throw TrainError("TrainConfig: batch_size must be positive");
    if (epochs < 1) throw TrainError("TrainConfig: epochs must be positive");
    if (!(learning_rate > 0.0)) throw TrainError("TrainConfig: learning_rate must be positive");
    if (!(anneal_cap >= 0.0 && anneal_cap <= 1.0))
      throw TrainError("TrainConfig: anneal_cap must be in [0,1]");
    if (anneal_steps < 1) throw TrainError("TrainConfig: anneal_steps must be positive");
    if (threads < 0) throw TrainError("TrainConfig: threads must be >= 0");
    if (mc_samples < 1) throw TrainError("TrainConfig: mc_samples must be >= 1");
    if (!(input_dropout >= 0.0 && input_dropout < 1.0))
      throw TrainError("TrainConfig: input_dropout must be in [0,1)");
  }
};

// beta(step) = cap * min(1, step / total_steps); nondecreasing, capped.
struct AnnealSchedule {
  double cap = 0.2;
  long long total_steps = 200000;

  double beta(long long step) const {
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return cap * frac;
  }
};

struct EpochTrace {
  int epoch = 0;
  long long step = 0;   // global step after the epoch
  double beta = 0.0;    // value applied to the epoch's final batch
  double mean_loss = 0.0;
  std::vector<double> decoder_grad_sq;  // per domain, only with trace_grad_norms
};

struct TrainResult {
  std::vector<EpochTrace> trace;
  long long steps = 0;
};

namespace train_detail {

inline constexpr std::uint64_t kShuffleStream = 0x51u;
inline constexpr std::uint64_t kUserStream = 0x05E5u;

struct ChunkAccum {
  GradAccum grads;
  double loss_sum = 0.0;
  explicit ChunkAccum(const PoeModel& m) : grads(m) {}
};

}  // namespace train_detail

// Mini-batch training. Per-user randomness is keyed by (seed, epoch, user
// row), so (seed, data, config) fully determine the parameter trajectory:
// chunked parallelism only changes which thread computes a per-user gradient,
// never the reduction order.
inline TrainResult train(PoeModel& model, const MultiDomainDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.domain_count() != model.domain_count())
    throw TrainError("train: dataset and model disagree on domain count");
  for (int d = 0; d < data.domain_count(); ++d)
    if (data.domains[static_cast<std::size_t>(d)].item_count != model.items(d))
      throw TrainError("train: item count mismatch in domain " + std::to_string(d));
  if (data.user_count() == 0) throw TrainError("train: empty train set");

  std::vector<double> lambda = cfg.lambda;
  if (lambda.empty()) lambda.assign(static_cast<std::size_t>(model.domain_count()), 1.0);

  std::vector<std::int32_t> eligible;
  for (std::int32_t u = 0; u < data.user_count(); ++u) {
    const auto present = data.present_domains(u);
    if (present.empty()) throw TrainError("train: user without any present domain");
    if (cfg.objective == Objective::joint_only &&
        static_cast<int>(present.size()) != data.domain_count())
      continue;
    eligible.push_back(u);
  }
  if (eligible.empty())
    throw TrainError("train: joint_only objective needs users present in all domains");

  const int n_threads = std::max(
      1, cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency()));
  const AnnealSchedule sched{cfg.anneal_cap, cfg.anneal_steps};
  Adam opt(model, AdamConfig{.learning_rate = cfg.learning_rate});

  TrainResult result;
  long long global_step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::int32_t> order = eligible;
    Rng shuffle_rng = Rng::keyed(cfg.seed, {train_detail::kShuffleStream,
                                            static_cast<std::uint64_t>(epoch)});
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    double last_beta = 0.0;
    std::vector<double> dec_grad_sq(static_cast<std::size_t>(model.domain_count()), 0.0);

    for (std::size_t batch_start = 0; batch_start < order.size(); batch_start += cfg.batch_size) {
      const std::size_t batch_end = std::min(order.size(), batch_start + cfg.batch_size);
      const auto batch_n = batch_end - batch_start;
      last_beta = sched.beta(global_step);

      LossConfig loss_cfg;
      loss_cfg.beta = last_beta;
      loss_cfg.lambda = lambda;
      loss_cfg.input_dropout = cfg.input_dropout;
      loss_cfg.mc_samples = cfg.mc_samples;

      const auto n_chunks = static_cast<std::size_t>(
          std::min<std::size_t>(static_cast<std::size_t>(n_threads), batch_n));
      std::vector<train_detail::ChunkAccum> chunks;
      chunks.reserve(n_chunks);
      for (std::size_t c = 0; c < n_chunks; ++c) chunks.emplace_back(model);

      auto run_chunk = [&](std::size_t c) {
        const std::size_t lo = batch_start + c * batch_n / n_chunks;
        const std::size_t hi = batch_start + (c + 1) * batch_n / n_chunks;
        for (std::size_t pos = lo; pos < hi; ++pos) {
          const std::int32_t u = order[pos];
          UserFeedback x(static_cast<std::size_t>(data.domain_count()));
          for (int d = 0; d < data.domain_count(); ++d) x[static_cast<std::size_t>(d)] = data.items(u, d);
          const auto present = data.present_domains(u);
          const Rng user_rng = Rng::keyed(cfg.seed, {train_detail::kUserStream,
                                                     static_cast<std::uint64_t>(epoch),
                                                     static_cast<std::uint64_t>(u)});
          double loss;
          if (cfg.objective == Objective::subsampled) {
            loss = subsampled_objective(model, x, present, loss_cfg, /*training=*/true, user_rng,
                                        &chunks[c].grads, cfg.dedupe_single_domain)
                       .loss;
          } else {
            loss = elbo(model, x, present, present, loss_cfg, /*training=*/true, user_rng.fork(0),
                        &chunks[c].grads)
                       .loss;
          }
          chunks[c].loss_sum += loss;
        }
      };

      if (n_chunks == 1) {
        run_chunk(0);
      } else {
        std::vector<std::thread> pool;
        pool.reserve(n_chunks);
        for (std::size_t c = 0; c < n_chunks; ++c) pool.emplace_back(run_chunk, c);
        for (auto& th : pool) th.join();
      }

      // Fixed-order reduction, then the mean over the batch.
      GradAccum& total = chunks[0].grads;
      double batch_loss = chunks[0].loss_sum;
      for (std::size_t c = 1; c < n_chunks; ++c) {
        total.add(chunks[c].grads);
        batch_loss += chunks[c].loss_sum;
      }
      if (!std::isfinite(batch_loss))
        throw TrainError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(global_step));
      total.scale(1.0 / static_cast<double>(batch_n));

      if (cfg.trace_grad_norms)
        for (int d = 0; d < model.domain_count(); ++d)
          for (int tj = 0; tj < PoeModel::kDecTensors; ++tj)
            for (double v : total.at(model.dec_param_base(d) + tj).data)
              dec_grad_sq[static_cast<std::size_t>(d)] += v * v;

      opt.step(model, total);
      ++global_step;
      epoch_loss += batch_loss;
    }

    EpochTrace tr;
    tr.epoch = epoch;
    tr.step = global_step;
    tr.beta = last_beta;
    tr.mean_loss = epoch_loss / static_cast<double>(order.size());
    if (cfg.trace_grad_norms) tr.decoder_grad_sq = dec_grad_sq;
    result.trace.push_back(tr);
  }
  result.steps = global_step;
  return result;
}

inline void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainError("cannot write loss trace: " + path.string());
  const bool grad_cols = !result.trace.empty() && !result.trace.front().decoder_grad_sq.empty();
  out << "epoch,step,beta,mean_loss";
  if (grad_cols)
    for (std::size_t d = 0; d < result.trace.front().decoder_grad_sq.size(); ++d)
      out << ",dec_grad_sq_" << d;
  out << "\n";
  char buf[64];
  for (const auto& tr : result.trace) {
    out << tr.epoch << ',' << tr.step << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", tr.beta);
    out << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", tr.mean_loss);
    out << buf;
    for (double v : tr.decoder_grad_sq) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
}

}  // namespace poecf
