#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "poecf/matrix.hpp"
#include "poecf/ops.hpp"
#include "poecf/rng.hpp"

namespace poecf {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Diagonal Gaussian over the latent space; the unit of expert fusion.
struct GaussianPosterior {
  Vec mean;
  Vec var;
};

struct ModelConfig {
  int latent_dim = 200;
  int hidden_dim = 600;
  bool normalize_input = true;
  bool normalize_at_inference = true;  // apply the same L2 scaling when encoding for inference
  bool prior_expert = true;            // include the N(0, I) expert in the product
};

// Weights of the per-term loss. `beta` is the KL weight for the current step
// (the annealing schedule rewrites it), `lambda[d]` scales domain d's
// reconstruction term, `input_dropout` is applied to encoder inputs during
// training only.
struct LossConfig {
  double beta = 1.0;
  std::vector<double> lambda;
  double input_dropout = 0.5;
  int mc_samples = 1;  // latent draws averaged per ELBO evaluation

  void validate(int domain_count) const {
    if (!(beta >= 0.0)) throw ModelError("LossConfig: beta must be >= 0");
    if (mc_samples < 1) throw ModelError("LossConfig: mc_samples must be >= 1");
    if (static_cast<int>(lambda.size()) != domain_count)
      throw ModelError("LossConfig: lambda must have one weight per domain");
    bool any_positive = false;
    for (double l : lambda) {
      if (!(l >= 0.0)) throw ModelError("LossConfig: lambda weights must be >= 0");
      if (l > 0.0) any_positive = true;
    }
    if (!any_positive) throw ModelError("LossConfig: at least one lambda must be positive");
    if (!(input_dropout >= 0.0 && input_dropout < 1.0))
      throw ModelError("LossConfig: input_dropout must be in [0,1)");
  }
};

// One hidden tanh layer per encoder and decoder. Encoder weights are stored
// item-major (I_d x H) so a sparse input row is a sum of contiguous weight
// rows; decoder output weights likewise (I_d x H).
struct DomainEncoder {
  DenseMatrix w1, b1;            // I_d x H, 1 x H
  DenseMatrix w_mu, b_mu;        // k x H, 1 x k
  DenseMatrix w_logsig, b_logsig;  // k x H, 1 x k
};

struct DomainDecoder {
  DenseMatrix w1, b1;      // H x k, 1 x H
  DenseMatrix w_out, b_out;  // I_d x H, 1 x I_d
};

class PoeModel {
 public:
  PoeModel(ModelConfig cfg, std::vector<std::int32_t> item_counts, std::uint64_t init_seed)
      : cfg_(cfg), item_counts_(std::move(item_counts)) {
    if (item_counts_.empty()) throw ModelError("PoeModel: need at least one domain");
    if (cfg_.latent_dim < 1 || cfg_.hidden_dim < 1)
      throw ModelError("PoeModel: latent and hidden dims must be positive");
    for (auto n : item_counts_)
      if (n < 1) throw ModelError("PoeModel: every domain needs at least one item");
    const int h = cfg_.hidden_dim, k = cfg_.latent_dim;
    encoders_.resize(item_counts_.size());
    decoders_.resize(item_counts_.size());
    for (std::size_t d = 0; d < item_counts_.size(); ++d) {
      const int n_items = item_counts_[d];
      auto& e = encoders_[d];
      e.w1 = DenseMatrix(n_items, h);
      e.b1 = DenseMatrix(1, h);
      e.w_mu = DenseMatrix(k, h);
      e.b_mu = DenseMatrix(1, k);
      e.w_logsig = DenseMatrix(k, h);
      e.b_logsig = DenseMatrix(1, k);
      auto& g = decoders_[d];
      g.w1 = DenseMatrix(h, k);
      g.b1 = DenseMatrix(1, h);
      g.w_out = DenseMatrix(n_items, h);
      g.b_out = DenseMatrix(1, n_items);
    }
    init_weights(init_seed);
  }

  int domain_count() const { return static_cast<int>(item_counts_.size()); }
  int latent_dim() const { return cfg_.latent_dim; }
  int hidden_dim() const { return cfg_.hidden_dim; }
  std::int32_t items(int d) const { return item_counts_[static_cast<std::size_t>(d)]; }
  const std::vector<std::int32_t>& item_counts() const { return item_counts_; }
  const ModelConfig& config() const { return cfg_; }
  ModelConfig& config() { return cfg_; }

  DomainEncoder& encoder(int d) { return encoders_[static_cast<std::size_t>(d)]; }
  const DomainEncoder& encoder(int d) const { return encoders_[static_cast<std::size_t>(d)]; }
  DomainDecoder& decoder(int d) { return decoders_[static_cast<std::size_t>(d)]; }
  const DomainDecoder& decoder(int d) const { return decoders_[static_cast<std::size_t>(d)]; }

  // Fixed tensor order: all encoders (w1, b1, w_mu, b_mu, w_logsig, b_logsig)
  // then all decoders (w1, b1, w_out, b_out). Gradient buffers, Adam moments
  // and checkpoints all follow this order.
  static constexpr int kEncTensors = 6;
  static constexpr int kDecTensors = 4;
  int enc_param_base(int d) const { return kEncTensors * d; }
  int dec_param_base(int d) const { return kEncTensors * domain_count() + kDecTensors * d; }
  int tensor_count() const { return (kEncTensors + kDecTensors) * domain_count(); }

  struct ParamRef {
    std::string name;
    DenseMatrix* tensor;
  };

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    out.reserve(static_cast<std::size_t>(tensor_count()));
    for (int d = 0; d < domain_count(); ++d) {
      auto& e = encoders_[static_cast<std::size_t>(d)];
      const std::string p = "enc" + std::to_string(d) + ".";
      out.push_back({p + "w1", &e.w1});
      out.push_back({p + "b1", &e.b1});
      out.push_back({p + "w_mu", &e.w_mu});
      out.push_back({p + "b_mu", &e.b_mu});
      out.push_back({p + "w_logsig", &e.w_logsig});
      out.push_back({p + "b_logsig", &e.b_logsig});
    }
    for (int d = 0; d < domain_count(); ++d) {
      auto& g = decoders_[static_cast<std::size_t>(d)];
      const std::string p = "dec" + std::to_string(d) + ".";
      out.push_back({p + "w1", &g.w1});
      out.push_back({p + "b1", &g.b1});
      out.push_back({p + "w_out", &g.w_out});
      out.push_back({p + "b_out", &g.b_out});
    }
    return out;
  }

  Vec flatten_params() const {
    Vec flat;
    auto refs = const_cast<PoeModel*>(this)->parameters();
    for (const auto& r : refs) flat.insert(flat.end(), r.tensor->data.begin(), r.tensor->data.end());
    return flat;
  }

  void set_flat_params(const Vec& flat) {
    auto refs = parameters();
    std::size_t off = 0;
    for (auto& r : refs) {
      if (off + r.tensor->size() > flat.size()) throw ModelError("set_flat_params: vector too short");
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                flat.begin() + static_cast<std::ptrdiff_t>(off + r.tensor->size()),
                r.tensor->data.begin());
      off += r.tensor->size();
    }
    if (off != flat.size()) throw ModelError("set_flat_params: vector too long");
  }

 private:
  void init_weights(std::uint64_t seed) {
    const int h = cfg_.hidden_dim, k = cfg_.latent_dim;
    int idx = 0;
    auto stream = [&](int fan_in, int fan_out, DenseMatrix& m) {
      Rng rng = Rng::keyed(seed, {hash_label("init"), static_cast<std::uint64_t>(idx++)});
      m.init_uniform_glorot(fan_in, fan_out, rng);
    };
    for (std::size_t d = 0; d < item_counts_.size(); ++d) {
      const int n_items = item_counts_[d];
      stream(n_items, h, encoders_[d].w1);
      ++idx;  // biases stay zero but keep one stream slot per tensor
      stream(h, k, encoders_[d].w_mu);
      ++idx;
      stream(h, k, encoders_[d].w_logsig);
      ++idx;
    }
    for (std::size_t d = 0; d < item_counts_.size(); ++d) {
      const int n_items = item_counts_[d];
      stream(k, h, decoders_[d].w1);
      ++idx;
      stream(h, n_items, decoders_[d].w_out);
      ++idx;
    }
  }

  ModelConfig cfg_;
  std::vector<std::int32_t> item_counts_;
  std::vector<DomainEncoder> encoders_;
  std::vector<DomainDecoder> decoders_;
};

// Gradient buffer mirroring the model's tensor order.
class GradAccum {
 public:
  explicit GradAccum(const PoeModel& model) {
    auto refs = const_cast<PoeModel&>(model).parameters();
    grads_.reserve(refs.size());
    for (const auto& r : refs) grads_.emplace_back(r.tensor->rows, r.tensor->cols);
  }

  DenseMatrix& at(int idx) { return grads_[static_cast<std::size_t>(idx)]; }
  const DenseMatrix& at(int idx) const { return grads_[static_cast<std::size_t>(idx)]; }
  std::size_t size() const { return grads_.size(); }

  void zero() {
    for (auto& g : grads_) g.fill(0.0);
  }

  void add(const GradAccum& other) {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      check_same_shape(grads_[i], other.grads_[i], "GradAccum::add");
      for (std::size_t j = 0; j < grads_[i].data.size(); ++j)
        grads_[i].data[j] += other.grads_[i].data[j];
    }
  }

  void scale(double s) {
    for (auto& g : grads_)
      for (double& v : g.data) v *= s;
  }

  Vec flatten() const {
    Vec flat;
    for (const auto& g : grads_) flat.insert(flat.end(), g.data.begin(), g.data.end());
    return flat;
  }

 private:
  std::vector<DenseMatrix> grads_;
};

using ItemSpan = std::span<const std::int32_t>;

// One user's sparse feedback, one entry per domain; an empty span means the
// domain is absent for this user.
using UserFeedback = std::vector<ItemSpan>;

// ---------------------------------------------------------------------------
// Product of experts
// ---------------------------------------------------------------------------

// Precision-weighted fusion of diagonal Gaussians. With the prior expert
// enabled a unit Gaussian joins the product:
//   V = (sum_d V_d^-1)^-1,  mu = V * (sum_d mu_d V_d^-1).
inline GaussianPosterior product_of_experts(const std::vector<GaussianPosterior>& experts,
                                            bool include_prior = true) {
  if (experts.empty() && !include_prior)
    throw ModelError("product_of_experts: empty expert list with prior disabled");
  std::size_t k = experts.empty() ? 0 : experts.front().mean.size();
  for (const auto& e : experts) {
    if (e.mean.size() != k || e.var.size() != k)
      throw ModelError("product_of_experts: dimension mismatch");
    for (double v : e.var)
      if (!(v > 0.0)) throw ModelError("product_of_experts: variances must be positive");
  }
  if (experts.size() == 1 && !include_prior) return experts.front();  // exact identity
  if (experts.empty()) k = 1;  // prior alone; dimension is degenerate but defined
  Vec precision(k, include_prior ? 1.0 : 0.0);
  Vec weighted_mean(k, 0.0);
  for (const auto& e : experts)
    for (std::size_t j = 0; j < k; ++j) {
      precision[j] += 1.0 / e.var[j];
      weighted_mean[j] += e.mean[j] / e.var[j];
    }
  GaussianPosterior out;
  out.mean.resize(k);
  out.var.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    out.var[j] = 1.0 / precision[j];
    out.mean[j] = weighted_mean[j] * out.var[j];
  }
  return out;
}

// KL(N(mu, diag V) || N(0, I)) = 0.5 sum(V + mu^2 - 1 - ln V).
inline double kl_to_standard_normal(const GaussianPosterior& q) {
  if (q.mean.size() != q.var.size()) throw ModelError("kl_to_standard_normal: shape mismatch");
  double kl = 0.0;
  for (std::size_t j = 0; j < q.mean.size(); ++j) {
    if (!(q.var[j] > 0.0)) throw ModelError("kl_to_standard_normal: variance must be positive");
    kl += q.var[j] + q.mean[j] * q.mean[j] - 1.0 - std::log(q.var[j]);
  }
  return 0.5 * kl;
}

// sum_i x_i log softmax(logits)_i for a sparse binary x.
inline double multinomial_log_likelihood(ItemSpan x_items, const Vec& log_probs) {
  double ll = 0.0;
  for (auto i : x_items) {
    if (i < 0 || static_cast<std::size_t>(i) >= log_probs.size())
      throw ModelError("multinomial_log_likelihood: item id out of range");
    ll += log_probs[static_cast<std::size_t>(i)];
  }
  return ll;
}

inline double multinomial_log_likelihood_dense(const Vec& x, const Vec& logits) {
  if (x.size() != logits.size()) throw ModelError("multinomial_log_likelihood: shape mismatch");
  const Vec ls = log_softmax(logits);
  double ll = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) ll += x[i] * ls[i];
  return ll;
}

// ---------------------------------------------------------------------------
// Encoder / decoder forward passes
// ---------------------------------------------------------------------------

namespace model_detail {

// Forward state kept around for the backward pass.
struct EncodeTrace {
  Vec input_values;  // scaled (and possibly dropped) value per nonzero input
  Vec hidden;        // tanh activations
  Vec logsig;
  GaussianPosterior q;
};

inline EncodeTrace encode_trace(const PoeModel& m, int d, ItemSpan x_items, double dropout,
                                bool training, bool normalize, Rng* rng) {
  if (x_items.empty()) throw ModelError("encode: all-zero input for domain " + std::to_string(d));
  const auto& e = m.encoder(d);
  const int h = m.hidden_dim(), k = m.latent_dim();
  EncodeTrace t;
  t.input_values.resize(x_items.size());
  const double base = normalize ? 1.0 / std::sqrt(static_cast<double>(x_items.size())) : 1.0;
  const bool drop = training && dropout > 0.0;
  const double keep_scale = drop ? 1.0 / (1.0 - dropout) : 1.0;
  for (std::size_t i = 0; i < x_items.size(); ++i) {
    double v = base;
    if (drop) v = (rng->next_unit() < dropout) ? 0.0 : base * keep_scale;
    t.input_values[i] = v;
  }

  Vec pre(static_cast<std::size_t>(h));
  for (int j = 0; j < h; ++j) pre[static_cast<std::size_t>(j)] = e.b1.at(0, j);
  for (std::size_t i = 0; i < x_items.size(); ++i) {
    const double v = t.input_values[i];
    if (v != 0.0) axpy(v, e.w1.row(x_items[i]), pre.data(), h);
  }
  t.hidden.resize(static_cast<std::size_t>(h));
  for (int j = 0; j < h; ++j) t.hidden[static_cast<std::size_t>(j)] = std::tanh(pre[static_cast<std::size_t>(j)]);

  t.q.mean.resize(static_cast<std::size_t>(k));
  t.logsig.resize(static_cast<std::size_t>(k));
  t.q.var.resize(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    t.q.mean[static_cast<std::size_t>(j)] = e.b_mu.at(0, j) + dot(e.w_mu.row(j), t.hidden.data(), h);
    const double ls = e.b_logsig.at(0, j) + dot(e.w_logsig.row(j), t.hidden.data(), h);
    t.logsig[static_cast<std::size_t>(j)] = ls;
    t.q.var[static_cast<std::size_t>(j)] = std::exp(2.0 * ls);
  }
  return t;
}

struct DecodeTrace {
  Vec hidden;
  Vec logits;
};

inline DecodeTrace decode_trace(const PoeModel& m, int d, const Vec& z) {
  const auto& g = m.decoder(d);
  const int h = m.hidden_dim(), k = m.latent_dim(), n = m.items(d);
  DecodeTrace t;
  t.hidden.resize(static_cast<std::size_t>(h));
  for (int j = 0; j < h; ++j)
    t.hidden[static_cast<std::size_t>(j)] = std::tanh(g.b1.at(0, j) + dot(g.w1.row(j), z.data(), k));
  t.logits.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    t.logits[static_cast<std::size_t>(i)] = g.b_out.at(0, i) + dot(g.w_out.row(i), t.hidden.data(), h);
  return t;
}

}  // namespace model_detail

// Variational parameters for one domain. During training the input is
// L2-normalized and element-dropout is applied before the first layer; at
// inference dropout is off and normalization follows the config flags.
inline GaussianPosterior encode_domain(const PoeModel& m, int d, ItemSpan x_items,
                                       double dropout = 0.0, bool training = false,
                                       Rng* rng = nullptr) {
  if (training && dropout > 0.0 && rng == nullptr)
    throw ModelError("encode_domain: dropout needs an rng");
  const bool normalize = m.config().normalize_input &&
                         (training || m.config().normalize_at_inference);
  return model_detail::encode_trace(m, d, x_items, dropout, training, normalize, rng).q;
}

inline GaussianPosterior encode_domain_dense(const PoeModel& m, int d, const Vec& x,
                                             double dropout = 0.0, bool training = false,
                                             Rng* rng = nullptr) {
  if (static_cast<int>(x.size()) != m.items(d)) throw ModelError("encode_domain: shape mismatch");
  std::vector<std::int32_t> items;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != 0.0) items.push_back(static_cast<std::int32_t>(i));
  return encode_domain(m, d, {items.data(), items.size()}, dropout, training, rng);
}

// Raw logits f_theta_t(z); ranking uses these directly.
inline Vec decode_domain(const PoeModel& m, int t, const Vec& z) {
  if (static_cast<int>(z.size()) != m.latent_dim()) throw ModelError("decode_domain: bad z size");
  for (double v : z)
    if (!std::isfinite(v)) throw ModelError("decode_domain: non-finite z");
  return model_detail::decode_trace(m, t, z).logits;
}

// ---------------------------------------------------------------------------
// ELBO (negative, as the loss to minimize) with analytic gradients
// ---------------------------------------------------------------------------

struct ElboResult {
  double loss = 0.0;      // -(sum_d lambda_d log p(x^d|z) - beta KL)
  double recon_ll = 0.0;  // unweighted by -1; sum of lambda_d * ll_d
  double kl = 0.0;
  GaussianPosterior fused;
  Vec z;    // first reparameterized draw
  Vec eps;  // the standard-normal draw behind it
};

// Encodes `input_domains`, fuses with the product of experts, draws
// mc_samples reparameterized samples and reconstructs every domain in
// `target_domains`. Targets may be a superset of inputs; that is the path
// that teaches cross-domain prediction. Gradients (of the loss) are
// accumulated into `grads` when given.
inline ElboResult elbo(const PoeModel& m, const UserFeedback& x,
                       const std::vector<int>& input_domains,
                       const std::vector<int>& target_domains, const LossConfig& loss_cfg,
                       bool training, Rng rng, GradAccum* grads = nullptr) {
  const int dcount = m.domain_count();
  loss_cfg.validate(dcount);
  if (static_cast<int>(x.size()) != dcount) throw ModelError("elbo: feedback size != domain count");
  if (input_domains.empty()) throw ModelError("elbo: empty input domain set");
  for (int d : input_domains) {
    if (d < 0 || d >= dcount) throw ModelError("elbo: input domain out of range");
    if (std::find(target_domains.begin(), target_domains.end(), d) == target_domains.end())
      throw ModelError("elbo: input domains must be a subset of target domains");
  }
  for (int d : target_domains)
    if (x[static_cast<std::size_t>(d)].empty())
      throw ModelError("elbo: target domain " + std::to_string(d) + " has no feedback");

  const int k = m.latent_dim();
  const bool normalize = m.config().normalize_input;
  const bool prior = m.config().prior_expert;

  // Encode. Draw order is fixed: dropout masks per input domain in the given
  // order, then the latent samples.
  std::vector<model_detail::EncodeTrace> traces;
  traces.reserve(input_domains.size());
  for (int d : input_domains)
    traces.push_back(model_detail::encode_trace(m, d, x[static_cast<std::size_t>(d)],
                                                loss_cfg.input_dropout, training, normalize, &rng));

  // Fuse: precision P = [prior] + sum 1/V_d, S = sum mu_d / V_d.
  Vec precision(static_cast<std::size_t>(k), prior ? 1.0 : 0.0);
  Vec weighted_mean(static_cast<std::size_t>(k), 0.0);
  for (const auto& t : traces)
    for (int j = 0; j < k; ++j) {
      precision[static_cast<std::size_t>(j)] += 1.0 / t.q.var[static_cast<std::size_t>(j)];
      weighted_mean[static_cast<std::size_t>(j)] +=
          t.q.mean[static_cast<std::size_t>(j)] / t.q.var[static_cast<std::size_t>(j)];
    }

  ElboResult res;
  res.fused.mean.resize(static_cast<std::size_t>(k));
  res.fused.var.resize(static_cast<std::size_t>(k));
  Vec sigma(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    res.fused.var[static_cast<std::size_t>(j)] = 1.0 / precision[static_cast<std::size_t>(j)];
    res.fused.mean[static_cast<std::size_t>(j)] =
        weighted_mean[static_cast<std::size_t>(j)] * res.fused.var[static_cast<std::size_t>(j)];
    sigma[static_cast<std::size_t>(j)] = std::sqrt(res.fused.var[static_cast<std::size_t>(j)]);
  }
  // Reconstruction averaged over the configured number of reparameterized
  // draws (one by default); sample-path gradients accumulate into dmu/dvar.
  const double sample_w = 1.0 / static_cast<double>(loss_cfg.mc_samples);
  Vec dmu(static_cast<std::size_t>(k), 0.0), dvar(static_cast<std::size_t>(k), 0.0);
  for (int s = 0; s < loss_cfg.mc_samples; ++s) {
    Vec eps;
    Vec z = sample_gaussian(res.fused.mean, sigma, rng, &eps);
    Vec dz(static_cast<std::size_t>(k), 0.0);
    for (int t : target_domains) {
      const double w = sample_w * loss_cfg.lambda[static_cast<std::size_t>(t)];
      const auto trace = model_detail::decode_trace(m, t, z);
      const Vec ls = log_softmax(trace.logits);
      const ItemSpan items = x[static_cast<std::size_t>(t)];
      res.recon_ll += w * multinomial_log_likelihood(items, ls);
      if (!grads) continue;

      // d loss / d logits = w * (N * softmax - x)
      const auto n_t = static_cast<double>(items.size());
      const int n_items = m.items(t);
      Vec dlogits(static_cast<std::size_t>(n_items));
      for (int i = 0; i < n_items; ++i)
        dlogits[static_cast<std::size_t>(i)] = w * n_t * std::exp(ls[static_cast<std::size_t>(i)]);
      for (auto i : items) dlogits[static_cast<std::size_t>(i)] -= w;

      const auto& g = m.decoder(t);
      const int h = m.hidden_dim();
      auto& d_w1 = grads->at(m.dec_param_base(t) + 0);
      auto& d_b1 = grads->at(m.dec_param_base(t) + 1);
      auto& d_wout = grads->at(m.dec_param_base(t) + 2);
      auto& d_bout = grads->at(m.dec_param_base(t) + 3);

      Vec dhidden(static_cast<std::size_t>(h), 0.0);
      for (int i = 0; i < n_items; ++i) {
        const double gi = dlogits[static_cast<std::size_t>(i)];
        d_bout.at(0, i) += gi;
        axpy(gi, trace.hidden.data(), d_wout.row(i), h);
        axpy(gi, g.w_out.row(i), dhidden.data(), h);
      }
      for (int j = 0; j < h; ++j) {
        const double a = trace.hidden[static_cast<std::size_t>(j)];
        const double dpre = dhidden[static_cast<std::size_t>(j)] * (1.0 - a * a);
        d_b1.at(0, j) += dpre;
        axpy(dpre, z.data(), d_w1.row(j), k);
        axpy(dpre, g.w1.row(j), dz.data(), k);
      }
    }
    if (grads)
      for (int j = 0; j < k; ++j) {
        const auto js = static_cast<std::size_t>(j);
        dmu[js] += dz[js];
        dvar[js] += dz[js] * eps[js] * 0.5 / sigma[js];
      }
    if (s == 0) {
      res.z = std::move(z);
      res.eps = std::move(eps);
    }
  }

  res.kl = kl_to_standard_normal(res.fused);
  res.loss = -(res.recon_ll - loss_cfg.beta * res.kl);

  if (grads) {
    // KL term gradients join the sample-path ones.
    for (int j = 0; j < k; ++j) {
      const auto js = static_cast<std::size_t>(j);
      dmu[js] += loss_cfg.beta * res.fused.mean[js];
      dvar[js] += loss_cfg.beta * 0.5 * (1.0 - 1.0 / res.fused.var[js]);
    }
    // Through the fusion mu = S / P, V = 1 / P.
    Vec d_s(static_cast<std::size_t>(k)), d_p(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      const auto js = static_cast<std::size_t>(j);
      d_s[js] = dmu[js] / precision[js];
      d_p[js] = -(dmu[js] * weighted_mean[js] + dvar[js]) / (precision[js] * precision[js]);
    }
    // Per expert: S has term mu_d/V_d, P has term 1/V_d.
    for (std::size_t ti = 0; ti < traces.size(); ++ti) {
      const int d = input_domains[ti];
      const auto& t = traces[ti];
      const auto& e = m.encoder(d);
      const int h = m.hidden_dim();
      Vec dmu_d(static_cast<std::size_t>(k)), dlogsig_d(static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j) {
        const auto js = static_cast<std::size_t>(j);
        const double vd = t.q.var[js];
        dmu_d[js] = d_s[js] / vd;
        const double dvd = -(d_s[js] * t.q.mean[js] + d_p[js]) / (vd * vd);
        dlogsig_d[js] = 2.0 * vd * dvd;  // V = exp(2 logsig)
      }
      auto& d_w1 = grads->at(m.enc_param_base(d) + 0);
      auto& d_b1 = grads->at(m.enc_param_base(d) + 1);
      auto& d_wmu = grads->at(m.enc_param_base(d) + 2);
      auto& d_bmu = grads->at(m.enc_param_base(d) + 3);
      auto& d_wls = grads->at(m.enc_param_base(d) + 4);
      auto& d_bls = grads->at(m.enc_param_base(d) + 5);

      Vec dhidden(static_cast<std::size_t>(h), 0.0);
      for (int j = 0; j < k; ++j) {
        const auto js = static_cast<std::size_t>(j);
        d_bmu.at(0, j) += dmu_d[js];
        axpy(dmu_d[js], t.hidden.data(), d_wmu.row(j), h);
        axpy(dmu_d[js], e.w_mu.row(j), dhidden.data(), h);
        d_bls.at(0, j) += dlogsig_d[js];
        axpy(dlogsig_d[js], t.hidden.data(), d_wls.row(j), h);
        axpy(dlogsig_d[js], e.w_logsig.row(j), dhidden.data(), h);
      }
      const ItemSpan items = x[static_cast<std::size_t>(d)];
      for (int j = 0; j < h; ++j) {
        const double a = t.hidden[static_cast<std::size_t>(j)];
        dhidden[static_cast<std::size_t>(j)] *= (1.0 - a * a);
      }
      for (int j = 0; j < h; ++j) d_b1.at(0, j) += dhidden[static_cast<std::size_t>(j)];
      for (std::size_t i = 0; i < items.size(); ++i) {
        const double v = t.input_values[i];
        if (v != 0.0) axpy(v, dhidden.data(), d_w1.row(items[i]), h);
      }
    }
  }
  return res;
}

struct SubsampledResult {
  double loss = 0.0;
  std::vector<double> term_losses;
};

// Training loss of one user: the joint-input term plus one term per present
// domain, every term reconstructing all present domains. Term i draws from
// fork(i) of `user_rng`, so terms are independent of each other and of
// evaluation order. For a user present in a single domain the joint term and
// the single term coincide; the identical term is counted twice (same
// substream) unless `dedupe_single_domain` drops the repeat.
inline SubsampledResult subsampled_objective(const PoeModel& m, const UserFeedback& x,
                                             const std::vector<int>& present_domains,
                                             const LossConfig& loss_cfg, bool training,
                                             const Rng& user_rng, GradAccum* grads = nullptr,
                                             bool dedupe_single_domain = false) {
  if (present_domains.empty()) throw ModelError("subsampled_objective: user has no domains");
  SubsampledResult res;
  if (present_domains.size() == 1) {
    const int repeats = dedupe_single_domain ? 1 : 2;
    for (int i = 0; i < repeats; ++i) {
      const auto r = elbo(m, x, present_domains, present_domains, loss_cfg, training,
                          user_rng.fork(0), grads);
      res.term_losses.push_back(r.loss);
      res.loss += r.loss;
    }
    return res;
  }
  std::vector<std::vector<int>> inputs;
  inputs.push_back(present_domains);
  for (int d : present_domains) inputs.push_back({d});
  for (std::size_t term = 0; term < inputs.size(); ++term) {
    const auto r = elbo(m, x, inputs[term], present_domains, loss_cfg, training,
                        user_rng.fork(term), grads);
    res.term_losses.push_back(r.loss);
    res.loss += r.loss;
  }
  return res;
}

// Mean of the product-of-experts posterior; deterministic (no sampling, no
// dropout).
inline Vec infer_latent(const PoeModel& m, const UserFeedback& x,
                        const std::vector<int>& input_domains) {
  if (input_domains.empty()) throw ModelError("infer_latent: empty input domain set");
  std::vector<GaussianPosterior> experts;
  experts.reserve(input_domains.size());
  for (int d : input_domains)
    experts.push_back(encode_domain(m, d, x[static_cast<std::size_t>(d)]));
  return product_of_experts(experts, m.config().prior_expert).mean;
}

// Top-K ids by logit, excluded ids removed, ties broken by ascending id.
inline std::vector<std::int32_t> rank_top_k(const Vec& logits,
                                            const std::vector<std::int32_t>& exclude, int k_top) {
  const auto n = static_cast<std::int32_t>(logits.size());
  std::vector<bool> excluded(static_cast<std::size_t>(n), false);
  std::int32_t n_excluded = 0;
  for (auto i : exclude) {
    if (i < 0 || i >= n) throw ModelError("rank_top_k: excluded id out of range");
    if (!excluded[static_cast<std::size_t>(i)]) {
      excluded[static_cast<std::size_t>(i)] = true;
      ++n_excluded;
    }
  }
  if (k_top < 0 || k_top > n - n_excluded)
    throw ModelError("rank_top_k: K exceeds the number of rankable items");
  std::vector<std::int32_t> ids;
  ids.reserve(static_cast<std::size_t>(n - n_excluded));
  for (std::int32_t i = 0; i < n; ++i)
    if (!excluded[static_cast<std::size_t>(i)]) ids.push_back(i);
  const auto cmp = [&logits](std::int32_t a, std::int32_t b) {
    const double la = logits[static_cast<std::size_t>(a)], lb = logits[static_cast<std::size_t>(b)];
    if (la != lb) return la > lb;
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + k_top, ids.end(), cmp);
  ids.resize(static_cast<std::size_t>(k_top));
  return ids;
}

// Top-K items of domain t by logit f_theta_t(z), fold-in items removed.
inline std::vector<std::int32_t> recommend(const PoeModel& m, const Vec& z, int t,
                                           const std::vector<std::int32_t>& exclude, int k_top) {
  return rank_top_k(decode_domain(m, t, z), exclude, k_top);
}

}  // namespace poecf
