#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "poecf/matrix.hpp"
#include "poecf/rng.hpp"

namespace poecf {

// log softmax with max-subtraction; exp(out) sums to 1.
inline Vec log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("log_softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(m)) throw std::invalid_argument("log_softmax: non-finite input");
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  Vec out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline Vec log_softmax(const Vec& logits) {
  return log_softmax(std::span<const double>(logits.data(), logits.size()));
}

// y = W x + b, W is (out x in), b is 1 x out.
inline Vec affine_forward(const DenseMatrix& w, const DenseMatrix& b, const Vec& x) {
  if (w.cols != static_cast<int>(x.size()) || b.rows != 1 || b.cols != w.rows)
    throw std::invalid_argument("affine_forward: shape mismatch");
  Vec y(static_cast<std::size_t>(w.rows));
  for (int i = 0; i < w.rows; ++i) y[static_cast<std::size_t>(i)] = b.at(0, i) + dot(w.row(i), x.data(), w.cols);
  return y;
}

inline Vec affine_tanh_forward(const DenseMatrix& w, const DenseMatrix& b, const Vec& x) {
  Vec y = affine_forward(w, b, x);
  for (double& v : y) v = std::tanh(v);
  return y;
}

// Backward of y = W x + b given dL/dy. Accumulates into dw/db, returns dL/dx.
inline Vec affine_backward(const DenseMatrix& w, const Vec& x, const Vec& dy,
                           DenseMatrix& dw, DenseMatrix& db) {
  check_same_shape(w, dw, "affine_backward dw");
  if (static_cast<int>(dy.size()) != w.rows || static_cast<int>(x.size()) != w.cols ||
      db.rows != 1 || db.cols != w.rows)
    throw std::invalid_argument("affine_backward: shape mismatch");
  Vec dx(x.size(), 0.0);
  for (int i = 0; i < w.rows; ++i) {
    const double g = dy[static_cast<std::size_t>(i)];
    db.at(0, i) += g;
    axpy(g, x.data(), dw.row(i), w.cols);
    axpy(g, w.row(i), dx.data(), w.cols);
  }
  return dx;
}

// Backward of y = tanh(W x + b); y is the forward output.
inline Vec affine_tanh_backward(const DenseMatrix& w, const Vec& x, const Vec& y, const Vec& dy,
                                DenseMatrix& dw, DenseMatrix& db) {
  Vec dpre(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i) dpre[i] = dy[i] * (1.0 - y[i] * y[i]);
  return affine_backward(w, x, dpre, dw, db);
}

// Reparameterized draw mu + sigma * eps, eps ~ N(0, I). The eps vector is
// returned through `eps_out` when the caller needs it for gradients.
inline Vec sample_gaussian(const Vec& mu, const Vec& sigma, Rng& rng, Vec* eps_out = nullptr) {
  if (mu.size() != sigma.size()) throw std::invalid_argument("sample_gaussian: shape mismatch");
  Vec z(mu.size());
  if (eps_out) eps_out->resize(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw std::invalid_argument("sample_gaussian: sigma must be positive");
    const double e = rng.next_normal();
    if (eps_out) (*eps_out)[i] = e;
    z[i] = mu[i] + sigma[i] * e;
  }
  return z;
}

}  // namespace poecf
