#pragma once

#include <cmath>
#include <vector>

#include "poecf/model.hpp"

namespace poecf {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers mirror the model's tensor order.
class Adam {
 public:
  Adam(const PoeModel& model, AdamConfig cfg) : cfg_(cfg), m_(model), v_(model) {}

  long long step_count() const { return t_; }

  void step(PoeModel& model, const GradAccum& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto refs = model.parameters();
    for (std::size_t i = 0; i < refs.size(); ++i) {
      auto& p = refs[i].tensor->data;
      auto& m = m_.at(static_cast<int>(i)).data;
      auto& v = v_.at(static_cast<int>(i)).data;
      const auto& g = grads.at(static_cast<int>(i)).data;
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        p[j] -= cfg_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.epsilon);
      }
    }
  }

 private:
  AdamConfig cfg_;
  long long t_ = 0;
  GradAccum m_, v_;
};

}  // namespace poecf
