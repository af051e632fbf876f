#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ddhom/tensor.hpp"

namespace ddhom {

// Staircase exponential decay: lr0 * v^floor(step / n_decay).
struct LrSchedule {
  double lr0 = 0.001;
  double v_decay = 0.7;
  int n_decay = 100;
};

inline double lr_at(const LrSchedule& s, long long step) {
  if (step < 0) throw InvalidInputError("lr_at: negative step");
  return s.lr0 * std::pow(s.v_decay, static_cast<double>(step / s.n_decay));
}

// Standard Adam with bias correction. Moment buffers are lazily shaped to
// the parameter list on the first step.
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  long long timestep() const { return t_; }

  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, double lr) {
    if (params.size() != grads.size()) throw InvalidInputError("adam: params/grads size mismatch");
    if (m_.empty()) {
      m_.reserve(params.size());
      v_.reserve(params.size());
      for (auto* p : params) {
        m_.push_back(Tensor::zeros(p->shape));
        v_.push_back(Tensor::zeros(p->shape));
      }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& g = grads[k];
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      if (!p.same_shape(g)) throw InvalidInputError("adam: grad shape mismatch");
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
        v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
        double mhat = m.data[i] / bc1;
        double vhat = v.data[i] / bc2;
        p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  std::vector<Tensor> m_, v_;
  long long t_ = 0;
};

}  // namespace ddhom
