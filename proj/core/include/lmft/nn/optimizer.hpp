#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lmft/nn/autograd.hpp"

namespace lmft::nn {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// AdamW with decoupled weight decay and bias-corrected moments.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      first_.emplace_back(p->value.shape(), T{0});
      second_.emplace_back(p->value.shape(), T{0});
    }
  }

  /// Applies one update from the parameters' accumulated gradients. Throws
  /// NumericError before touching any parameter if a gradient is non-finite.
  void step() {
    for (const auto* p : params_) {
      if (!p->grad.all_finite()) throw NumericError("non-finite gradient for parameter " + p->name);
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    const double decay = 1.0 - opts_.lr * opts_.weight_decay;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& w = params_[i]->value.storage();
      const auto& g = params_[i]->grad.storage();
      auto& m = first_[i].storage();
      auto& v = second_[i].storage();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = opts_.beta1 * static_cast<double>(m[j]) + (1.0 - opts_.beta1) * gj;
        const double vj = opts_.beta2 * static_cast<double>(v[j]) + (1.0 - opts_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + opts_.eps);
        w[j] = static_cast<T>(static_cast<double>(w[j]) * decay - opts_.lr * update);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::int64_t step_count() const { return step_; }
  const AdamWOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  const std::vector<BasicTensor<T>>& first_moments() const { return first_; }
  const std::vector<BasicTensor<T>>& second_moments() const { return second_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamWOptions opts_;
  std::vector<BasicTensor<T>> first_;
  std::vector<BasicTensor<T>> second_;
  std::int64_t step_ = 0;
};

}  // namespace lmft::nn
