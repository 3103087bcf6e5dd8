#pragma once

#include "agekit/vit.hpp"

namespace agekit {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

/// Adam with decoupled weight decay over any parameter struct exposing visit().
template <typename T, class P>
class AdamW {
 public:
  AdamW(const P& like, AdamOptions opt) : opt_(opt), m_(zeros_like(like)), v_(zeros_like(like)) {}

  void set_learning_rate(double lr) { opt_.learning_rate = lr; }
  const AdamOptions& options() const { return opt_; }
  long steps() const { return t_; }

  void step(P& params, const P& grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T decay = static_cast<T>(1.0 - opt_.learning_rate * opt_.weight_decay);
    const T step_size = static_cast<T>(opt_.learning_rate / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(opt_.eps);

    auto p = named_tensors<T>(params);
    auto g = named_tensors<T>(grad);
    auto m = named_tensors<T>(m_);
    auto v = named_tensors<T>(v_);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto& pm = *p[i].second;
      const auto& gm = *g[i].second;
      auto& mm = *m[i].second;
      auto& vm = *v[i].second;
      mm = b1 * mm + (T(1) - b1) * gm;
      vm = b2 * vm + (T(1) - b2) * gm.cwiseProduct(gm);
      if (opt_.weight_decay != 0) pm *= decay;
      pm.array() -= step_size * mm.array() / (vm.array().sqrt() * inv_sqrt_bc2 + eps);
    }
  }

 private:
  AdamOptions opt_;
  P m_, v_;
  long t_ = 0;
};

}  // namespace agekit
