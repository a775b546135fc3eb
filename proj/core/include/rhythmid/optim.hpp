// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rhythmid/encoder.hpp"

namespace rhythmid {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// L2 penalty added to the gradient; 0 disables it.
  double weight_decay = 0.0;
};

/// First and second moment estimates for one parameter tensor.
template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// One bias-corrected Adam update of `params` in place. `step` is the
/// 1-based count of updates including this one.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& moments,
               std::uint64_t step, double lr, const AdamHyper& hyper = {});

/// Adam over a fixed parameter list, with optional global-norm clipping.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedParameter<T>> params, AdamHyper hyper = {}, double clip_norm = 0.0);

  void zero_grad();
  void step(double lr);
  std::uint64_t steps_taken() const { return step_; }
  const std::vector<AdamMoments<T>>& moments() const { return moments_; }

 private:
  std::vector<NamedParameter<T>> params_;
  std::vector<AdamMoments<T>> moments_;
  AdamHyper hyper_;
  double clip_norm_;
  std::uint64_t step_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace rhythmid
