// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rhythmid {

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& moments,
               std::uint64_t step, double lr, const AdamHyper& hyper) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (moments.m.empty() && moments.v.empty()) {
    moments.m.assign(params.size(), T(0));
    moments.v.assign(params.size(), T(0));
  }
  if (moments.m.size() != params.size() || moments.v.size() != params.size()) {
    throw ShapeError("adam_step: moment buffers do not match " + std::to_string(params.size()) +
                     " parameters");
  }
  if (step == 0) throw std::invalid_argument("adam_step: step count is 1-based");

  const double b1 = hyper.beta1;
  const double b2 = hyper.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = static_cast<double>(grads[i]);
    if (hyper.weight_decay != 0.0) g += hyper.weight_decay * static_cast<double>(params[i]);
    const double m = b1 * static_cast<double>(moments.m[i]) + (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(moments.v[i]) + (1.0 - b2) * g * g;
    moments.m[i] = static_cast<T>(m);
    moments.v[i] = static_cast<T>(v);
    const double update = lr * (m / correction1) / (std::sqrt(v / correction2) + hyper.epsilon);
    params[i] = static_cast<T>(static_cast<double>(params[i]) - update);
  }
}

template <typename T>
Adam<T>::Adam(std::vector<NamedParameter<T>> params, AdamHyper hyper, double clip_norm)
    : params_(std::move(params)), moments_(params_.size()), hyper_(hyper), clip_norm_(clip_norm) {}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void Adam<T>::step(double lr) {
  ++step_;
  double factor = 1.0;
  if (clip_norm_ > 0.0) {
    double sq = 0.0;
    for (const auto& p : params_) {
      for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_norm_) factor = clip_norm_ / norm;
  }
  std::vector<T> scaled;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& tensor = params_[i].tensor;
    std::span<const T> grads = tensor.grad();
    if (factor != 1.0) {
      scaled.assign(grads.begin(), grads.end());
      for (auto& g : scaled) g = static_cast<T>(g * factor);
      grads = scaled;
    }
    adam_step<T>(tensor.mutable_values(), grads, moments_[i], step_, lr, hyper_);
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamMoments<float>&,
                               std::uint64_t, double, const AdamHyper&);
template void adam_step<double>(std::span<double>, std::span<const double>,
                                AdamMoments<double>&, std::uint64_t, double, const AdamHyper&);
template class Adam<float>;
template class Adam<double>;

}  // namespace rhythmid
