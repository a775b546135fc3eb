// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck.hpp
 * @brief  Central-difference checks of reverse-mode gradients.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rhythmid/tensor.hpp"

namespace rhythmid {

/// Re-evaluates the function from the current values of the checked inputs.
/// It must be deterministic (reseed any Rng inside).
using GradFunction = std::function<Tensor<double>()>;

struct GradCheckResult {
  /// max |analytic - numeric| / max(1, |numeric|) over every checked entry.
  double max_error = 0.0;
  std::size_t entries = 0;
};

/// Compares backward() against central differences for every entry of
/// `inputs`, which are leaves read by `fn` and perturbed in place. A
/// non-scalar output is contracted with fixed random weights drawn from
/// `projection_seed`.
GradCheckResult grad_check(const GradFunction& fn, std::vector<Tensor<double>> inputs,
                           double eps = 1e-5, std::uint64_t projection_seed = 7);

/// Runs every differentiable op, the banded attention (with and without
/// dropout), a small padded encoder, and the fusion head under each seed.
/// Returns the worst error per case name.
std::map<std::string, double> run_gradcheck_suite(std::span<const std::uint64_t> seeds);

}  // namespace rhythmid
