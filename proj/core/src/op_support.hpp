// SPDX-License-Identifier: Apache-2.0
// Internal helpers shared by the op translation units.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rhythmid/tensor.hpp"

namespace rhythmid::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (const T& v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) +
                   " and " + shape_to_string(b));
}

/// Wraps a computed value as an op result, attaching the backward closure
/// only when the graph is being recorded.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::vector<NodePtr<T>> parents,
                      std::function<void(TensorNode<T>&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = false;
  if (grad_enabled()) {
    for (const auto& p : parents) track = track || p->requires_grad;
  }
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

/// Gradient buffer of a parent, or nullptr when it needs none.
template <typename T>
std::vector<T>* grad_of(const NodePtr<T>& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return &p->grad;
}

}  // namespace rhythmid::detail
