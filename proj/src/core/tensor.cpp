/*
 * Copyright 2026 The bmae Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "bmae/tensor.hpp"

#include <sstream>

#include "bmae/error.hpp"

namespace bmae {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, const std::vector<T>& values,
                            bool requires_grad)
    : BasicTensor(std::move(shape), Buffer<T>(values.begin(), values.end()),
                  requires_grad) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, Buffer<T> values, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  for (auto d : shape) {
    BMAE_REQUIRE(d >= 0, "negative dimension in shape " + to_string(shape));
  }
  BMAE_REQUIRE(static_cast<std::int64_t>(values.size()) == bmae::numel(shape),
               "tensor data size " + std::to_string(values.size()) +
                   " does not match shape " + to_string(shape));
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  node_->tracked = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::filled(Shape shape, T value, bool requires_grad) {
  const auto n = static_cast<std::size_t>(bmae::numel(shape));
  return BasicTensor(std::move(shape), Buffer<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{}, Buffer<T>{value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  BMAE_REQUIRE(node_->value.size() == 1,
               "item() on tensor of shape " + to_string(node_->shape));
  return node_->value[0];
}

template <typename T>
std::vector<T> BasicTensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T(0));
  return std::vector<T>(node_->grad.begin(), node_->grad.end());
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
  return node_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(node_->shape, node_->value, node_->requires_grad);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace bmae
