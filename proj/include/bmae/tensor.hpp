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

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace bmae {

using Shape = std::vector<std::int64_t>;

/// 64-byte aligned storage. Vectorized kernels treat the unaligned head of a
/// buffer differently from the rest, so a fixed alignment makes every result
/// a function of shapes and values only, not of allocator placement.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  // True when backward should propagate into this node: either a leaf with
  // requires_grad or the output of an op with at least one tracked input.
  bool tracked = false;
};

/// Dense row-major tensor handle.
///
/// Copies share storage (like a reference-counted buffer); use clone() for a
/// deep copy. Leaves created with requires_grad accumulate gradients across
/// backward passes until zero_grad() is called.
template <typename T>
class BasicTensor {
 public:
  using Scalar = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, const std::vector<T>& values, bool requires_grad = false);
  BasicTensor(Shape shape, Buffer<T> values, bool requires_grad = false);
  BasicTensor(Shape shape, std::initializer_list<T> values, bool requires_grad = false)
      : BasicTensor(std::move(shape), Buffer<T>(values), requires_grad) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor filled(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(node_->value.size());
  }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::int64_t flat) const { return node_->value.at(flat); }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros if nothing has been accumulated yet.
  std::vector<T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    node_->tracked = on;
  }
  bool tracked() const { return node_->tracked; }

  BasicTensor clone() const;
  bool same_storage(const BasicTensor& other) const {
    return node_ == other.node_;
  }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  explicit BasicTensor(std::shared_ptr<TensorNode<T>> node)
      : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace bmae
