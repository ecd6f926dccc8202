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

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bmae/tensor.hpp"

namespace bmae {

/// Records differentiable operations in execution order.
///
/// Every op is a member function; an op whose inputs are all untracked is
/// computed without being recorded, so inference on frozen parameters costs
/// nothing extra. backward() replays the records in reverse (which is a
/// reverse topological order because records are appended as outputs are
/// produced) and then clears the tape.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;

  BasicTape() = default;
  // A tape built with recording = false never records; every output is
  // untracked. Used for inference.
  explicit BasicTape(bool recording) : recording_(recording) {}
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  // Matrix product over the last two axes. Rank 2 x rank 2, or rank 3 x rank 3
  // with equal leading (batch) dimension. transpose_a/b transpose the last two
  // axes of the corresponding operand without materializing it.
  TensorT matmul(const TensorT& a, const TensorT& b, bool transpose_a = false,
                 bool transpose_b = false);

  // Elementwise a + b. b may also be a vector whose length equals the last
  // dimension of a; it is then broadcast across all leading positions.
  TensorT add(const TensorT& a, const TensorT& b);
  TensorT sub(const TensorT& a, const TensorT& b);
  TensorT mul(const TensorT& a, const TensorT& b);
  TensorT scale(const TensorT& a, T factor);
  TensorT square(const TensorT& a) { return mul(a, a); }

  TensorT softmax(const TensorT& x, std::int64_t axis = -1);
  // Normalizes each slice along `axis` to zero mean, unit variance (population
  // variance, eps inside the square root). gamma/beta, when defined, must be
  // vectors of the axis length and require axis to be the last one.
  TensorT layernorm(const TensorT& x, const TensorT& gamma, const TensorT& beta,
                    T eps, std::int64_t axis = -1);
  TensorT layernorm(const TensorT& x, T eps, std::int64_t axis = -1) {
    return layernorm(x, TensorT{}, TensorT{}, eps, axis);
  }
  // Exact GELU: x * Phi(x).
  TensorT gelu(const TensorT& x);

  // Rows along axis 0: out[i] = x[indices[i]]. Backward scatter-adds.
  TensorT gather(const TensorT& x, std::span<const std::int64_t> indices);
  // out has n_rows rows; out[indices[i]] += x[i]. Backward gathers.
  TensorT scatter_add(const TensorT& x, std::span<const std::int64_t> indices,
                      std::int64_t n_rows);
  TensorT concat(const std::vector<TensorT>& parts, std::int64_t axis);

  TensorT mean(const TensorT& x, std::int64_t axis);
  TensorT sum(const TensorT& x, std::int64_t axis);
  TensorT mean_all(const TensorT& x);
  TensorT sum_all(const TensorT& x);

  TensorT transpose(const TensorT& x, std::int64_t axis_a, std::int64_t axis_b);
  TensorT reshape(const TensorT& x, Shape shape);

  // Mean over rows of -log softmax(logits)[label]; logits are N x C.
  TensorT cross_entropy(const TensorT& logits,
                        std::span<const std::int32_t> labels);

  /// Propagates d(loss)/d(.) into every tracked tensor and clears the tape.
  /// Gradients accumulate (+=) into existing buffers.
  void backward(const TensorT& loss);

  std::size_t size() const { return records_.size(); }
  bool recording() const { return recording_; }
  void clear() { records_.clear(); }

 private:
  TensorT make_output(Shape shape, Buffer<T> values,
                      std::initializer_list<const TensorT*> inputs);
  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

  std::vector<std::function<void()>> records_;
  bool recording_ = true;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace bmae
