/*
 * Copyright 2026 The tec Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef TEC_TENSOR_HPP_
#define TEC_TENSOR_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tec/dtype.hpp"

namespace tec {

/*!
 * \brief Dense row-major host tensor.
 *
 * f32 data lives in a float vector, i32/i8 data in an int32 vector
 * (i8 values are range-checked on store). Exactly one of the two
 * backing stores is active, chosen by dtype.
 */
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(TensorType type) : type_(std::move(type)) {
    type_.validate();
    if (type_.dtype == DType::kF32) {
      f_.assign(type_.num_elements(), 0.0f);
    } else {
      i_.assign(type_.num_elements(), 0);
    }
  }

  static DenseTensor zeros(TensorType type) { return DenseTensor(std::move(type)); }

  const TensorType& type() const { return type_; }
  const std::vector<int64_t>& shape() const { return type_.shape; }
  DType dtype() const { return type_.dtype; }
  int64_t num_elements() const { return type_.num_elements(); }

  bool is_float() const { return type_.dtype == DType::kF32; }

  float f_at(int64_t flat) const { return f_[flat]; }
  int64_t i_at(int64_t flat) const { return i_[flat]; }

  void set_f(int64_t flat, float v) { f_[flat] = v; }

  // Stores check the declared integer range; i8 overflow is a real error
  // in the quantized paths, not something to wrap silently.
  void set_i(int64_t flat, int64_t v) {
    if (v < dtype_min(type_.dtype) || v > dtype_max(type_.dtype))
      fail(ErrorCode::kFoldOverflow,
           "value " + std::to_string(v) + " out of range for " +
               dtype_name(type_.dtype));
    i_[flat] = static_cast<int32_t>(v);
  }

  // Generic accessors used by serialization; lossless for all dtypes here.
  double scalar_at(int64_t flat) const {
    return is_float() ? static_cast<double>(f_[flat])
                      : static_cast<double>(i_[flat]);
  }
  void set_scalar(int64_t flat, double v) {
    if (is_float())
      f_[flat] = static_cast<float>(v);
    else
      set_i(flat, static_cast<int64_t>(v));
  }

  std::vector<float>& f_data() { return f_; }
  const std::vector<float>& f_data() const { return f_; }
  std::vector<int32_t>& i_data() { return i_; }
  const std::vector<int32_t>& i_data() const { return i_; }

  // Raw little-endian bytes in row-major order (i8 packs to 1 byte/elem).
  std::vector<uint8_t> to_bytes() const;
  static DenseTensor from_bytes(const TensorType& type,
                                const uint8_t* data, size_t size);

  bool same_values(const DenseTensor& o, double rel_tol) const;

 private:
  TensorType type_;
  std::vector<float> f_;
  std::vector<int32_t> i_;
};

// Uniform random fill: f32 in [-1, 1), integers across a small range that
// keeps i8 products inside i32 accumulators at desk scale.
DenseTensor random_tensor(const TensorType& type, std::mt19937_64& rng);

}  // namespace tec

#endif  // TEC_TENSOR_HPP_
