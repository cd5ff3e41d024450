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
#ifndef TEC_DTYPE_HPP_
#define TEC_DTYPE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "tec/error.hpp"

namespace tec {

enum class DType { kF32, kI32, kI8 };

inline int dtype_bytes(DType t) {
  switch (t) {
    case DType::kF32:
    case DType::kI32:
      return 4;
    case DType::kI8:
      return 1;
  }
  return 0;
}

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::kF32:
      return "f32";
    case DType::kI32:
      return "i32";
    case DType::kI8:
      return "i8";
  }
  return "?";
}

DType dtype_from_name(const std::string& name);

inline bool is_int(DType t) { return t != DType::kF32; }

// Inclusive value range for integer types; used by overflow checks.
inline int64_t dtype_min(DType t) {
  return t == DType::kI8 ? -128 : INT32_MIN;
}
inline int64_t dtype_max(DType t) { return t == DType::kI8 ? 127 : INT32_MAX; }

/*!
 * \brief Shape plus element type. Shapes are static; every dimension
 *        must be a positive constant.
 */
struct TensorType {
  std::vector<int64_t> shape;
  DType dtype = DType::kF32;

  TensorType() = default;
  TensorType(std::vector<int64_t> s, DType d) : shape(std::move(s)), dtype(d) {}

  int rank() const { return static_cast<int>(shape.size()); }

  int64_t num_elements() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }

  int64_t num_bytes() const { return num_elements() * dtype_bytes(dtype); }

  void validate() const {
    for (int64_t d : shape) {
      if (d <= 0)
        fail(ErrorCode::kShapeMismatch,
             "tensor dimensions must be positive, got " + std::to_string(d));
    }
  }

  bool operator==(const TensorType& o) const {
    return shape == o.shape && dtype == o.dtype;
  }
  bool operator!=(const TensorType& o) const { return !(*this == o); }

  std::string str() const;
};

// Row-major strides, innermost dimension contiguous.
std::vector<int64_t> row_major_strides(const std::vector<int64_t>& shape);

}  // namespace tec

#endif  // TEC_DTYPE_HPP_
