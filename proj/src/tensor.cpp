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
#include "tec/tensor.hpp"

#include <cmath>
#include <cstring>

namespace tec {

std::vector<uint8_t> DenseTensor::to_bytes() const {
  std::vector<uint8_t> out(type_.num_bytes());
  const int64_t n = num_elements();
  if (is_float()) {
    std::memcpy(out.data(), f_.data(), n * sizeof(float));
  } else if (dtype() == DType::kI32) {
    std::memcpy(out.data(), i_.data(), n * sizeof(int32_t));
  } else {
    for (int64_t k = 0; k < n; ++k)
      out[k] = static_cast<uint8_t>(static_cast<int8_t>(i_[k]));
  }
  return out;
}

DenseTensor DenseTensor::from_bytes(const TensorType& type,
                                    const uint8_t* data, size_t size) {
  if (static_cast<int64_t>(size) != type.num_bytes())
    fail(ErrorCode::kIOError, "tensor payload has " + std::to_string(size) +
                                  " bytes, expected " +
                                  std::to_string(type.num_bytes()));
  DenseTensor t(type);
  const int64_t n = t.num_elements();
  if (t.is_float()) {
    std::memcpy(t.f_.data(), data, n * sizeof(float));
  } else if (type.dtype == DType::kI32) {
    std::memcpy(t.i_.data(), data, n * sizeof(int32_t));
  } else {
    for (int64_t k = 0; k < n; ++k)
      t.i_[k] = static_cast<int8_t>(data[k]);
  }
  return t;
}

bool DenseTensor::same_values(const DenseTensor& o, double rel_tol) const {
  if (type_ != o.type_) return false;
  const int64_t n = num_elements();
  if (!is_float()) {
    for (int64_t k = 0; k < n; ++k)
      if (i_[k] != o.i_[k]) return false;
    return true;
  }
  for (int64_t k = 0; k < n; ++k) {
    double a = f_[k], b = o.f_[k];
    if (std::isnan(a) || std::isnan(b)) return false;
    double denom = std::max(std::abs(a), std::abs(b));
    // Absolute floor guards tiny magnitudes against spurious rel failures.
    if (std::abs(a - b) > rel_tol * std::max(denom, 1.0)) return false;
  }
  return true;
}

DenseTensor random_tensor(const TensorType& type, std::mt19937_64& rng) {
  DenseTensor t(type);
  const int64_t n = t.num_elements();
  if (t.is_float()) {
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (int64_t k = 0; k < n; ++k) t.set_f(k, dist(rng));
  } else if (type.dtype == DType::kI8) {
    std::uniform_int_distribution<int> dist(-8, 7);
    for (int64_t k = 0; k < n; ++k) t.set_i(k, dist(rng));
  } else {
    std::uniform_int_distribution<int> dist(-100, 100);
    for (int64_t k = 0; k < n; ++k) t.set_i(k, dist(rng));
  }
  return t;
}

}  // namespace tec
