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
#ifndef TEC_TESTS_TEST_UTIL_HPP_
#define TEC_TESTS_TEST_UTIL_HPP_

#include <map>
#include <random>
#include <string>
#include <vector>

#include "tec/tensor.hpp"

namespace tec_test {

inline tec::DenseTensor tensor_f32(std::vector<int64_t> shape,
                                   const std::vector<float>& v) {
  tec::DenseTensor t(tec::TensorType{std::move(shape), tec::DType::kF32});
  for (size_t i = 0; i < v.size(); ++i) t.set_f(static_cast<int64_t>(i), v[i]);
  return t;
}

inline tec::DenseTensor tensor_int(tec::DType dt, std::vector<int64_t> shape,
                                   const std::vector<int64_t>& v) {
  tec::DenseTensor t(tec::TensorType{std::move(shape), dt});
  for (size_t i = 0; i < v.size(); ++i) t.set_i(static_cast<int64_t>(i), v[i]);
  return t;
}

inline tec::DenseTensor rand_tensor(const tec::TensorType& type,
                                    uint64_t seed) {
  std::mt19937_64 rng(seed);
  return tec::random_tensor(type, rng);
}

}  // namespace tec_test

#endif  // TEC_TESTS_TEST_UTIL_HPP_
