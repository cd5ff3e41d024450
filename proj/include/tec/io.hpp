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
#ifndef TEC_IO_HPP_
#define TEC_IO_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "tec/tensor.hpp"
#include "vendor/json.hpp"

namespace tec {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::vector<uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path,
                       const std::vector<uint8_t>& data);

std::string base64_encode(const std::vector<uint8_t>& data);
std::vector<uint8_t> base64_decode(const std::string& text);

/*!
 * \brief On-disk tensor: `<name>.bin` raw little-endian row-major data
 *        next to `<name>.json` holding {"name","shape","dtype"}.
 */
void save_tensor(const std::string& dir, const std::string& name,
                 const DenseTensor& t);
DenseTensor load_tensor(const std::string& dir, const std::string& name);

nlohmann::json parse_json(const std::string& text, const std::string& what);

}  // namespace tec

#endif  // TEC_IO_HPP_
