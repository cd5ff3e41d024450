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
#include "tec/io.hpp"

#include <fstream>
#include <sstream>

#include "tec/error.hpp"

namespace tec {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIOError, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIOError, "cannot write " + path);
  out << content;
}

std::vector<uint8_t> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) fail(ErrorCode::kIOError, "cannot open " + path);
  auto size = in.tellg();
  std::vector<uint8_t> data(static_cast<size_t>(size));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()), size);
  return data;
}

void write_binary_file(const std::string& path,
                       const std::vector<uint8_t>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIOError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
}

namespace {
const char kB64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<uint8_t>& data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= data.size()) {
    uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
    i += 3;
  }
  size_t rem = data.size() - i;
  if (rem == 1) {
    uint32_t v = data[i] << 16;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += "==";
  } else if (rem == 2) {
    uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  int8_t lut[256];
  for (int i = 0; i < 256; ++i) lut[i] = -1;
  for (int i = 0; i < 64; ++i) lut[static_cast<uint8_t>(kB64[i])] = i;
  std::vector<uint8_t> out;
  uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    int8_t v = lut[static_cast<uint8_t>(c)];
    if (v < 0) fail(ErrorCode::kIOError, "invalid base64 payload");
    acc = (acc << 6) | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

void save_tensor(const std::string& dir, const std::string& name,
                 const DenseTensor& t) {
  nlohmann::json manifest = {{"name", name},
                             {"shape", t.shape()},
                             {"dtype", dtype_name(t.dtype())}};
  write_text_file(dir + "/" + name + ".json", manifest.dump(2) + "\n");
  write_binary_file(dir + "/" + name + ".bin", t.to_bytes());
}

DenseTensor load_tensor(const std::string& dir, const std::string& name) {
  nlohmann::json manifest =
      parse_json(read_text_file(dir + "/" + name + ".json"), name + ".json");
  TensorType type(manifest.at("shape").get<std::vector<int64_t>>(),
                  dtype_from_name(manifest.at("dtype").get<std::string>()));
  auto bytes = read_binary_file(dir + "/" + name + ".bin");
  return DenseTensor::from_bytes(type, bytes.data(), bytes.size());
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded())
    fail(ErrorCode::kIOError, "malformed JSON in " + what);
  return j;
}

}  // namespace tec
