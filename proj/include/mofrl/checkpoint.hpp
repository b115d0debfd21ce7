// Copyright 2026 The mofrl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Checkpoint layout (all integers little-endian u32, floats little-endian
// IEEE-754 binary32):
//
//   magic     8 bytes  "MOFRLCKP"
//   version   u32      1
//   hlen      u32      byte length of the JSON header
//   header    hlen     {"config": ModelConfig, "metadata": {...}}
//   count     u32      number of arrays
//   count x { u32 name_len, name bytes, u32 rows, u32 cols,
//             rows*cols floats in row-major order }

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "json.hpp"
#include "mofrl/error.hpp"
#include "mofrl/transformer.hpp"

namespace mofrl {

inline constexpr std::array<char, 8> kCheckpointMagic = {'M', 'O', 'F', 'R', 'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw Error(ErrorCode::kFormatError, "truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, double v) {
  write_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline double read_f32(std::istream& is) {
  return static_cast<double>(std::bit_cast<float>(read_u32(is)));
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const Transformer& model,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_u32(os, kCheckpointVersion);
  const nlohmann::json header = {{"config", model.config()}, {"metadata", metadata}};
  const std::string text = header.dump();
  detail::write_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));

  std::uint32_t count = 0;
  model.params().visit([&](const std::string&, const Matrix&) { ++count; });
  detail::write_u32(os, count);
  model.params().visit([&](const std::string& name, const Matrix& m) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(m.rows()));
    detail::write_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::write_f32(os, m.data()[i]);
  });
}

struct LoadedCheckpoint {
  Transformer model;
  nlohmann::json metadata;
};

inline LoadedCheckpoint load_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCheckpointMagic) throw Error(ErrorCode::kFormatError, "not a checkpoint");
  const auto version = detail::read_u32(is);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormatError, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto hlen = detail::read_u32(is);
  std::string text(hlen, '\0');
  is.read(text.data(), hlen);
  if (!is) throw Error(ErrorCode::kFormatError, "truncated checkpoint header");
  const auto header = nlohmann::json::parse(text);
  const auto config = header.at("config").get<ModelConfig>();
  config.validate();

  std::map<std::string, Matrix> arrays;
  const auto count = detail::read_u32(is);
  for (std::uint32_t a = 0; a < count; ++a) {
    std::string name(detail::read_u32(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rows = detail::read_u32(is);
    const auto cols = detail::read_u32(is);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = detail::read_f32(is);
    arrays.emplace(std::move(name), std::move(m));
  }

  ModelParams params = ModelParams::zeros(config);
  params.visit([&](const std::string& name, Matrix& m) {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw Error(ErrorCode::kFormatError, "checkpoint lacks " + name);
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw Error(ErrorCode::kFormatError, "shape mismatch for " + name);
    }
    m = it->second;
  });
  return {Transformer(config, std::move(params)),
          header.contains("metadata") ? header["metadata"] : nlohmann::json::object()};
}

inline void save_checkpoint(const std::string& path, const Transformer& model,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIoError, "cannot write " + path);
  save_checkpoint(os, model, metadata);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoError, "cannot read " + path);
  return load_checkpoint(is);
}

/// Rounds every parameter to binary32, matching a save/load round trip.
inline void quantize_to_f32(Transformer& model) {
  model.params().visit([](const std::string&, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
    }
  });
}

}  // namespace mofrl
