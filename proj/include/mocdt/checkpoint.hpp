// Copyright 2026 The MocDT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Checkpoint container, all integers little-endian:
//
//   8 bytes  magic "MOCDTCKP"
//   u32      format version (1)
//   u64      header length N, then N bytes of "key=value\n" lines holding
//            the ModelConfig
//   u32      number of arrays
//   per array:
//     u32 name length, name bytes
//     u32 rank, then rank x u64 dimensions
//     product(dims) x f64 values, row-major
//
// Values are always stored as f64 so 32-bit and 64-bit models share files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mocdt/error.hpp"
#include "mocdt/model.hpp"

namespace mocdt {

inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'C', 'D', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& in, const std::string& what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) throw IoError("truncated checkpoint while reading " + what);
  return v;
}

inline std::string config_to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "d_model=" << c.d_model << "\nlayers=" << c.layers << "\nheads=" << c.heads << "\nhorizon=" << c.horizon
     << "\nvocab=" << c.vocab << "\nnum_users=" << c.num_users << "\nmax_hist=" << c.max_hist
     << "\nnum_objectives=" << c.num_objectives << "\ncontrol_layer=" << c.control_layer << "\nseed=" << c.seed << "\n";
  return os.str();
}

inline ModelConfig config_from_text(const std::string& text) {
  std::map<std::string, std::uint64_t> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("checkpoint header: malformed line '" + line + "'");
    auto v = parse_number<std::uint64_t>(std::string_view(line).substr(eq + 1));
    if (!v) throw ParseError("checkpoint header: bad value in '" + line + "'");
    kv[line.substr(0, eq)] = *v;
  }
  auto need = [&](const char* key) -> std::size_t {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(std::string("checkpoint header: missing key ") + key);
    return static_cast<std::size_t>(it->second);
  };
  ModelConfig c;
  c.d_model = need("d_model");
  c.layers = need("layers");
  c.heads = need("heads");
  c.horizon = need("horizon");
  c.vocab = need("vocab");
  c.num_users = need("num_users");
  c.max_hist = need("max_hist");
  c.num_objectives = need("num_objectives");
  c.control_layer = need("control_layer");
  c.seed = need("seed");
  return c;
}

}  // namespace detail

template <class T>
void save_checkpoint(const Model<T>& model, std::ostream& out) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = detail::config_to_text(model.config());
  detail::put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.params().size()));
  for (std::size_t k = 0; k < model.params().size(); ++k) {
    const auto& name = model.names()[k];
    const auto& a = model.params()[k];
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto shape = a.shape();
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto s : shape) detail::put<std::uint64_t>(out, s);
    for (T v : a.values()) detail::put<double>(out, static_cast<double>(v));
  }
  if (!out) throw IoError("failed writing checkpoint");
}

template <class T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  auto out = detail::open_output(path);
  save_checkpoint(model, out);
}

template <class T>
Model<T> load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ParseError("not a checkpoint file (bad magic)");
  }
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = detail::get<std::uint64_t>(in, "header length");
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) throw IoError("truncated checkpoint header");
  Model<T> model(detail::config_from_text(header));
  const auto count = detail::get<std::uint32_t>(in, "array count");
  if (count != model.params().size()) {
    throw ParseError("checkpoint holds " + std::to_string(count) + " arrays, model expects " +
                     std::to_string(model.params().size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = detail::get<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoError("truncated checkpoint name");
    const auto rank = detail::get<std::uint32_t>(in, "rank");
    std::vector<std::uint64_t> dims;
    for (std::uint32_t r = 0; r < rank; ++r) dims.push_back(detail::get<std::uint64_t>(in, "dimension"));
    diff::Array<T> a;
    if (rank == 0) a = diff::Array<T>::scalar(T(0));
    else if (rank == 1) a = diff::Array<T>::vector(dims[0]);
    else if (rank == 2) a = diff::Array<T>::matrix(dims[0], dims[1]);
    else throw ParseError("checkpoint array '" + name + "' has unsupported rank " + std::to_string(rank));
    for (auto& v : a.values()) v = T(detail::get<double>(in, "values of " + name));
    model.assign(name, std::move(a));
  }
  return model;
}

template <class T>
Model<T> load_checkpoint(const std::string& path) {
  auto in = detail::open_input(path);
  return load_checkpoint<T>(in);
}

}  // namespace mocdt
