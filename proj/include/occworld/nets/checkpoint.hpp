// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint files:
//   "OCKP1" | u64 config fingerprint | string config JSON | u32 tensor count
//   | per tensor: string name, u32 rank, u32 dims[rank], f32 values
//   | u8 has optimizer | [u64 step | per tensor: f32 m, f32 v]
// Strings are u32 length + bytes; everything is little-endian.

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "occworld/core/binary_io.hpp"
#include "occworld/nets/optim.hpp"

namespace occworld::nets {

inline constexpr char kCheckpointMagic[] = "OCKP1";

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::string config_json;
  std::vector<TensorRecord> tensors;
  bool has_optimizer = false;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m, v;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  io::write_bytes(os, kCheckpointMagic, 5);
  io::write_uint(os, c.fingerprint);
  io::write_string(os, c.config_json);
  io::write_uint(os, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    io::write_string(os, t.name);
    io::write_uint(os, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) io::write_uint(os, d);
    for (float x : t.values) io::write_f32(os, x);
  }
  io::write_uint(os, static_cast<std::uint8_t>(c.has_optimizer ? 1 : 0));
  if (c.has_optimizer) {
    io::write_uint(os, c.step);
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
      for (float x : c.m.at(i)) io::write_f32(os, x);
      for (float x : c.v.at(i)) io::write_f32(os, x);
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& is, const std::string& context) {
  io::Reader r(is, context);
  char magic[5];
  r.read_exact(magic, 5);
  if (std::string_view(magic, 4) != "OCKP") {
    throw DataError(context + ": bad magic bytes, expected 'OCKP1'");
  }
  if (magic[4] != '1') {
    throw DataError(context + ": unsupported checkpoint version '" + std::string(1, magic[4]) +
                    "' (expected '1')");
  }
  Checkpoint c;
  c.fingerprint = r.read_uint<std::uint64_t>();
  c.config_json = r.read_string();
  const auto n = r.read_uint<std::uint32_t>();
  if (n > (1u << 16)) throw DataError(context + ": implausible tensor count");
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord t;
    t.name = r.read_string(4096);
    const auto rank = r.read_uint<std::uint32_t>();
    if (rank > 8) throw DataError(context + ": tensor '" + t.name + "' has rank > 8");
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.read_uint<std::uint32_t>());
      count *= t.dims.back();
    }
    if (count > (1ull << 31)) throw DataError(context + ": tensor '" + t.name + "' too large");
    t.values.resize(count);
    for (auto& x : t.values) x = r.read_f32();
    c.tensors.push_back(std::move(t));
  }
  const auto has_opt = r.read_uint<std::uint8_t>();
  if (has_opt > 1) throw DataError(context + ": corrupt optimizer flag");
  c.has_optimizer = has_opt == 1;
  if (c.has_optimizer) {
    c.step = r.read_uint<std::uint64_t>();
    for (const auto& t : c.tensors) {
      std::vector<float> m(t.values.size()), v(t.values.size());
      for (auto& x : m) x = r.read_f32();
      for (auto& x : v) x = r.read_f32();
      c.m.push_back(std::move(m));
      c.v.push_back(std::move(v));
    }
  }
  r.expect_end();
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  auto os = io::open_output(path);
  write_checkpoint(os, c);
  if (!os) throw DataError("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto is = io::open_input(path);
  return read_checkpoint(is, path.string());
}

inline std::string checkpoint_bytes(const Checkpoint& c) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, c);
  return os.str();
}

template <typename T>
Checkpoint capture(const ParameterSet<T>& params, const Adam<T>* opt, std::uint64_t fingerprint,
                   std::string config_json) {
  Checkpoint c;
  c.fingerprint = fingerprint;
  c.config_json = std::move(config_json);
  for (const auto& e : params.entries()) {
    TensorRecord t;
    t.name = e.name;
    for (auto d : e.tensor.shape()) t.dims.push_back(static_cast<std::uint32_t>(d));
    t.values.assign(e.tensor.values().begin(), e.tensor.values().end());
    c.tensors.push_back(std::move(t));
  }
  if (opt) {
    c.has_optimizer = true;
    c.step = opt->step_count();
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.m.emplace_back(opt->first_moments()[i].begin(), opt->first_moments()[i].end());
      c.v.emplace_back(opt->second_moments()[i].begin(), opt->second_moments()[i].end());
    }
  }
  return c;
}

/// Copies matching tensors into `params`. Every parameter must be present
/// with the same shape.
template <typename T>
void restore(ParameterSet<T>& params, Adam<T>* opt, const Checkpoint& c) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params.entries()[i];
    const TensorRecord* rec = c.find(e.name);
    if (!rec) throw DataError("checkpoint lacks parameter '" + e.name + "'");
    std::vector<std::size_t> dims(rec->dims.begin(), rec->dims.end());
    if (dims != e.tensor.shape()) {
      throw DataError(detail::concat("checkpoint parameter '", e.name, "' has shape ",
                                     ad::to_string(dims), ", model expects ",
                                     ad::to_string(e.tensor.shape())));
    }
    auto& dst = e.tensor.mutable_values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(rec->values[k]);
    if (opt && c.has_optimizer) {
      const auto idx = static_cast<std::size_t>(rec - c.tensors.data());
      auto& m = opt->first_moments().at(i);
      auto& v = opt->second_moments().at(i);
      for (std::size_t k = 0; k < m.size(); ++k) {
        m[k] = static_cast<T>(c.m[idx][k]);
        v[k] = static_cast<T>(c.v[idx][k]);
      }
    }
  }
  if (opt && c.has_optimizer) opt->set_step_count(c.step);
}

}  // namespace occworld::nets
