#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stawgan/core/tensor.hpp"
#include "stawgan/errors.hpp"

namespace stawgan::core {

// Ordered container of named float tensors plus string metadata; the on-disk
// unit behind checkpoints. Bytes round-trip exactly (little-endian layout).
struct TensorStore {
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  std::map<std::string, std::string> meta;

  void put(const std::string& name, Tensor<float> t) { tensors.emplace_back(name, std::move(t)); }

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  const Tensor<float>& require(const std::string& name) const {
    const Tensor<float>* t = find(name);
    if (!t) throw IoError("checkpoint missing tensor '" + name + "'");
    return *t;
  }
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_i64(std::ostream& os, std::int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::int64_t read_i64(std::istream& is) {
  std::int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::string read_str(std::istream& is) {
  std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace detail

inline constexpr char kStoreMagic[9] = "STAWCKPT";
inline constexpr std::uint32_t kStoreVersion = 1;

inline void save_store(const TensorStore& store, const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + tmp.string());
    os.write(kStoreMagic, 8);
    detail::write_u32(os, kStoreVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(store.meta.size()));
    for (const auto& [k, v] : store.meta) {
      detail::write_str(os, k);
      detail::write_str(os, v);
    }
    detail::write_u32(os, static_cast<std::uint32_t>(store.tensors.size()));
    for (const auto& [name, t] : store.tensors) {
      detail::write_str(os, name);
      for (int d = 0; d < 4; ++d) detail::write_i64(os, t.shape()[static_cast<std::size_t>(d)]);
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(t.numel())));
    }
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);  // atomic publish
}

inline TensorStore load_store(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kStoreMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  const std::uint32_t version = detail::read_u32(is);
  if (version != kStoreVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  TensorStore store;
  const std::uint32_t n_meta = detail::read_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = detail::read_str(is);
    store.meta[k] = detail::read_str(is);
  }
  const std::uint32_t n_tensors = detail::read_u32(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = detail::read_str(is);
    Shape4 shape;
    for (int d = 0; d < 4; ++d) shape[static_cast<std::size_t>(d)] = detail::read_i64(is);
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(t.numel())));
    store.put(name, std::move(t));
  }
  if (!is) throw IoError("truncated checkpoint: " + path);
  return store;
}

// FNV-1a, used to fingerprint configurations inside checkpoints.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace stawgan::core
