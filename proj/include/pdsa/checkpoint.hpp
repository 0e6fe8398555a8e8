#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdsa/tensor.hpp"

namespace pdsa {

/// Checkpoints are a flat little-endian container of named f32 tensors:
///   magic "PDSACKPT", u32 version, u32 entry count, then per entry
///   u32 name length, name bytes, u32 ndim, u32 dims[ndim], f32 data.
/// See docs/checkpoint_format.md.
inline constexpr char kCheckpointMagic[8] = {'P', 'D', 'S', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  std::uint32_t u32() {
    if (pos_ + 4 > buf_.size()) fail("truncated");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | static_cast<std::uint8_t>(buf_[pos_ + static_cast<std::size_t>(i)]);
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }

  std::string bytes(std::size_t n) {
    if (pos_ + n > buf_.size()) fail("truncated");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& why) const {
    throw std::runtime_error("checkpoint '" + path_ + "': " + why);
  }

 private:
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serializes entries and writes them atomically (temp file + rename).
inline void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    std::size_t numel = 1;
    for (auto d : e.shape) {
      detail::put_u32(out, static_cast<std::uint32_t>(d));
      numel *= static_cast<std::size_t>(d);
    }
    if (numel != e.data.size())
      throw std::invalid_argument("save_checkpoint: entry '" + e.name +
                                  "' shape does not match data length");
    for (float f : e.data) detail::put_f32(out, f);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open '" + tmp + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("save_checkpoint: rename to '" + path + "' failed");
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r(buf, path);
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    e.name = r.bytes(r.u32());
    const std::uint32_t ndim = r.u32();
    e.shape.resize(ndim);
    std::size_t numel = 1;
    for (auto& d : e.shape) {
      d = static_cast<std::int64_t>(r.u32());
      if (d < 1) r.fail("non-positive dimension in entry '" + e.name + "'");
      numel *= static_cast<std::size_t>(d);
    }
    e.data.resize(numel);
    for (auto& v : e.data) v = r.f32();
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return entries;
}

template <typename T>
std::vector<CheckpointEntry> store_to_entries(const ParamStore<T>& store) {
  std::vector<CheckpointEntry> entries;
  entries.reserve(store.size());
  for (const auto& e : store) {
    CheckpointEntry ce;
    ce.name = e.name;
    ce.shape = e.shape;
    ce.data.reserve(e.value.size());
    for (auto v : e.value) ce.data.push_back(static_cast<float>(v));
    entries.push_back(std::move(ce));
  }
  return entries;
}

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
  save_checkpoint(path, store_to_entries(store));
}

/// Restores parameter values by name. Every store parameter must be present
/// with a matching shape; unknown names in the file are an error.
template <typename T>
void load_checkpoint_into(const std::string& path, ParamStore<T>& store) {
  auto entries = load_checkpoint(path);
  std::vector<bool> seen(static_cast<std::size_t>(store.size()), false);
  for (const auto& ce : entries) {
    if (!store.contains(ce.name))
      throw std::runtime_error("load_checkpoint: unexpected parameter '" + ce.name + "'");
    auto& e = store.at(ce.name);
    if (e.shape != ce.shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + ce.name + "'");
    for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] = static_cast<T>(ce.data[i]);
    seen[static_cast<std::size_t>(store.lookup(ce.name))] = true;
  }
  for (int i = 0; i < static_cast<int>(store.size()); ++i)
    if (!seen[static_cast<std::size_t>(i)])
      throw std::runtime_error("load_checkpoint: missing parameter '" + store.at(i).name + "'");
}

}  // namespace pdsa
