#pragma once

// Checkpoint container: one file holding a JSON manifest (tensor name,
// shape, dtype, byte offset into the data section) followed by the raw
// little-endian arrays.
//
//   "ICLCKPT1" | u64 manifest length | manifest JSON | data section

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl/errors.hpp"
#include "icl/tensor.hpp"

namespace icl {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

struct CheckpointEntry {
  std::vector<int64_t> shape;
  std::string dtype;  // "f32" | "f64"
  uint64_t offset = 0;
};

template <class Real>
void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, const Tensor<Real>*>>& tensors,
                     const nlohmann::json& meta = {}) {
  const std::string dtype = sizeof(Real) == 4 ? "f32" : "f64";
  nlohmann::json manifest;
  manifest["meta"] = meta;
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t->shape;
    e["dtype"] = dtype;
    e["offset"] = offset;
    manifest["tensors"].push_back(e);
    offset += static_cast<uint64_t>(t->numel()) * sizeof(Real);
  }
  const std::string mstr = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("checkpoint: cannot open for writing: " + path);
  out.write("ICLCKPT1", 8);
  const uint64_t mlen = mstr.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(Real)));
  if (!out) throw ConfigError("checkpoint: write failed: " + path);
}

struct CheckpointReader {
  std::map<std::string, CheckpointEntry> entries;
  nlohmann::json meta;
  std::string path;
  uint64_t data_start = 0;

  static CheckpointReader open(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "ICLCKPT1", 8) != 0) throw ConfigError("checkpoint: bad magic in " + path);
    uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mstr(mlen, '\0');
    in.read(mstr.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw ConfigError("checkpoint: truncated manifest in " + path);
    CheckpointReader r;
    r.path = path;
    r.data_start = 8 + sizeof(uint64_t) + mlen;
    nlohmann::json manifest = nlohmann::json::parse(mstr);
    r.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& e : manifest["tensors"]) {
      CheckpointEntry ce;
      ce.shape = e["shape"].get<std::vector<int64_t>>();
      ce.dtype = e["dtype"].get<std::string>();
      ce.offset = e["offset"].get<uint64_t>();
      r.entries[e["name"].get<std::string>()] = ce;
    }
    return r;
  }

  // Loads one tensor, converting between f32/f64 if the stored dtype
  // differs from Real.
  template <class Real>
  Tensor<Real> load(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw ConfigError("checkpoint: no tensor named '" + name + "' in " + path);
    const CheckpointEntry& e = it->second;
    Tensor<Real> t = Tensor<Real>::zeros(e.shape);
    std::ifstream in(path, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(data_start + e.offset));
    const size_t n = t.data.size();
    if (e.dtype == (sizeof(Real) == 4 ? "f32" : "f64")) {
      in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(Real)));
    } else if (e.dtype == "f32") {
      std::vector<float> buf(n);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
      for (size_t i = 0; i < n; ++i) t.data[i] = static_cast<Real>(buf[i]);
    } else if (e.dtype == "f64") {
      std::vector<double> buf(n);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(double)));
      for (size_t i = 0; i < n; ++i) t.data[i] = static_cast<Real>(buf[i]);
    } else {
      throw ConfigError("checkpoint: unknown dtype '" + e.dtype + "'");
    }
    if (!in) throw ConfigError("checkpoint: truncated data for '" + name + "' in " + path);
    return t;
  }
};

}  // namespace icl
