#pragma once

#include <string>
#include <vector>

#include "dift/model.hpp"

namespace dift {

/// One tensor as stored on disk: name, dims, float32 payload.
struct RawTensorEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Binary container: magic "DFTC", u32 format version, u32 tensor count;
/// per tensor u32 name length + name bytes, u32 rank, u64 dims, then raw
/// little-endian IEEE-754 float32 values.
void write_checkpoint_raw(const std::string& path, const std::vector<RawTensorEntry>& tensors);
std::vector<RawTensorEntry> read_checkpoint_raw(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Saves every parameter in for_each_param order. Values are stored as
/// float32 regardless of the in-memory precision.
template <typename T>
void save_checkpoint(Model<T>& m, const std::string& path) {
  std::vector<RawTensorEntry> entries;
  for_each_param<T>(m, [&](const std::string& name, Tensor<T>& t) {
    RawTensorEntry e;
    e.name = name;
    e.shape = t.shape();
    e.data.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) e.data[i] = static_cast<float>(t.at(i));
    entries.push_back(std::move(e));
  });
  write_checkpoint_raw(path, entries);
}

/// Loads parameters into an existing model. Every parameter must be present
/// with a matching shape; extra tensors in the file are an error.
template <typename T>
void load_checkpoint(Model<T>& m, const std::string& path) {
  std::vector<RawTensorEntry> entries = read_checkpoint_raw(path);
  std::size_t used = 0;
  for_each_param<T>(m, [&](const std::string& name, Tensor<T>& t) {
    const RawTensorEntry* found = nullptr;
    for (const auto& e : entries)
      if (e.name == name) {
        found = &e;
        break;
      }
    require(found != nullptr, "load_checkpoint: missing tensor " + name);
    require(found->shape == t.shape(), "load_checkpoint: shape mismatch for " + name);
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = static_cast<T>(found->data[i]);
    ++used;
  });
  require(used == entries.size(), "load_checkpoint: file contains unknown tensors");
}

}  // namespace dift
