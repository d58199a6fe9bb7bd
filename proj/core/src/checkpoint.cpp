#include "dift/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dift {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'T', 'C'};

template <typename U>
void write_pod(std::ofstream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::ifstream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  require(static_cast<bool>(is), "checkpoint: truncated file");
  return v;
}

}  // namespace

void write_checkpoint_raw(const std::string& path, const std::vector<RawTensorEntry>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), "checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kCheckpointVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    require(t.data.size() == shape_numel(t.shape), "checkpoint: entry data/shape mismatch");
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  require(static_cast<bool>(os), "checkpoint: write failed for " + path);
}

std::vector<RawTensorEntry> read_checkpoint_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
          "checkpoint: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(is);
  require(version == kCheckpointVersion,
          "checkpoint: unsupported format version " + std::to_string(version));
  const auto count = read_pod<std::uint32_t>(is);
  std::vector<RawTensorEntry> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensorEntry e;
    const auto name_len = read_pod<std::uint32_t>(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(is);
    require(rank >= 1 && rank <= 8, "checkpoint: implausible tensor rank");
    for (std::uint32_t r = 0; r < rank; ++r)
      e.shape.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(is)));
    e.data.resize(shape_numel(e.shape));
    is.read(reinterpret_cast<char*>(e.data.data()),
            static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    require(static_cast<bool>(is), "checkpoint: truncated tensor payload in " + path);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace dift
