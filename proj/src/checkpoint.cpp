#include "ligr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ligr {

namespace {

const char kMagic[4] = {'L', 'G', 'R', 'C'};

template <typename T>
void write_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  using U = std::make_unsigned_t<T>;
  U u;
  std::memcpy(&u, &value, sizeof(T));
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

void write_f32_le(std::ostream& os, float value) {
  uint32_t bits;
  std::memcpy(&bits, &value, 4);
  write_le<uint32_t>(os, bits);
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(buf[i]) << (8 * i);
  T value;
  std::memcpy(&value, &u, sizeof(T));
  return value;
}

float read_f32_le(std::istream& is) {
  uint32_t bits = read_le<uint32_t>(is);
  float value;
  std::memcpy(&value, &bits, 4);
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_le<uint32_t>(os, kCheckpointVersion);
  write_le<uint64_t>(os, entries.size());
  for (const auto& [name, tensor] : entries) {
    write_le<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<uint32_t>(os, static_cast<uint32_t>(tensor.shape.size()));
    for (int64_t d : tensor.shape) write_le<int64_t>(os, d);
    for (double v : tensor.data) write_f32_le(os, static_cast<float>(v));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = read_le<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  uint64_t count = read_le<uint64_t>(is);
  std::map<std::string, Tensor> entries;
  for (uint64_t e = 0; e < count; ++e) {
    uint32_t name_len = read_le<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t ndim = read_le<uint32_t>(is);
    Shape shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) shape[i] = read_le<int64_t>(is);
    int64_t n = shape_numel(shape);
    std::vector<double> data(n);
    for (int64_t i = 0; i < n; ++i) data[i] = static_cast<double>(read_f32_le(is));
    entries.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return entries;
}

}  // namespace ligr
