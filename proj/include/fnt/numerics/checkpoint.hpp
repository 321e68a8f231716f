#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "fnt/numerics/nn.hpp"

namespace fnt {

// Binary layout, all integers little-endian:
//   "FNTCKPT1" | u32 version | u64 metadata length | metadata bytes |
//   u64 record count | records...
// record: u32 name length | name | u8 dtype (0 = f32, 1 = f64) | u32 rank |
//         u64 dims[rank] | IEEE-754 payload
inline constexpr char kCheckpointMagic[8] = {'F', 'N', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& os) : os_(os) {}
  template <typename U>
  void Uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void Bytes(const std::string& s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void F32(float v) { Uint(std::bit_cast<std::uint32_t>(v)); }
  void F64(double v) { Uint(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::ostream& os_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& is) : is_(is) {}
  template <typename U>
  U Uint() {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const int c = is_.get();
      if (c == EOF) throw CheckpointError("checkpoint truncated");
      v |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
  }
  std::string Bytes(std::size_t n) {
    if (n > (1u << 30)) throw CheckpointError("checkpoint field length implausible");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw CheckpointError("checkpoint truncated");
    return s;
  }
  float F32() { return std::bit_cast<float>(Uint<std::uint32_t>()); }
  double F64() { return std::bit_cast<double>(Uint<std::uint64_t>()); }

 private:
  std::istream& is_;
};

}  // namespace detail

template <typename T>
void SaveCheckpoint(const std::string& path, const std::string& metadata, const ParamStore<T>& store) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  detail::LeWriter w(os);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.Uint<std::uint32_t>(kCheckpointVersion);
  w.Uint<std::uint64_t>(metadata.size());
  w.Bytes(metadata);
  w.Uint<std::uint64_t>(store.params().size());
  for (const auto& [name, p] : store.params()) {
    w.Uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.Bytes(name);
    w.Uint<std::uint8_t>(std::is_same_v<T, double> ? 1 : 0);
    w.Uint<std::uint32_t>(static_cast<std::uint32_t>(p.rank()));
    for (auto d : p.shape()) w.Uint<std::uint64_t>(d);
    for (T v : p.data()) {
      if constexpr (std::is_same_v<T, double>) w.F64(v);
      else w.F32(v);
    }
  }
  if (!os) throw CheckpointError("write failed for " + path);
}

// Reads only the metadata block.
inline std::string ReadCheckpointMetadata(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError(path + " is not a checkpoint file");
  }
  detail::LeReader r(is);
  const auto version = r.Uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported");
  }
  return r.Bytes(r.Uint<std::uint64_t>());
}

// Fills every parameter of `store` from the file. Any missing, extra or
// differently shaped record is an error; values convert between widths.
template <typename T>
std::string LoadCheckpoint(const std::string& path, ParamStore<T>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError(path + " is not a checkpoint file");
  }
  detail::LeReader r(is);
  const auto version = r.Uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported");
  }
  std::string metadata = r.Bytes(r.Uint<std::uint64_t>());
  const auto count = r.Uint<std::uint64_t>();
  std::map<std::string, std::vector<double>> values;
  std::map<std::string, Shape> shapes;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = r.Bytes(r.Uint<std::uint32_t>());
    const auto dtype = r.Uint<std::uint8_t>();
    if (dtype > 1) throw CheckpointError("unknown dtype tag for " + name);
    const auto rank = r.Uint<std::uint32_t>();
    if (rank > 8) throw CheckpointError("implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.Uint<std::uint64_t>();
    const auto n = NumElements(shape);
    if (n > (1u << 28)) throw CheckpointError("implausible size for " + name);
    std::vector<double> v(n);
    for (auto& x : v) x = dtype == 1 ? r.F64() : static_cast<double>(r.F32());
    shapes[name] = std::move(shape);
    values[name] = std::move(v);
  }
  if (is.peek() != EOF) throw CheckpointError("trailing bytes in " + path);
  if (values.size() != store.params().size()) {
    throw CheckpointError("checkpoint has " + std::to_string(values.size()) + " tensors, model expects " +
                          std::to_string(store.params().size()));
  }
  for (const auto& [name, p] : store.params()) {
    auto it = values.find(name);
    if (it == values.end()) throw CheckpointError("checkpoint lacks parameter " + name);
    if (shapes[name] != p.shape()) {
      throw CheckpointError("parameter " + name + " has shape " + ShapeString(shapes[name]) + " in file, " +
                            ShapeString(p.shape()) + " in model");
    }
  }
  for (auto& [name, p] : store.params()) {
    auto dst = Tensor<T>(p).mutable_data();
    const auto& src = values[name];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
  return metadata;
}

}  // namespace fnt
