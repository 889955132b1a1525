#include "ccisac/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "ccisac/errors.hpp"

namespace ccisac::nn {

namespace {

constexpr char kMagic[8] = {'N', 'N', 'M', 'C', '0', '0', '0', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint truncated");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

}  // namespace

void save_checkpoint(const ParamStore& ps, std::ostream& os) {
  os.write(kMagic, 8);
  const auto ts = ps.tensors();
  put_u32(os, std::uint32_t(ts.size()));
  for (const Tensor* t : ts) {
    put_u32(os, std::uint32_t(t->name.size()));
    os.write(t->name.data(), std::streamsize(t->name.size()));
    put_u32(os, std::uint32_t(t->shape.size()));
    for (int d : t->shape) put_u32(os, std::uint32_t(d));
    for (Eigen::Index i = 0; i < t->value.size(); ++i) {
      const float f = float(t->value.data()[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(os, bits);
    }
  }
  if (!os) throw FormatError("checkpoint write failed");
}

void save_checkpoint(const ParamStore& ps, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  save_checkpoint(ps, os);
}

void load_checkpoint(ParamStore& ps, std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw FormatError("not an NNMC0001 checkpoint");
  const std::uint32_t count = get_u32(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = get_u32(is);
    if (len > 4096) throw FormatError("implausible tensor name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint truncated");
    const std::uint32_t rank = get_u32(is);
    if (rank > 8) throw FormatError("implausible tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = int(get_u32(is));
    if (!ps.has(name)) throw ShapeMismatch("checkpoint tensor " + name + " has no counterpart");
    Tensor& t = ps.get(name);
    if (shape != t.shape) throw ShapeMismatch("checkpoint tensor " + name + " has a different shape");
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      const std::uint32_t bits = get_u32(is);
      float f;
      std::memcpy(&f, &bits, 4);
      t.value.data()[i] = f;
    }
  }
}

void load_checkpoint(ParamStore& ps, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  load_checkpoint(ps, is);
}

}  // namespace ccisac::nn
