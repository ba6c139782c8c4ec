#include "metoken/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "metoken/common.hpp"

namespace metoken::diff {

namespace {

const char kMagic[4] = {'M', 'T', 'K', '1'};

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw CheckpointError("truncated checkpoint '" + path + "'");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

void save_arrays(const std::string& path,
                 const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  put_u32(out, uint32_t(arrays.size()));
  for (const auto& [name, t] : arrays) {
    put_u32(out, uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    put_u32(out, uint32_t(t->shape.size()));
    for (size_t d : t->shape) put_u32(out, uint32_t(d));
    // assumes little-endian host float64, true for every supported target
    out.write(reinterpret_cast<const char*>(t->data.data()),
              std::streamsize(t->data.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("write failure on '" + path + "'");
}

std::map<std::string, Tensor> load_arrays(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("'" + path + "' is not an MTK1 checkpoint");
  uint32_t count = get_u32(in, path);
  std::map<std::string, Tensor> out;
  for (uint32_t a = 0; a < count; ++a) {
    uint32_t name_len = get_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw CheckpointError("truncated checkpoint '" + path + "'");
    uint32_t rank = get_u32(in, path);
    if (rank > 8) throw CheckpointError("implausible rank in '" + path + "'");
    Shape shape(rank);
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = get_u32(in, path);
      numel *= shape[d];
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(numel * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint '" + path + "'");
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace metoken::diff
