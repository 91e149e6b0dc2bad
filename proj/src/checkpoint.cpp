#include "xforge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace xforge {

namespace {

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;
  void need(size_t n, const char* what) const {
    if (pos + n > b.size())
      throw std::runtime_error(std::string("tensor file truncated: need ") +
                               std::to_string(n) + " bytes for " + what +
                               " at offset " + std::to_string(pos));
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return b[pos++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(b[pos]) |
                 static_cast<uint16_t>(b[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
};

}  // namespace

const Tensor& TensorFile::get(const std::string& name) const {
  for (const auto& [n, v] : entries)
    if (n == name) return v;
  throw std::runtime_error("tensor file: no entry named '" + name + "'");
}

std::vector<uint8_t> serialize_tensor_file(const TensorFile& f) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'X', 'F', 'T', 'N'});
  put_u16(out, TensorFile::kVersion);
  put_u32(out, static_cast<uint32_t>(f.entries.size()));
  for (const auto& [name, t] : f.entries) {
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<uint8_t>(t.rank()));
    for (int e : t.shape) put_u32(out, static_cast<uint32_t>(e));
    const size_t off = out.size();
    out.resize(off + t.data.size() * 4);
    static_assert(sizeof(float) == 4);
    std::memcpy(out.data() + off, t.data.data(), t.data.size() * 4);
  }
  return out;
}

TensorFile parse_tensor_file(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), "XFTN", 4) != 0)
    throw std::runtime_error("tensor file: bad magic");
  r.pos = 4;
  const uint16_t version = r.u16("version");
  if (version != TensorFile::kVersion)
    throw std::runtime_error("tensor file: unsupported version " +
                             std::to_string(version));
  const uint32_t count = r.u32("entry count");
  TensorFile f;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t nlen = r.u16("name length");
    r.need(nlen, "name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), nlen);
    r.pos += nlen;
    const uint8_t rank = r.u8("rank");
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(r.u32("extent"));
    const size_t n = static_cast<size_t>(Tensor::count(shape));
    r.need(n * 4, "payload");
    Tensor t(shape);
    std::memcpy(t.data.data(), bytes.data() + r.pos, n * 4);
    r.pos += n * 4;
    f.entries.emplace_back(std::move(name), std::move(t));
  }
  return f;
}

void save_tensor_file(const TensorFile& f, const std::string& path) {
  const auto bytes = serialize_tensor_file(f);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

TensorFile load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<uint8_t> bytes(static_cast<size_t>(is.tellg()));
  is.seekg(0);
  is.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  return parse_tensor_file(bytes);
}

}  // namespace xforge
