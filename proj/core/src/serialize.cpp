#include <cstring>
#include <fstream>

#include "magicnet/model.hpp"

namespace magicnet::detail {

void append_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void append_f32(std::vector<uint8_t>& out, float v) {
  static_assert(sizeof(float) == 4);
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_u32(out, bits);
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ArgumentError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ArgumentError("failed writing " + path.string());
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw ArgumentError("cannot open " + path.string());
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw ArgumentError("failed reading " + path.string());
  return bytes;
}

uint16_t ByteReader::u16() {
  need(2);
  const uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
  p += 2;
  remaining -= 2;
  return v;
}

uint32_t ByteReader::u32() {
  need(4);
  const uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                     (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  p += 4;
  remaining -= 4;
  return v;
}

float ByteReader::f32() {
  const uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string ByteReader::bytes(size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(p), n);
  p += n;
  remaining -= n;
  return s;
}

}  // namespace magicnet::detail
