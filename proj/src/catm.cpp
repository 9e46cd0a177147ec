#include "caformer/numerics/catm.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace caformer::catm {
namespace {

constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::vector<unsigned char>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::vector<unsigned char> encode(const TokenMatrix& m) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (m.rows() > kMax || m.cols() > kMax) throw DimensionError("catm: matrix too large to encode");
  std::vector<unsigned char> out;
  out.reserve(kHeaderBytes + static_cast<std::size_t>(m.size()) * 8);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
  return out;
}

TokenMatrix decode(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError("catm: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("catm: bad magic");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kVersion) throw FormatError("catm: unsupported version " + std::to_string(version));
  const std::uint64_t rows = get_u32(bytes.data() + 8);
  const std::uint64_t cols = get_u32(bytes.data() + 12);
  if (bytes.size() != kHeaderBytes + rows * cols * 8) {
    throw FormatError("catm: payload size " + std::to_string(bytes.size() - kHeaderBytes) +
                      " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  TokenMatrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  const unsigned char* p = bytes.data() + kHeaderBytes;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c, p += 8) m(r, c) = get_f64(p);
  return m;
}

void write(std::ostream& os, const TokenMatrix& m) {
  const auto bytes = encode(m);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("catm: write failed");
}

TokenMatrix read(std::istream& is) {
  std::vector<unsigned char> bytes(kHeaderBytes);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), kHeaderBytes))
    throw FormatError("catm: truncated header");
  const std::uint64_t payload = std::uint64_t{get_u32(bytes.data() + 8)} * get_u32(bytes.data() + 12) * 8;
  bytes.resize(kHeaderBytes + payload);
  if (!is.read(reinterpret_cast<char*>(bytes.data() + kHeaderBytes),
               static_cast<std::streamsize>(payload)))
    throw FormatError("catm: truncated payload");
  return decode(bytes);
}

void save(const std::filesystem::path& path, const TokenMatrix& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("catm: cannot open " + path.string() + " for writing");
  write(os, m);
}

TokenMatrix load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("catm: cannot open " + path.string());
  TokenMatrix m = read(is);
  if (is.peek() != std::ifstream::traits_type::eof())
    throw FormatError("catm: trailing bytes in " + path.string());
  return m;
}

}  // namespace caformer::catm
