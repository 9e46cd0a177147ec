#pragma once

// CATM tensor dump: "CATM", u32 version (=1), u32 rows, u32 cols, then
// rows*cols little-endian f64 values in row-major order.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "caformer/numerics/matrix.hpp"

namespace caformer::catm {

inline constexpr char kMagic[4] = {'C', 'A', 'T', 'M'};
inline constexpr std::uint32_t kVersion = 1;

std::vector<unsigned char> encode(const TokenMatrix& m);
TokenMatrix decode(const std::vector<unsigned char>& bytes);

void write(std::ostream& os, const TokenMatrix& m);
TokenMatrix read(std::istream& is);

void save(const std::filesystem::path& path, const TokenMatrix& m);
TokenMatrix load(const std::filesystem::path& path);

}  // namespace caformer::catm
