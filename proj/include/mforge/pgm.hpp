#pragma once

// 8-bit binary PGM (P5) export. 3D fields export their middle slice along axis 2.

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <cmath>
#include <string>
#include <vector>

#include "mforge/field_io.hpp"

namespace mforge {

/// Encodes `f` with intensities mapped linearly from [lo, hi] to [0, 255].
/// lo == hi selects the field's own min/max.
inline std::vector<unsigned char> encode_pgm(const Field64& f, double lo = 0.0, double hi = 0.0) {
  const GridSpec& g = f.grid();
  const int w = g.size[0], h = g.size[1];
  const std::size_t slice = g.dim == 3 ? static_cast<std::size_t>(g.size[2] / 2) : 0;
  const std::size_t off = slice * static_cast<std::size_t>(w) * h;
  if (lo == hi) {
    const auto [mn, mx] = std::minmax_element(f.values().begin() + off, f.values().begin() + off + std::size_t(w) * h);
    lo = *mn;
    hi = *mx;
  }
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  // PGM rows run top to bottom; axis 1 is the row index
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = f[off + static_cast<std::size_t>(y) * w + x];
      const double s = std::isfinite(v) ? std::clamp((v - lo) * scale, 0.0, 255.0) : 0.0;
      out.push_back(static_cast<unsigned char>(std::lround(s)));
    }
  return out;
}

inline void write_pgm(const std::string& path, const Field64& f, double lo = 0.0, double hi = 0.0) {
  io::write_file(path, encode_pgm(f, lo, hi));
}

struct PgmImage {
  int width = 0, height = 0, maxval = 0;
  std::vector<unsigned char> pixels;
};

/// Parses a binary P5 image with maxval <= 255 (comments not supported).
inline PgmImage decode_pgm(const std::vector<unsigned char>& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
    if (t.empty()) throw DataError("PGM: truncated header");
    return t;
  };
  if (token() != "P5") throw DataError("PGM: bad magic");
  PgmImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    img.maxval = std::stoi(token());
  } catch (const std::logic_error&) {
    throw DataError("PGM: bad header number");
  }
  if (img.width < 1 || img.height < 1 || img.maxval < 1 || img.maxval > 255) throw DataError("PGM: bad header");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (bytes.size() != pos + n) throw DataError("PGM: raster size mismatch");
  img.pixels.assign(bytes.begin() + pos, bytes.end());
  return img;
}

}  // namespace mforge
