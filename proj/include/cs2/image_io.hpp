#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cs2/volume.hpp"

namespace cs2 {

// 16-bit binary portable graymap (P5, maxval 65535, big-endian samples).
inline void save_pgm16(const std::string& path, int height, int width,
                       const std::vector<std::uint16_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(height) * width)
    raise_data("pgm: pixel count does not match ", height, "x", width);
  auto os = io_detail::open_out(path);
  os << "P5\n" << width << " " << height << "\n65535\n";
  for (std::uint16_t v : pixels) {
    const char b[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xFF)};
    os.write(b, 2);
  }
  if (!os) raise_data("write failed: ", path);
}

// Windowed HU plane -> full-range 16-bit grayscale.
inline void save_hu_plane_pgm(const std::string& path, int height, int width,
                              const double* hu, HuWindow window) {
  window.validate();
  std::vector<std::uint16_t> px(static_cast<std::size_t>(height) * width);
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint16_t>(window.normalize(hu[i]) * 65535.0 + 0.5);
  save_pgm16(path, height, width, px);
}

}  // namespace cs2
