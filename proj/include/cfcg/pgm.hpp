#pragma once

// 16-bit binary PGM previews. The window is recorded in a header comment:
//   P5
//   # window <lo> <hi> <unit>   (lo -> 0, hi -> 65535, clamped)
//   W H
//   65535

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "cfcg/tensor.hpp"

namespace cfcg {

struct PgmWindow {
  double lo = -1000.0;
  double hi = 1000.0;
  std::string unit = "HU";
};

// `scale` converts stored values into the window's unit (4000 for
// normalized -> HU).
template <class T>
void write_pgm(const std::filesystem::path& path, const Tensor<T>& image, const PgmWindow& win, double scale = 1.0,
               std::size_t index = 0) {
  const Shape s = image.shape();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << "P5\n# window " << win.lo << " " << win.hi << " " << win.unit << "\n" << s.w << " " << s.h << "\n65535\n";
  auto plane = image.data().subspan(index * s.plane(), s.plane());
  for (T v : plane) {
    const double x = (static_cast<double>(v) * scale - win.lo) / (win.hi - win.lo);
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(x, 0.0, 1.0) * 65535.0));
    const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xFF)};
    os.write(bytes, 2);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace cfcg
