#include "provfield/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace provfield {

namespace {

// Anchor stops of the viridis palette; the 256-entry table interpolates them.
constexpr int kAnchors = 9;
constexpr uint8_t kStops[kAnchors][3] = {
    {68, 1, 84},    {71, 44, 122},  {59, 81, 139},  {44, 113, 142},
    {33, 144, 141}, {39, 173, 129}, {92, 200, 99},  {170, 220, 50},
    {253, 231, 37},
};

std::array<uint8_t, 256 * 3> build_table() {
  std::array<uint8_t, 256 * 3> table{};
  for (int i = 0; i < 256; ++i) {
    const double u = i / 255.0 * (kAnchors - 1);
    const int a = std::min(kAnchors - 2, static_cast<int>(u));
    const double f = u - a;
    for (int ch = 0; ch < 3; ++ch) {
      const double v = (1.0 - f) * kStops[a][ch] + f * kStops[a + 1][ch];
      table[3 * i + ch] = static_cast<uint8_t>(std::lround(v));
    }
  }
  return table;
}

const std::array<uint8_t, 256 * 3>& table_instance() {
  static const std::array<uint8_t, 256 * 3> t = build_table();
  return t;
}

}  // namespace

std::span<const uint8_t> colormap_table() {
  return std::span<const uint8_t>(table_instance().data(), 256 * 3);
}

void write_pfm(const std::string& path, int width, int height,
               std::span<const float> data) {
  if (static_cast<size_t>(width) * height != data.size()) {
    throw std::invalid_argument("write_pfm: size mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pfm: cannot open " + path);
  out << "Pf\n" << width << " " << height << "\n-1.0\n";
  for (int row = height - 1; row >= 0; --row) {
    out.write(reinterpret_cast<const char*>(data.data() +
                                            static_cast<size_t>(row) * width),
              static_cast<std::streamsize>(width) * sizeof(float));
  }
  if (!out) throw std::runtime_error("write_pfm: write failed: " + path);
}

void write_ppm_colormapped(const std::string& path, int width, int height,
                           std::span<const float> normalized) {
  if (static_cast<size_t>(width) * height != normalized.size()) {
    throw std::invalid_argument("write_ppm_colormapped: size mismatch");
  }
  const auto& table = table_instance();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm_colormapped: cannot open " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  for (float v : normalized) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    const int idx = std::min(255, static_cast<int>(c * 256.0f));
    out.write(reinterpret_cast<const char*>(table.data() + 3 * idx), 3);
  }
  if (!out) throw std::runtime_error("write_ppm_colormapped: write failed: " + path);
}

}  // namespace provfield
