#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace provfield {

// Grayscale PFM ("Pf"), little-endian (scale -1.0), bottom-to-top scanlines.
void write_pfm(const std::string& path, int width, int height,
               std::span<const float> data);

// Binary PPM colorized through the fixed 256-entry colormap; input values
// are clamped to [0, 1].
void write_ppm_colormapped(const std::string& path, int width, int height,
                           std::span<const float> normalized);

// The shared 256-entry viridis-like table (interleaved RGB).
std::span<const uint8_t> colormap_table();

}  // namespace provfield
