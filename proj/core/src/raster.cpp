#include "uio/raster.hpp"

#include <algorithm>
#include <cmath>

namespace uio {

uint8_t intensity_to_byte(double v) {
  double clipped = std::min(1.0, std::max(0.0, v));
  return static_cast<uint8_t>(std::lround(clipped * 255.0));
}

double byte_to_intensity(uint8_t b) { return b / 255.0; }

RasterImage resize_nearest(const RasterImage& r, int new_height, int new_width) {
  if (new_height <= 0 || new_width <= 0)
    throw std::invalid_argument("resize_nearest: target must be positive");
  RasterImage out(new_height, new_width, r.channels);
  for (int y = 0; y < new_height; ++y) {
    int sy = std::min(static_cast<int>((y + 0.5) * r.height / new_height), r.height - 1);
    for (int x = 0; x < new_width; ++x) {
      int sx = std::min(static_cast<int>((x + 0.5) * r.width / new_width), r.width - 1);
      for (int c = 0; c < r.channels; ++c) out.at(y, x, c) = r.at(sy, sx, c);
    }
  }
  return out;
}

RasterImage quantize_to_8bit(const RasterImage& r) {
  RasterImage out = r;
  for (double& v : out.data) v = byte_to_intensity(intensity_to_byte(v));
  return out;
}

}  // namespace uio
