#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace uio {

// Row-major, channel-interleaved image with intensities as fractions in
// [0, 1]. Value semantics; all codecs treat rasters as immutable inputs.
struct RasterImage {
  int height = 0;
  int width = 0;
  int channels = 1;  // 1 or 3
  std::vector<double> data;

  RasterImage() = default;
  RasterImage(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * static_cast<size_t>(w) * static_cast<size_t>(c), fill) {
    if (h <= 0 || w <= 0 || (c != 1 && c != 3))
      throw std::invalid_argument("RasterImage: bad shape " + std::to_string(h) + "x" +
                                  std::to_string(w) + "x" + std::to_string(c));
  }

  double& at(int y, int x, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
};

// 8-bit storage convention shared by the file formats and the quantization
// error bounds: store round(v*255), load b/255.
uint8_t intensity_to_byte(double v);
double byte_to_intensity(uint8_t b);

// Nearest-neighbor resampling with the pixel-center convention
// src = min(floor((dst + 0.5) * src_extent / dst_extent), src_extent - 1).
// Idempotent at the same size.
RasterImage resize_nearest(const RasterImage& r, int new_height, int new_width);

// Pushes every sample through the 8-bit storage convention, i.e. what a
// raster looks like after a save/load cycle.
RasterImage quantize_to_8bit(const RasterImage& r);

}  // namespace uio
