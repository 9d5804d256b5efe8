#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uio/raster.hpp"

namespace uio {

struct DepthMap {
  int height = 0;
  int width = 0;
  double max_depth = 10.0;  // meters; clip ceiling for normalization
  std::vector<double> depth;

  double& at(int y, int x) { return depth[static_cast<size_t>(y) * width + x]; }
  double at(int y, int x) const { return depth[static_cast<size_t>(y) * width + x]; }
};

// Per-pixel unit orientation vectors, interleaved (x, y, z).
struct NormalMap {
  int height = 0;
  int width = 0;
  std::vector<double> vec;  // 3 per pixel

  double& at(int y, int x, int k) { return vec[(static_cast<size_t>(y) * width + x) * 3 + k]; }
  double at(int y, int x, int k) const {
    return vec[(static_cast<size_t>(y) * width + x) * 3 + k];
  }
};

struct RgbColor {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const RgbColor&) const = default;
};

struct InstanceMask {
  std::string label;
  RgbColor color;
  std::vector<uint8_t> mask;  // height*width, 0 or 1
};

struct InstanceMaskSet {
  int height = 0;
  int width = 0;
  std::vector<InstanceMask> items;
};

struct PaletteEntry {
  RgbColor rgb;
  const char* name;
};

// Version 1 of the instance palette: 4 channel levels {51, 119, 187, 255}
// giving 64 colors, none near black, minimum pairwise channel distance
// 68/255. Names are frozen keys used in segmentation prompts.
inline constexpr int kPaletteSize = 64;
inline constexpr int kPaletteVersion = 1;
const std::array<PaletteEntry, kPaletteSize>& instance_palette();

// Largest per-channel distance at which a pixel still snaps to a palette
// color; anything farther from every entry is background.
inline constexpr int kColorSnapThreshold = 12;
// Connected components smaller than this are discarded as noise.
inline constexpr int kMinComponentPixels = 8;

// Index of the palette entry within the snap threshold (L-inf over 8-bit
// channels), or -1 for background. Ties cannot occur: entries are farther
// apart than twice the threshold.
int snap_to_palette(RgbColor c);

// n distinct palette indices, order randomized by seed. n > 64 is an error.
std::vector<int> assign_instance_colors(int n, uint64_t seed);

// pixel = clip(depth / max_depth, 0, 1)
RasterImage depth_to_raster(const DepthMap& d);
// depth = pixel * max_depth. Requires a 1-channel raster.
DepthMap raster_to_depth(const RasterImage& r, double max_depth);

// channel = (component + 1) / 2, with (x, y, z) -> (r, g, b).
RasterImage normals_to_raster(const NormalMap& n);

struct DecodedNormals {
  NormalMap map;
  int degenerate_pixels = 0;  // zero vectors replaced by (0, 0, 1)
};
// Inverse affine map followed by renormalization to unit length.
DecodedNormals raster_to_normals(const RasterImage& r);

struct SegRender {
  RasterImage raster;                 // 3-channel, black background
  std::string color_class_fragment;   // "name : label" pairs joined by " , "
};
// Paints each instance in list order (later instances win overlaps) and
// builds the color-to-class prompt fragment.
SegRender seg_to_raster(const InstanceMaskSet& m);

// Snap to palette, 4-connected components per color, drop components under
// kMinComponentPixels, then one mask per surviving color (ascending palette
// index). Labels are left empty; callers attach them from the prompt.
InstanceMaskSet raster_to_masks(const RasterImage& r);

}  // namespace uio
