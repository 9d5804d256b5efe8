#include "uio/dense_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "uio/rng.hpp"

namespace uio {

namespace {

constexpr uint8_t kLevels[4] = {51, 119, 187, 255};

constexpr const char* kColorNames[kPaletteSize] = {
    "coal",       "navy",     "cobalt",    "blue",       "green",      "teal",
    "steel",      "azure",    "jade",      "sea",        "turquoise",  "sky",
    "lime",       "mint",     "spring",    "cyan",       "maroon",     "purple",
    "indigo",     "iris",     "olive",     "gray",       "slate",      "periwinkle",
    "moss",       "fern",     "lagoon",    "cornflower", "chartreuse", "clover",
    "seafoam",    "ice",      "brown",     "berry",      "plum",       "amethyst",
    "bronze",     "clay",     "mauve",     "lilac",      "mustard",    "khaki",
    "silver",     "mist",     "pear",      "celery",     "pistachio",  "glacier",
    "red",        "rose",     "fuchsia",   "magenta",    "ember",      "salmon",
    "blush",      "orchid",   "orange",    "tan",        "pink",       "lavender",
    "yellow",     "honey",    "cream",     "white"};

std::array<PaletteEntry, kPaletteSize> build_palette() {
  std::array<PaletteEntry, kPaletteSize> p{};
  int i = 0;
  for (int r = 0; r < 4; ++r)
    for (int g = 0; g < 4; ++g)
      for (int b = 0; b < 4; ++b) {
        p[i] = {{kLevels[r], kLevels[g], kLevels[b]}, kColorNames[i]};
        ++i;
      }
  return p;
}

int channel_distance(uint8_t a, uint8_t b) { return std::abs(int(a) - int(b)); }

int linf(RgbColor a, RgbColor b) {
  return std::max({channel_distance(a.r, b.r), channel_distance(a.g, b.g),
                   channel_distance(a.b, b.b)});
}

// Two-pass 4-connected labeling with union-find over the snapped color map.
struct UnionFind {
  std::vector<int> parent;
  int add() {
    parent.push_back(static_cast<int>(parent.size()));
    return parent.back();
  }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

const std::array<PaletteEntry, kPaletteSize>& instance_palette() {
  static const std::array<PaletteEntry, kPaletteSize> palette = build_palette();
  return palette;
}

int snap_to_palette(RgbColor c) {
  const auto& palette = instance_palette();
  for (int i = 0; i < kPaletteSize; ++i)
    if (linf(c, palette[i].rgb) <= kColorSnapThreshold) return i;
  return -1;
}

std::vector<int> assign_instance_colors(int n, uint64_t seed) {
  if (n < 0 || n > kPaletteSize)
    throw std::invalid_argument("assign_instance_colors: need " + std::to_string(n) +
                                " colors, palette holds " + std::to_string(kPaletteSize));
  std::vector<int> order(kPaletteSize);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::at(seed, 0, 0);
  rng.shuffle(order);
  order.resize(static_cast<size_t>(n));
  return order;
}

RasterImage depth_to_raster(const DepthMap& d) {
  if (d.max_depth <= 0) throw std::invalid_argument("depth_to_raster: max_depth must be > 0");
  RasterImage out(d.height, d.width, 1);
  for (size_t i = 0; i < d.depth.size(); ++i)
    out.data[i] = std::min(1.0, std::max(0.0, d.depth[i] / d.max_depth));
  return out;
}

DepthMap raster_to_depth(const RasterImage& r, double max_depth) {
  if (r.channels != 1) throw std::invalid_argument("raster_to_depth: raster must be 1-channel");
  if (max_depth <= 0) throw std::invalid_argument("raster_to_depth: max_depth must be > 0");
  DepthMap out;
  out.height = r.height;
  out.width = r.width;
  out.max_depth = max_depth;
  out.depth.resize(r.data.size());
  for (size_t i = 0; i < r.data.size(); ++i) out.depth[i] = r.data[i] * max_depth;
  return out;
}

RasterImage normals_to_raster(const NormalMap& n) {
  RasterImage out(n.height, n.width, 3);
  for (size_t i = 0; i < n.vec.size(); ++i) out.data[i] = (n.vec[i] + 1.0) / 2.0;
  return out;
}

DecodedNormals raster_to_normals(const RasterImage& r) {
  if (r.channels != 3) throw std::invalid_argument("raster_to_normals: raster must be 3-channel");
  DecodedNormals out;
  out.map.height = r.height;
  out.map.width = r.width;
  out.map.vec.resize(r.data.size());
  for (size_t p = 0; p < r.pixel_count(); ++p) {
    double v[3];
    for (int k = 0; k < 3; ++k) v[k] = 2.0 * r.data[p * 3 + k] - 1.0;
    double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (norm < 1e-9) {
      v[0] = 0.0;
      v[1] = 0.0;
      v[2] = 1.0;
      ++out.degenerate_pixels;
    } else {
      for (double& c : v) c /= norm;
    }
    for (int k = 0; k < 3; ++k) out.map.vec[p * 3 + k] = v[k];
  }
  return out;
}

SegRender seg_to_raster(const InstanceMaskSet& m) {
  SegRender out;
  out.raster = RasterImage(m.height, m.width, 3);
  for (const auto& item : m.items) {
    if (item.mask.size() != static_cast<size_t>(m.height) * m.width)
      throw std::invalid_argument("seg_to_raster: mask size does not match set dimensions");
    for (size_t p = 0; p < item.mask.size(); ++p) {
      if (!item.mask[p]) continue;
      out.raster.data[p * 3 + 0] = byte_to_intensity(item.color.r);
      out.raster.data[p * 3 + 1] = byte_to_intensity(item.color.g);
      out.raster.data[p * 3 + 2] = byte_to_intensity(item.color.b);
    }
    const auto& palette = instance_palette();
    int idx = snap_to_palette(item.color);
    std::string name = idx >= 0 ? palette[idx].name : "unknown";
    if (!out.color_class_fragment.empty()) out.color_class_fragment += " , ";
    out.color_class_fragment += name + std::string(" : ") + item.label;
  }
  return out;
}

InstanceMaskSet raster_to_masks(const RasterImage& r) {
  if (r.channels != 3) throw std::invalid_argument("raster_to_masks: raster must be 3-channel");
  size_t n = r.pixel_count();
  std::vector<int> color(n);
  for (size_t p = 0; p < n; ++p) {
    RgbColor c{intensity_to_byte(r.data[p * 3 + 0]), intensity_to_byte(r.data[p * 3 + 1]),
               intensity_to_byte(r.data[p * 3 + 2])};
    color[p] = snap_to_palette(c);
  }

  std::vector<int> label(n, -1);
  UnionFind uf;
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      size_t p = static_cast<size_t>(y) * r.width + x;
      if (color[p] < 0) continue;
      int left = x > 0 && color[p - 1] == color[p] ? label[p - 1] : -1;
      int up = y > 0 && color[p - r.width] == color[p] ? label[p - r.width] : -1;
      if (left < 0 && up < 0) {
        label[p] = uf.add();
      } else if (left >= 0 && up >= 0) {
        uf.unite(left, up);
        label[p] = uf.find(left);
      } else {
        label[p] = left >= 0 ? left : up;
      }
    }
  }

  std::vector<int> component_size(uf.parent.size(), 0);
  for (size_t p = 0; p < n; ++p)
    if (label[p] >= 0) ++component_size[static_cast<size_t>(uf.find(label[p]))];

  InstanceMaskSet out;
  out.height = r.height;
  out.width = r.width;
  std::vector<int> mask_of_color(kPaletteSize, -1);
  for (size_t p = 0; p < n; ++p) {
    if (label[p] < 0) continue;
    if (component_size[static_cast<size_t>(uf.find(label[p]))] < kMinComponentPixels) continue;
    int c = color[p];
    if (mask_of_color[c] < 0) {
      mask_of_color[c] = static_cast<int>(out.items.size());
      InstanceMask m;
      m.color = instance_palette()[static_cast<size_t>(c)].rgb;
      m.mask.assign(n, 0);
      out.items.push_back(std::move(m));
    }
    out.items[static_cast<size_t>(mask_of_color[c])].mask[p] = 1;
  }
  std::sort(out.items.begin(), out.items.end(), [](const InstanceMask& a, const InstanceMask& b) {
    return snap_to_palette(a.color) < snap_to_palette(b.color);
  });
  return out;
}

}  // namespace uio
