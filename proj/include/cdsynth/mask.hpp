#pragma once

// Integer rasters: per-pixel land-cover class masks, binary change masks and
// the class palette used for rendering.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdsynth/rng.hpp"

namespace cdsynth {

struct PaletteEntry {
  uint8_t r = 0, g = 0, b = 0;
  std::string name;
};

// Land-cover style palette; classes beyond the named eight get procedural
// distinct colors.
inline std::vector<PaletteEntry> default_palette(int num_classes) {
  static const PaletteEntry base[8] = {
      {150, 120, 90, "bareland"}, {110, 190, 80, "rangeland"},
      {160, 160, 160, "developed"}, {245, 245, 245, "road"},
      {30, 110, 40, "tree"},       {40, 90, 230, "water"},
      {190, 210, 90, "cropland"},  {220, 60, 40, "building"}};
  std::vector<PaletteEntry> p;
  p.reserve(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    if (c < 8) {
      p.push_back(base[c]);
    } else {
      uint64_t h = splitmix64(0xC0FFEEull + c);
      p.push_back({static_cast<uint8_t>(64 + (h & 0x7F)),
                   static_cast<uint8_t>(64 + ((h >> 8) & 0x7F)),
                   static_cast<uint8_t>(64 + ((h >> 16) & 0x7F)),
                   "class" + std::to_string(c)});
    }
  }
  return p;
}

struct SemanticMask {
  int width = 0;
  int height = 0;
  int num_classes = 0;
  std::vector<uint8_t> class_ids;  // [y][x]

  SemanticMask() = default;
  SemanticMask(int w, int h, int c, uint8_t fill = 0)
      : width(w), height(h), num_classes(c) {
    if (w <= 0 || h <= 0 || c <= 0)
      throw std::invalid_argument("SemanticMask: dimensions and class count must be positive");
    class_ids.assign(static_cast<size_t>(w) * h, fill);
  }

  uint8_t at(int x, int y) const {
    return class_ids[static_cast<size_t>(y) * width + x];
  }
  uint8_t& at(int x, int y) {
    return class_ids[static_cast<size_t>(y) * width + x];
  }

  bool same_shape(const SemanticMask& o) const {
    return width == o.width && height == o.height;
  }

  void validate() const {
    for (uint8_t id : class_ids)
      if (id >= num_classes)
        throw std::invalid_argument("SemanticMask: class id out of range");
  }
};

struct ChangeMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> values;  // 0 = non-change, 1 = change

  ChangeMask() = default;
  ChangeMask(int w, int h, uint8_t fill = 0) : width(w), height(h) {
    if (w <= 0 || h <= 0)
      throw std::invalid_argument("ChangeMask: dimensions must be positive");
    values.assign(static_cast<size_t>(w) * h, fill);
  }

  uint8_t at(int x, int y) const {
    return values[static_cast<size_t>(y) * width + x];
  }
  uint8_t& at(int x, int y) {
    return values[static_cast<size_t>(y) * width + x];
  }

  size_t count_changed() const {
    size_t n = 0;
    for (uint8_t v : values) n += (v != 0);
    return n;
  }
};

// Pixel = 1 iff the class ids differ.
inline ChangeMask derive_change_mask(const SemanticMask& y1, const SemanticMask& y2) {
  if (!y1.same_shape(y2) || y1.num_classes != y2.num_classes)
    throw std::invalid_argument("derive_change_mask: mask pair mismatch");
  ChangeMask m(y1.width, y1.height);
  for (size_t i = 0; i < m.values.size(); ++i)
    m.values[i] = y1.class_ids[i] != y2.class_ids[i] ? 1 : 0;
  return m;
}

// Max-pool to 1/factor resolution (a block is change if any covered pixel
// is), then optional dilation by dilate_radius in the 8-neighborhood sense.
inline ChangeMask downsample_change_mask(const ChangeMask& m, int factor,
                                         int dilate_radius = 0) {
  if (factor < 1) throw std::domain_error("downsample_change_mask: factor must be >= 1");
  if (m.width % factor != 0 || m.height % factor != 0)
    throw std::invalid_argument("downsample_change_mask: dimensions not divisible by factor");
  if (dilate_radius < 0)
    throw std::domain_error("downsample_change_mask: dilate_radius must be >= 0");

  ChangeMask out(m.width / factor, m.height / factor);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) out.at(x / factor, y / factor) = 1;

  for (int r = 0; r < dilate_radius; ++r) {
    ChangeMask next = out;
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        if (next.at(x, y)) continue;
        for (int dy = -1; dy <= 1 && !next.at(x, y); ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= out.width || ny >= out.height) continue;
            if (out.at(nx, ny)) {
              next.at(x, y) = 1;
              break;
            }
          }
      }
    out = std::move(next);
  }
  return out;
}

// Nearest-neighbor downsample (block centers); used to bring a semantic mask
// to latent resolution for conditioning.
inline SemanticMask downsample_mask_nearest(const SemanticMask& m, int factor) {
  if (factor < 1) throw std::domain_error("downsample_mask_nearest: factor must be >= 1");
  if (factor == 1) return m;
  if (m.width % factor != 0 || m.height % factor != 0)
    throw std::invalid_argument("downsample_mask_nearest: dimensions not divisible by factor");
  SemanticMask out(m.width / factor, m.height / factor, m.num_classes);
  int off = factor / 2;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(x, y) = m.at(x * factor + off, y * factor + off);
  return out;
}

}  // namespace cdsynth
