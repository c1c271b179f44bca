#pragma once

// Dense real-valued raster with channel-major layout. One type serves as
// image, latent and network activation throughout the library.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdsynth {

struct Grid {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;  // [c][y][x], row-major within a channel

  Grid() = default;
  Grid(int c, int h, int w, double fill = 0.0) : channels(c), height(h), width(w) {
    if (c <= 0 || h <= 0 || w <= 0)
      throw std::invalid_argument("Grid: dimensions must be positive");
    data.assign(static_cast<size_t>(c) * h * w, fill);
  }

  size_t size() const { return data.size(); }

  double& at(int c, int y, int x) {
    assert(c >= 0 && c < channels && y >= 0 && y < height && x >= 0 && x < width);
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    assert(c >= 0 && c < channels && y >= 0 && y < height && x >= 0 && x < width);
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }

  bool same_shape(const Grid& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

inline Grid like(const Grid& g, double fill = 0.0) {
  return Grid(g.channels, g.height, g.width, fill);
}

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

inline bool all_finite(const Grid& g) {
  for (double v : g.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double grid_min(const Grid& g) {
  double m = g.data[0];
  for (double v : g.data) m = std::min(m, v);
  return m;
}

inline double grid_max(const Grid& g) {
  double m = g.data[0];
  for (double v : g.data) m = std::max(m, v);
  return m;
}

inline double grid_mean(const Grid& g) {
  double s = 0.0;
  for (double v : g.data) s += v;
  return s / static_cast<double>(g.size());
}

}  // namespace cdsynth
