#pragma once

// Change-event simulation on semantic masks: 8-connected instance
// decomposition, target appearance (move a small instance into a homogeneous
// region of another class) and target disappearance (relabel an instance to a
// surrounding class), plus the procedural toy masks used at desk scale.

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cdsynth/errors.hpp"
#include "cdsynth/mask.hpp"
#include "cdsynth/rng.hpp"

namespace cdsynth {

struct Instance {
  int class_id = 0;
  std::vector<std::pair<int, int>> pixels;  // (x, y), scan order
  int min_x = 0, min_y = 0, max_x = 0, max_y = 0;

  int area() const { return static_cast<int>(pixels.size()); }
};

enum class EventKind { appearance, disappearance };

inline const char* event_kind_name(EventKind k) {
  return k == EventKind::appearance ? "appearance" : "disappearance";
}

struct ChangeEvent {
  EventKind kind = EventKind::appearance;
  Instance source;
  int offset_x = 0, offset_y = 0;  // appearance only
  int replacement_class = -1;      // disappearance only
  uint64_t seed = 0;
};

// The exact pixel set whose class differs between y1 and y2 for this event.
inline std::vector<std::pair<int, int>> event_changed_pixels(const ChangeEvent& e) {
  std::vector<std::pair<int, int>> out;
  out.reserve(e.source.pixels.size());
  for (auto [x, y] : e.source.pixels) {
    if (e.kind == EventKind::appearance)
      out.emplace_back(x + e.offset_x, y + e.offset_y);
    else
      out.emplace_back(x, y);
  }
  return out;
}

struct EventParams {
  int min_area = 16;
  double max_area_fraction = 0.05;
  int max_attempts = 100;
};

// 8-connected components per class; every pixel lands in exactly one
// instance. Sorted by area descending (ties by top-left corner).
inline std::vector<Instance> extract_instances(const SemanticMask& mask) {
  const int w = mask.width, h = mask.height;
  std::vector<int> label(static_cast<size_t>(w) * h, -1);
  std::vector<Instance> out;
  std::vector<std::pair<int, int>> stack;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      if (label[static_cast<size_t>(y0) * w + x0] >= 0) continue;
      int id = static_cast<int>(out.size());
      Instance inst;
      inst.class_id = mask.at(x0, y0);
      inst.min_x = inst.max_x = x0;
      inst.min_y = inst.max_y = y0;
      stack.clear();
      stack.emplace_back(x0, y0);
      label[static_cast<size_t>(y0) * w + x0] = id;
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        inst.pixels.emplace_back(x, y);
        inst.min_x = std::min(inst.min_x, x);
        inst.max_x = std::max(inst.max_x, x);
        inst.min_y = std::min(inst.min_y, y);
        inst.max_y = std::max(inst.max_y, y);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            size_t ni = static_cast<size_t>(ny) * w + nx;
            if (label[ni] >= 0 || mask.at(nx, ny) != inst.class_id) continue;
            label[ni] = id;
            stack.emplace_back(nx, ny);
          }
        }
      }
      std::sort(inst.pixels.begin(), inst.pixels.end(),
                [](auto a, auto b) { return a.second != b.second ? a.second < b.second
                                                                 : a.first < b.first; });
      out.push_back(std::move(inst));
    }
  }
  std::sort(out.begin(), out.end(), [](const Instance& a, const Instance& b) {
    if (a.area() != b.area()) return a.area() > b.area();
    if (a.min_y != b.min_y) return a.min_y < b.min_y;
    return a.min_x < b.min_x;
  });
  return out;
}

struct SimulatedChange {
  SemanticMask y2;
  ChangeEvent event;
};

namespace detail {

inline std::vector<int> eligible_instances(const std::vector<Instance>& instances,
                                           const SemanticMask& mask,
                                           const EventParams& p) {
  int max_area =
      static_cast<int>(p.max_area_fraction * mask.width * mask.height);
  std::vector<int> idx;
  for (size_t i = 0; i < instances.size(); ++i)
    if (instances[i].area() >= p.min_area && instances[i].area() <= max_area)
      idx.push_back(static_cast<int>(i));
  return idx;
}

inline std::vector<uint8_t> footprint_raster(const SemanticMask& mask,
                                             const Instance& inst) {
  std::vector<uint8_t> in_source(static_cast<size_t>(mask.width) * mask.height, 0);
  for (auto [x, y] : inst.pixels)
    in_source[static_cast<size_t>(y) * mask.width + x] = 1;
  return in_source;
}

}  // namespace detail

// Moves the footprint of a small instance to a uniformly drawn in-bounds
// position whose covered pixels all share one class different from the
// instance's own, without touching the source footprint.
inline SimulatedChange simulate_appearance(const SemanticMask& mask, uint64_t seed,
                                           const EventParams& params = {}) {
  auto instances = extract_instances(mask);
  auto eligible = detail::eligible_instances(instances, mask, params);
  if (eligible.empty())
    throw EventSimulationError("appearance: no eligible instance");

  Rng rng(seed);
  for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
    const Instance& inst =
        instances[eligible[rng.uniform_int(static_cast<int>(eligible.size()))]];
    auto in_source = detail::footprint_raster(mask, inst);
    int bw = inst.max_x - inst.min_x + 1;
    int bh = inst.max_y - inst.min_y + 1;
    int ox = rng.uniform_int(mask.width - bw + 1) - inst.min_x;
    int oy = rng.uniform_int(mask.height - bh + 1) - inst.min_y;

    int target_class = mask.at(inst.pixels[0].first + ox, inst.pixels[0].second + oy);
    if (target_class == inst.class_id) continue;
    bool ok = true;
    for (auto [x, y] : inst.pixels) {
      int qx = x + ox, qy = y + oy;
      if (mask.at(qx, qy) != target_class ||
          in_source[static_cast<size_t>(qy) * mask.width + qx]) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    SimulatedChange result{mask, ChangeEvent{}};
    for (auto [x, y] : inst.pixels)
      result.y2.at(x + ox, y + oy) = static_cast<uint8_t>(inst.class_id);
    result.event.kind = EventKind::appearance;
    result.event.source = inst;
    result.event.offset_x = ox;
    result.event.offset_y = oy;
    result.event.seed = seed;
    return result;
  }
  throw EventSimulationError("appearance: no admissible placement after " +
                             std::to_string(params.max_attempts) + " attempts");
}

// Relabels an instance to a class drawn from its exterior 8-neighborhood
// histogram, with probability proportional to boundary frequency.
inline SimulatedChange simulate_disappearance(const SemanticMask& mask, uint64_t seed,
                                              const EventParams& params = {}) {
  auto instances = extract_instances(mask);
  auto eligible = detail::eligible_instances(instances, mask, params);
  if (eligible.empty())
    throw EventSimulationError("disappearance: no eligible instance");

  Rng rng(seed);
  const Instance& inst =
      instances[eligible[rng.uniform_int(static_cast<int>(eligible.size()))]];
  auto in_source = detail::footprint_raster(mask, inst);

  std::vector<long> histogram(mask.num_classes, 0);
  long total = 0;
  for (auto [x, y] : inst.pixels) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
        if (in_source[static_cast<size_t>(ny) * mask.width + nx]) continue;
        histogram[mask.at(nx, ny)] += 1;
        total += 1;
      }
    }
  }
  if (total == 0 || histogram[inst.class_id] == total)
    throw EventSimulationError("disappearance: instance has no distinct surround");

  histogram[inst.class_id] = 0;  // 8-connectivity normally guarantees this already
  total = 0;
  for (long c : histogram) total += c;
  long draw = 0;
  {
    // uniform in [0, total) without modulo bias
    uint64_t bound = static_cast<uint64_t>(total);
    uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do {
      x = rng.next_u64();
    } while (x >= limit);
    draw = static_cast<long>(x % bound);
  }
  int replacement = 0;
  for (int c = 0; c < mask.num_classes; ++c) {
    if (draw < histogram[c]) {
      replacement = c;
      break;
    }
    draw -= histogram[c];
  }

  SimulatedChange result{mask, ChangeEvent{}};
  for (auto [x, y] : inst.pixels)
    result.y2.at(x, y) = static_cast<uint8_t>(replacement);
  result.event.kind = EventKind::disappearance;
  result.event.source = inst;
  result.event.replacement_class = replacement;
  result.event.seed = seed;
  return result;
}

struct MaskGenParams {
  int background_seeds = 5;
  int instances = 3;
  int instance_min_size = 5;
  int instance_max_size = 10;
};

// Procedural semantic mask: nearest-seed-point multi-class background plus a
// few rectangular/elliptical instances whose class differs from everything
// they cover (so they stay separate components with exact stamped area).
inline SemanticMask generate_toy_semantic_mask(uint64_t seed, int size,
                                               int num_classes,
                                               const MaskGenParams& params = {}) {
  if (num_classes < 2)
    throw std::domain_error("generate_toy_semantic_mask: need at least 2 classes");
  if (size < 4) throw std::domain_error("generate_toy_semantic_mask: size too small");
  Rng rng(seed);

  int nseeds = std::max(1, params.background_seeds);
  std::vector<int> sx(nseeds), sy(nseeds), sc(nseeds);
  for (int i = 0; i < nseeds; ++i) {
    sx[i] = rng.uniform_int(size);
    sy[i] = rng.uniform_int(size);
    sc[i] = rng.uniform_int(num_classes);
  }
  bool all_same = true;
  for (int i = 1; i < nseeds; ++i) all_same &= (sc[i] == sc[0]);
  if (all_same && nseeds > 1)
    sc[nseeds - 1] = (sc[0] + 1 + rng.uniform_int(num_classes - 1)) % num_classes;

  SemanticMask mask(size, size, num_classes);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      long best = -1;
      int best_i = 0;
      for (int i = 0; i < nseeds; ++i) {
        long dx = x - sx[i], dy = y - sy[i];
        long d = dx * dx + dy * dy;
        if (best < 0 || d < best) {
          best = d;
          best_i = i;
        }
      }
      mask.at(x, y) = static_cast<uint8_t>(sc[best_i]);
    }

  std::vector<uint8_t> stamped(static_cast<size_t>(size) * size, 0);
  for (int k = 0; k < params.instances; ++k) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      int iw = params.instance_min_size +
               rng.uniform_int(params.instance_max_size - params.instance_min_size + 1);
      int ih = params.instance_min_size +
               rng.uniform_int(params.instance_max_size - params.instance_min_size + 1);
      bool ellipse = rng.uniform_int(2) == 1;
      if (iw > size - 2 || ih > size - 2) continue;
      int x0 = 1 + rng.uniform_int(size - iw - 1);
      int y0 = 1 + rng.uniform_int(size - ih - 1);

      // the stamp site, padded by one pixel, must be untouched background
      bool clear = true;
      std::vector<bool> covered_class(num_classes, false);
      for (int y = y0 - 1; y <= y0 + ih && clear; ++y)
        for (int x = x0 - 1; x <= x0 + iw; ++x) {
          if (stamped[static_cast<size_t>(y) * size + x]) {
            clear = false;
            break;
          }
          covered_class[mask.at(x, y)] = true;
        }
      if (!clear) continue;

      std::vector<int> choices;
      for (int c = 0; c < num_classes; ++c)
        if (!covered_class[c]) choices.push_back(c);
      int cls;
      if (!choices.empty()) {
        cls = choices[rng.uniform_int(static_cast<int>(choices.size()))];
      } else {
        int center = mask.at(x0 + iw / 2, y0 + ih / 2);
        cls = rng.uniform_int(num_classes - 1);
        if (cls >= center) ++cls;
      }

      double ax = iw / 2.0, ay = ih / 2.0;
      double cx = x0 + ax - 0.5, cy = y0 + ay - 0.5;
      for (int y = y0; y < y0 + ih; ++y)
        for (int x = x0; x < x0 + iw; ++x) {
          if (ellipse) {
            double ex = (x - cx) / ax, ey = (y - cy) / ay;
            if (ex * ex + ey * ey > 1.0) continue;
          }
          mask.at(x, y) = static_cast<uint8_t>(cls);
          stamped[static_cast<size_t>(y) * size + x] = 1;
        }
      break;
    }
  }
  return mask;
}

}  // namespace cdsynth
