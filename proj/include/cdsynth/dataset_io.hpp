#pragma once

// Dataset serialization: images as P6 PPM through a recorded affine byte
// map, masks as lossless P5 PGM, one JSON object per manifest line, a text
// palette sidecar, and the five-panel inspection montage.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdsynth/errors.hpp"
#include "cdsynth/grid.hpp"
#include "cdsynth/mask.hpp"
#include "cdsynth/netpbm.hpp"
#include "cdsynth/pair_gen.hpp"

namespace cdsynth {

// Real range [lo, hi] <-> byte range [0, 255]. Quantization error for
// in-range values is at most half a step; out-of-range values clamp and are
// counted.
struct AffineMap {
  double lo = -1.0;
  double hi = 1.0;

  uint8_t quantize(double v, uint64_t* clamped = nullptr) const {
    double q = (v - lo) / (hi - lo) * 255.0;
    if (q < 0.0) {
      if (clamped != nullptr) ++*clamped;
      return 0;
    }
    if (q > 255.0) {
      if (clamped != nullptr) ++*clamped;
      return 255;
    }
    return static_cast<uint8_t>(std::llround(q));
  }

  double dequantize(uint8_t b) const { return lo + b / 255.0 * (hi - lo); }

  static AffineMap calibrate(std::span<const Grid> batch) {
    if (batch.empty()) throw std::invalid_argument("AffineMap: empty calibration batch");
    double lo = grid_min(batch[0]), hi = grid_max(batch[0]);
    for (const Grid& g : batch) {
      lo = std::min(lo, grid_min(g));
      hi = std::max(hi, grid_max(g));
    }
    if (!(hi > lo)) hi = lo + 1.0;
    return {lo, hi};
  }
};

inline RgbImage grid_to_rgb(const Grid& g, const AffineMap& map,
                            uint64_t* clamped = nullptr) {
  if (g.channels != 3)
    throw std::invalid_argument("grid_to_rgb: dataset images must have 3 channels");
  RgbImage img;
  img.width = g.width;
  img.height = g.height;
  img.pixels.resize(static_cast<size_t>(g.width) * g.height * 3);
  size_t i = 0;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int c = 0; c < 3; ++c) img.pixels[i++] = map.quantize(g.at(c, y, x), clamped);
  return img;
}

inline Grid rgb_to_grid(const RgbImage& img, const AffineMap& map) {
  Grid g(3, img.height, img.width);
  size_t i = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) g.at(c, y, x) = map.dequantize(img.pixels[i++]);
  return g;
}

inline void write_palette(const std::string& path, const std::vector<PaletteEntry>& palette) {
  std::ofstream os(path);
  if (!os) throw IoError("palette: cannot open for writing: " + path);
  for (size_t c = 0; c < palette.size(); ++c)
    os << c << " " << int(palette[c].r) << " " << int(palette[c].g) << " "
       << int(palette[c].b) << " " << palette[c].name << "\n";
  if (!os) throw IoError("palette: write failed: " + path);
}

inline std::vector<PaletteEntry> read_palette(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("palette: cannot open: " + path);
  std::vector<PaletteEntry> palette;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    size_t id;
    int r, g, b;
    std::string name;
    if (!(ls >> id >> r >> g >> b >> name) || id != palette.size())
      throw IoError("palette: malformed line in " + path);
    palette.push_back({static_cast<uint8_t>(r), static_cast<uint8_t>(g),
                       static_cast<uint8_t>(b), name});
  }
  return palette;
}

struct ManifestRecord {
  std::string id;
  std::string t1, t2, y1, y2, change;  // paths relative to the dataset dir
  std::string event;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  AffineMap affine;
  uint64_t clamped = 0;
  std::map<std::string, std::string> meta;
};

// Writes samples under <dir>/samples/ and appends one self-contained JSON
// object per manifest line; the first line is the dataset header.
class DatasetWriter {
 public:
  DatasetWriter(const std::string& dir, uint64_t config_hash, AffineMap affine,
                const std::vector<PaletteEntry>& palette)
      : dir_(dir), config_hash_(config_hash), affine_(affine) {
    std::error_code ec;
    std::filesystem::create_directories(std::filesystem::path(dir) / "samples", ec);
    if (ec) throw IoError("dataset: cannot create " + dir);
    write_palette((std::filesystem::path(dir) / "palette.txt").string(), palette);
    manifest_.open((std::filesystem::path(dir) / "manifest.jsonl").string());
    if (!manifest_) throw IoError("dataset: cannot open manifest in " + dir);
    nlohmann::json header;
    header["kind"] = "dataset";
    header["version"] = 1;
    header["config_hash"] = hash_hex(config_hash);
    header["affine"] = {{"lo", affine.lo}, {"hi", affine.hi}};
    header["palette"] = "palette.txt";
    header["num_classes"] = palette.size();
    manifest_ << header.dump() << "\n";
  }

  static std::string hash_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  ManifestRecord write_sample(const SamplePair& pair) {
    if (pair.id.empty()) throw std::invalid_argument("dataset: sample id must be set");
    if (!ids_.insert(pair.id).second)
      throw std::invalid_argument("dataset: duplicate sample id " + pair.id);
    ManifestRecord rec;
    rec.id = pair.id;
    rec.event = event_kind_name(pair.event.kind);
    rec.seed = pair.seed;
    rec.config_hash = config_hash_;
    rec.affine = affine_;
    rec.meta = pair.meta;
    rec.t1 = "samples/" + pair.id + "_t1.ppm";
    rec.t2 = "samples/" + pair.id + "_t2.ppm";
    rec.y1 = "samples/" + pair.id + "_y1.pgm";
    rec.y2 = "samples/" + pair.id + "_y2.pgm";
    rec.change = "samples/" + pair.id + "_change.pgm";

    auto full = [&](const std::string& rel) {
      return (std::filesystem::path(dir_) / rel).string();
    };
    write_ppm(full(rec.t1), grid_to_rgb(pair.x1, affine_, &rec.clamped));
    write_ppm(full(rec.t2), grid_to_rgb(pair.x2, affine_, &rec.clamped));
    write_pgm(full(rec.y1), {pair.y1.width, pair.y1.height, pair.y1.class_ids});
    write_pgm(full(rec.y2), {pair.y2.width, pair.y2.height, pair.y2.class_ids});
    GrayImage ch{pair.change.width, pair.change.height, pair.change.values};
    for (uint8_t& v : ch.pixels) v = v ? 255 : 0;
    write_pgm(full(rec.change), ch);

    nlohmann::json j;
    j["kind"] = "sample";
    j["id"] = rec.id;
    j["event"] = rec.event;
    j["seed"] = hash_hex(rec.seed);
    j["config_hash"] = hash_hex(rec.config_hash);
    j["affine"] = {{"lo", affine_.lo}, {"hi", affine_.hi}};
    j["clamped"] = rec.clamped;
    j["files"] = {{"t1", rec.t1}, {"t2", rec.t2},   {"y1", rec.y1},
                  {"y2", rec.y2}, {"change", rec.change}};
    if (!rec.meta.empty()) j["meta"] = rec.meta;
    manifest_ << j.dump() << "\n";
    if (!manifest_) throw IoError("dataset: manifest write failed");
    records_.push_back(rec);
    return rec;
  }

  void finish() { manifest_.flush(); }

  const std::vector<ManifestRecord>& records() const { return records_; }
  uint64_t clamped_total() const {
    uint64_t n = 0;
    for (const auto& r : records_) n += r.clamped;
    return n;
  }

 private:
  std::string dir_;
  uint64_t config_hash_ = 0;
  AffineMap affine_;
  std::ofstream manifest_;
  std::set<std::string> ids_;
  std::vector<ManifestRecord> records_;
};

struct DatasetHeader {
  uint64_t version = 0;
  std::string config_hash;
  AffineMap affine;
  int num_classes = 0;
  std::vector<PaletteEntry> palette;
};

// Streams samples back, validating XOR consistency of every record on load.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& manifest_path)
      : dir_(std::filesystem::path(manifest_path).parent_path()),
        manifest_(manifest_path) {
    if (!manifest_) throw IoError("dataset: cannot open manifest: " + manifest_path);
    std::string line;
    if (!std::getline(manifest_, line))
      throw IoError("dataset: empty manifest file: " + manifest_path);
    nlohmann::json h = parse_line(line);
    if (h.value("kind", "") != "dataset")
      throw IoError("dataset: missing header line in " + manifest_path);
    header_.version = h.value("version", 0);
    header_.config_hash = h.value("config_hash", "");
    header_.affine.lo = h["affine"]["lo"].get<double>();
    header_.affine.hi = h["affine"]["hi"].get<double>();
    auto palette_path = dir_ / h.value("palette", "palette.txt");
    header_.palette = read_palette(palette_path.string());
    header_.num_classes = static_cast<int>(header_.palette.size());
  }

  const DatasetHeader& header() const { return header_; }

  std::optional<SamplePair> next() {
    std::string line;
    while (std::getline(manifest_, line)) {
      if (line.empty()) continue;
      nlohmann::json j = parse_line(line);
      if (j.value("kind", "") != "sample") continue;
      return load_record(j);
    }
    return std::nullopt;
  }

  static std::vector<SamplePair> read_all(const std::string& manifest_path) {
    DatasetReader reader(manifest_path);
    std::vector<SamplePair> out;
    while (auto p = reader.next()) out.push_back(std::move(*p));
    return out;
  }

 private:
  static nlohmann::json parse_line(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError("dataset: malformed manifest line");
    return j;
  }

  SamplePair load_record(const nlohmann::json& j) {
    SamplePair p;
    p.id = j.value("id", "");
    AffineMap affine{j["affine"]["lo"].get<double>(), j["affine"]["hi"].get<double>()};
    auto full = [&](const std::string& rel) {
      auto path = dir_ / rel;
      if (!std::filesystem::exists(path))
        throw IoError("dataset: missing file " + path.string() + " for record " + p.id);
      return path.string();
    };
    p.x1 = rgb_to_grid(read_ppm(full(j["files"]["t1"].get<std::string>())), affine);
    p.x2 = rgb_to_grid(read_ppm(full(j["files"]["t2"].get<std::string>())), affine);
    p.y1 = to_mask(read_pgm(full(j["files"]["y1"].get<std::string>())));
    p.y2 = to_mask(read_pgm(full(j["files"]["y2"].get<std::string>())));
    GrayImage ch = read_pgm(full(j["files"]["change"].get<std::string>()));
    p.change = ChangeMask(ch.width, ch.height);
    for (size_t i = 0; i < ch.pixels.size(); ++i)
      p.change.values[i] = ch.pixels[i] ? 1 : 0;
    p.seed = std::stoull(j.value("seed", "0"), nullptr, 16);
    p.config_hash = std::stoull(j.value("config_hash", "0"), nullptr, 16);
    p.event.kind = j.value("event", "") == "disappearance" ? EventKind::disappearance
                                                           : EventKind::appearance;
    if (j.contains("meta"))
      for (auto& [k, v] : j["meta"].items()) p.meta[k] = v.get<std::string>();

    ChangeMask expected = derive_change_mask(p.y1, p.y2);
    if (expected.values != p.change.values)
      throw IoError("dataset: XOR-inconsistent record " + p.id);
    return p;
  }

  SemanticMask to_mask(const GrayImage& img) const {
    SemanticMask m(img.width, img.height, header_.num_classes);
    m.class_ids = img.pixels;
    m.validate();
    return m;
  }

  std::filesystem::path dir_;
  std::ifstream manifest_;
  DatasetHeader header_;
};

// Side-by-side panel: t1 | t2 | y1 colorized | y2 colorized | change, with a
// light gutter between panels.
inline RgbImage render_montage(const SamplePair& pair,
                               const std::vector<PaletteEntry>& palette,
                               int gutter = 2) {
  if (static_cast<int>(palette.size()) < pair.y1.num_classes)
    throw std::invalid_argument("render_montage: palette too short");
  int w = pair.x1.width, h = pair.x1.height;
  AffineMap map = AffineMap::calibrate(std::vector<Grid>{pair.x1, pair.x2});
  RgbImage out;
  out.width = 5 * w + 4 * gutter;
  out.height = h;
  out.pixels.assign(static_cast<size_t>(out.width) * out.height * 3, 230);

  auto put = [&](int px, int py, uint8_t r, uint8_t g, uint8_t b) {
    size_t i = (static_cast<size_t>(py) * out.width + px) * 3;
    out.pixels[i] = r;
    out.pixels[i + 1] = g;
    out.pixels[i + 2] = b;
  };
  auto blit_grid = [&](const Grid& g, int x0) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        put(x0 + x, y, map.quantize(g.at(0, y, x)), map.quantize(g.at(1 % g.channels, y, x)),
            map.quantize(g.at(2 % g.channels, y, x)));
  };
  auto blit_mask = [&](const SemanticMask& m, int x0) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const PaletteEntry& e = palette[m.at(x, y)];
        put(x0 + x, y, e.r, e.g, e.b);
      }
  };
  blit_grid(pair.x1, 0);
  blit_grid(pair.x2, w + gutter);
  blit_mask(pair.y1, 2 * (w + gutter));
  blit_mask(pair.y2, 3 * (w + gutter));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      uint8_t v = pair.change.at(x, y) ? 255 : 0;
      put(4 * (w + gutter) + x, y, v, v, v);
    }
  return out;
}

}  // namespace cdsynth
