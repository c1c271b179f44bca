#pragma once

// Binary netpbm readers/writers: P5 (single channel) and P6 (RGB), maxval
// 255. Headers may carry '#' comments; payloads are raw bytes.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cdsynth/errors.hpp"

namespace cdsynth {

struct GrayImage {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;
};

struct RgbImage {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;  // interleaved r,g,b
};

namespace netpbm_detail {

inline int next_token(std::istream& is) {
  // skips whitespace and '#' comments, returns a non-negative integer
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw IoError("netpbm: malformed header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = is.get();
  }
  // c is the single whitespace terminating the token (or EOF)
  return value;
}

inline void check_magic(std::istream& is, char digit, const std::string& path) {
  char m[2];
  is.read(m, 2);
  if (!is || m[0] != 'P' || m[1] != digit)
    throw IoError("netpbm: bad magic in " + path);
}

}  // namespace netpbm_detail

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("pgm: cannot open for writing: " + path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("pgm: write failed: " + path);
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("pgm: cannot open: " + path);
  netpbm_detail::check_magic(is, '5', path);
  GrayImage img;
  img.width = netpbm_detail::next_token(is);
  img.height = netpbm_detail::next_token(is);
  int maxval = netpbm_detail::next_token(is);
  if (img.width <= 0 || img.height <= 0 || maxval != 255)
    throw IoError("pgm: unsupported header in " + path);
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw IoError("pgm: truncated payload in " + path);
  return img;
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("ppm: cannot open for writing: " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("ppm: write failed: " + path);
}

inline RgbImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("ppm: cannot open: " + path);
  netpbm_detail::check_magic(is, '6', path);
  RgbImage img;
  img.width = netpbm_detail::next_token(is);
  img.height = netpbm_detail::next_token(is);
  int maxval = netpbm_detail::next_token(is);
  if (img.width <= 0 || img.height <= 0 || maxval != 255)
    throw IoError("ppm: unsupported header in " + path);
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw IoError("ppm: truncated payload in " + path);
  return img;
}

}  // namespace cdsynth
