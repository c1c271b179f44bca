#pragma once

// Pluggable image <-> latent codec. The learned autoencoder the generation
// scheme assumes is abstracted behind this seam: `identity` runs diffusion at
// image resolution, `pool4` at 1/4 resolution via mean pooling with
// nearest-neighbor decode.

#include <stdexcept>

#include "cdsynth/grid.hpp"

namespace cdsynth {

enum class CodecKind { identity, pool4 };

struct CodecSpec {
  CodecKind kind = CodecKind::identity;
  int image_channels = 3;

  int spatial_factor() const { return kind == CodecKind::identity ? 1 : 4; }
  int latent_channels() const { return image_channels; }
};

inline Grid encode(const Grid& image, const CodecSpec& c) {
  if (image.channels != c.image_channels)
    throw std::invalid_argument("codec encode: channel mismatch");
  if (c.kind == CodecKind::identity) return image;
  int f = c.spatial_factor();
  if (image.height % f != 0 || image.width % f != 0)
    throw std::invalid_argument("codec encode: dimensions not divisible by spatial factor");
  Grid lat(image.channels, image.height / f, image.width / f);
  double inv = 1.0 / (f * f);
  for (int ch = 0; ch < image.channels; ++ch)
    for (int y = 0; y < lat.height; ++y)
      for (int x = 0; x < lat.width; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx)
            acc += image.at(ch, y * f + dy, x * f + dx);
        lat.at(ch, y, x) = acc * inv;
      }
  return lat;
}

inline Grid decode(const Grid& latent, const CodecSpec& c) {
  if (latent.channels != c.latent_channels())
    throw std::invalid_argument("codec decode: channel mismatch");
  if (c.kind == CodecKind::identity) return latent;
  int f = c.spatial_factor();
  Grid img(latent.channels, latent.height * f, latent.width * f);
  for (int ch = 0; ch < latent.channels; ++ch)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        img.at(ch, y, x) = latent.at(ch, y / f, x / f);
  return img;
}

}  // namespace cdsynth
