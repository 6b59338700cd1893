#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "coreselect/data.hpp"
#include "coreselect/error.hpp"
#include "coreselect/rng.hpp"

namespace coreselect {

struct AugmentConfig {
  double crop_scale_lo = 0.2;
  double crop_scale_hi = 1.0;
  double flip_prob = 0.5;
  double jitter_strength = 0.4;
  double grayscale_prob = 0.2;
  std::size_t output_height = 0;  // 0 means "same as input"
  std::size_t output_width = 0;

  void validate() const {
    if (!(crop_scale_lo > 0.0 && crop_scale_lo <= crop_scale_hi && crop_scale_hi <= 1.0))
      throw ConfigError("augment.crop_scale: need 0 < lo <= hi <= 1");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("augment.flip_prob must be in [0, 1]");
    if (!(grayscale_prob >= 0.0 && grayscale_prob <= 1.0))
      throw ConfigError("augment.grayscale_prob must be in [0, 1]");
    if (!(jitter_strength >= 0.0)) throw ConfigError("augment.jitter_strength must be >= 0");
  }
};

struct AugmentKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t example_index = 0;
};

struct Image {
  ImageShape shape;
  std::vector<double> pixels;
};

struct ViewPair {
  Image view_a;
  Image view_b;
  std::size_t example_index = 0;
};

struct CropWindow {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

inline ImageShape output_shape(const ImageShape& in, const AugmentConfig& cfg) {
  return {in.channels, cfg.output_height ? cfg.output_height : in.height,
          cfg.output_width ? cfg.output_width : in.width};
}

// Area fraction ~ U[lo, hi], aspect ratio ~ U[3/4, 4/3]. A side that would
// exceed the image is clamped to the image and the other side rescaled to
// keep the sampled area; the result is clamped to at least 1x1.
inline CropWindow sample_crop(const ImageShape& shape, const AugmentConfig& cfg, CounterRng& rng) {
  const double H = static_cast<double>(shape.height);
  const double W = static_cast<double>(shape.width);
  const double area = rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi) * H * W;
  const double ratio = rng.uniform(3.0 / 4.0, 4.0 / 3.0);
  double w = std::sqrt(area * ratio);
  double h = std::sqrt(area / ratio);
  if (w > W) {
    w = W;
    h = area / W;
  }
  if (h > H) {
    h = H;
    w = std::min(W, area / H);
  }
  CropWindow win;
  win.width = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(w)), 1, shape.width);
  win.height = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(h)), 1, shape.height);
  win.left = static_cast<std::size_t>(rng.below(shape.width - win.width + 1));
  win.top = static_cast<std::size_t>(rng.below(shape.height - win.height + 1));
  return win;
}

// Bilinear resize of a crop window (half-pixel centers, edge clamped).
// A full-image window resized to the input size reproduces the input exactly.
inline Image crop_resize(std::span<const double> src, const ImageShape& shape, const CropWindow& win,
                         std::size_t out_h, std::size_t out_w) {
  Image out{{shape.channels, out_h, out_w}, std::vector<double>(shape.channels * out_h * out_w)};
  const double sy = static_cast<double>(win.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(win.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(win.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, win.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(win.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, win.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < shape.channels; ++c) {
        const double* plane = src.data() + c * shape.plane();
        auto at = [&](std::size_t yy, std::size_t xx) {
          return plane[(win.top + yy) * shape.width + win.left + xx];
        };
        double v;
        if (wy == 0.0 && wx == 0.0) {
          v = at(y0, x0);
        } else {
          const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
          const double bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
          v = top * (1.0 - wy) + bottom * wy;
        }
        out.pixels[c * out_h * out_w + y * out_w + x] = v;
      }
    }
  }
  return out;
}

inline void flip_horizontal(Image& img) {
  const auto& s = img.shape;
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t y = 0; y < s.height; ++y) {
      double* row = img.pixels.data() + c * s.plane() + y * s.width;
      std::reverse(row, row + s.width);
    }
}

// Per-channel brightness then contrast (around the channel mean), clamped.
inline void color_jitter(Image& img, double strength, CounterRng& rng) {
  if (strength == 0.0) return;
  const auto& s = img.shape;
  for (std::size_t c = 0; c < s.channels; ++c) {
    const double brightness = rng.uniform(1.0 - strength, 1.0 + strength);
    const double contrast = rng.uniform(1.0 - strength, 1.0 + strength);
    std::span<double> plane(img.pixels.data() + c * s.plane(), s.plane());
    double mean = 0.0;
    for (double& v : plane) {
      v *= brightness;
      mean += v;
    }
    mean /= static_cast<double>(plane.size());
    for (double& v : plane) v = std::clamp((v - mean) * contrast + mean, 0.0, 1.0);
  }
}

// ITU-R 601 luma replicated to every channel; identity unless 3 channels.
inline void to_grayscale(Image& img) {
  const auto& s = img.shape;
  if (s.channels != 3) return;
  const std::size_t p = s.plane();
  for (std::size_t i = 0; i < p; ++i) {
    const double y = 0.299 * img.pixels[i] + 0.587 * img.pixels[p + i] + 0.114 * img.pixels[2 * p + i];
    img.pixels[i] = img.pixels[p + i] = img.pixels[2 * p + i] = y;
  }
}

// One augmented view. Each transform draws from its own sub-stream of the
// (seed, epoch, example, view) key, so disabling one never shifts another.
inline Image make_view(const Example& example, const AugmentConfig& cfg, const AugmentKey& key,
                       std::uint32_t view_id) {
  const auto out = output_shape(example.shape, cfg);
  CounterRng crop_rng(key.seed, Stream::crop, key.epoch, key.example_index, view_id);
  const auto win = sample_crop(example.shape, cfg, crop_rng);
  Image img = crop_resize(example.pixels, example.shape, win, out.height, out.width);

  CounterRng flip_rng(key.seed, Stream::flip, key.epoch, key.example_index, view_id);
  if (flip_rng.bernoulli(cfg.flip_prob)) flip_horizontal(img);

  CounterRng jitter_rng(key.seed, Stream::jitter, key.epoch, key.example_index, view_id);
  color_jitter(img, cfg.jitter_strength, jitter_rng);

  CounterRng gray_rng(key.seed, Stream::grayscale, key.epoch, key.example_index, view_id);
  if (gray_rng.bernoulli(cfg.grayscale_prob)) to_grayscale(img);
  return img;
}

inline ViewPair make_views(const Example& example, const AugmentConfig& cfg, const AugmentKey& key) {
  return {make_view(example, cfg, key, 0), make_view(example, cfg, key, 1), example.index};
}

}  // namespace coreselect
