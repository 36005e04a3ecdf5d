#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "segnext/tensor.hpp"

namespace segnext {

inline constexpr uint8_t kIgnoreLabel = 255;

/// H x W class indices; kIgnoreLabel marks pixels without a label.
struct LabelMap {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<uint8_t> data;

  LabelMap() = default;
  LabelMap(int64_t height, int64_t width, uint8_t fill = 0)
      : h(height), w(width), data(static_cast<size_t>(height * width), fill) {}

  uint8_t at(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * w + x)]; }
  uint8_t& at(int64_t y, int64_t x) { return data[static_cast<size_t>(y * w + x)]; }
  bool operator==(const LabelMap&) const = default;
};

/// Image 1 x 3 x H x W in [0, 1] with a matching label map.
struct SegSample {
  Tensor image;
  LabelMap label;
};

/// Expected pixel share per class produced by synth_dataset.
std::vector<double> synth_class_mix(int num_classes);

/// Deterministic images of background plus thin strips (2-4 px wide, at
/// least size/2 long, horizontal, vertical or either diagonal) and
/// elliptical blobs. Every class has its own color with per-pixel noise.
std::vector<SegSample> synth_dataset(uint64_t seed, int n, int64_t size, int num_classes);

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  int64_t crop_y = 0;  // window origin in the scaled image
  int64_t crop_x = 0;
};

/// Random flip (p = 0.5), scale in [0.5, 2] and crop offsets for one sample.
AugmentParams draw_augment(std::mt19937_64& rng, int64_t h, int64_t w, int64_t crop);

/// Image bilinear, label nearest; crop x crop window, short sides padded
/// with zeros and kIgnoreLabel.
SegSample apply_augment(const SegSample& s, const AugmentParams& p, int64_t crop);

inline SegSample augment(const SegSample& s, std::mt19937_64& rng, int64_t crop) {
  return apply_augment(s, draw_augment(rng, s.label.h, s.label.w, crop), crop);
}

/// Nearest-neighbour label resize (pixel-centre convention).
LabelMap resize_nearest(const LabelMap& m, int64_t out_h, int64_t out_w);

/// Bilinear resize of an N x C x H x W tensor without gradient tracking.
template <class T>
BasicTensor<T> resize_image(const BasicTensor<T>& x, int64_t out_h, int64_t out_w);

LabelMap flip_labels(const LabelMap& m);

}  // namespace segnext
