#include "segnext/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "segnext/kernels.hpp"

namespace segnext {

namespace {

std::array<double, 3> class_color(int c) {
  static constexpr std::array<std::array<double, 3>, 7> palette{{
      {0.30, 0.30, 0.30},
      {0.90, 0.30, 0.20},
      {0.20, 0.45, 0.90},
      {0.25, 0.80, 0.30},
      {0.90, 0.85, 0.20},
      {0.70, 0.30, 0.85},
      {0.20, 0.85, 0.85},
  }};
  if (c < static_cast<int>(palette.size())) return palette[static_cast<size_t>(c)];
  // golden-angle hue walk for larger label sets
  const double hue = std::fmod(c * 0.618033988749895, 1.0) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(hue, 2.0) - 1.0);
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hue)) {
    case 0: rgb = {1, x, 0}; break;
    case 1: rgb = {x, 1, 0}; break;
    case 2: rgb = {0, 1, x}; break;
    case 3: rgb = {0, x, 1}; break;
    case 4: rgb = {x, 0, 1}; break;
    default: rgb = {1, 0, x}; break;
  }
  const double v = 0.55 + 0.35 * std::fmod(c * 0.377, 1.0);
  for (auto& ch : rgb) ch = 0.1 + ch * (v - 0.1);
  return rgb;
}

constexpr double kMinBlobRadius = 0.2;

struct Painter {
  LabelMap& label;
  std::vector<int64_t>& counts;

  void set(int64_t y, int64_t x, int c) {
    auto& v = label.at(y, x);
    --counts[v];
    v = static_cast<uint8_t>(c);
    ++counts[v];
  }
};

void paint_blob(Painter& p, std::mt19937_64& rng, int64_t size, int c, double want_area) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double rmin = kMinBlobRadius * static_cast<double>(size);
  const double rmax = 0.30 * static_cast<double>(size);
  const double area = std::max(want_area * (0.5 + 0.5 * u(rng)), M_PI * rmin * rmin);
  const double aspect = 0.6 + 0.8 * u(rng);
  const double ry = std::clamp(std::sqrt(area / M_PI * aspect), rmin, rmax);
  const double rx = std::clamp(std::sqrt(area / M_PI / aspect), rmin, rmax);
  const double cy = ry + u(rng) * (static_cast<double>(size) - 2 * ry);
  const double cx = rx + u(rng) * (static_cast<double>(size) - 2 * rx);
  for (int64_t y = 0; y < size; ++y) {
    const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
    if (std::abs(dy) > 1.0) continue;
    for (int64_t x = 0; x < size; ++x) {
      const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
      if (dx * dx + dy * dy <= 1.0) p.set(y, x, c);
    }
  }
}

void paint_strip(Painter& p, std::mt19937_64& rng, int64_t size, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double width = static_cast<double>(std::uniform_int_distribution<int>(2, 4)(rng));
  const double s = static_cast<double>(size);
  const double length = s * (0.5 + 0.35 * u(rng));
  const int orient = std::uniform_int_distribution<int>(0, 3)(rng);
  const double r = std::sqrt(0.5);
  const std::array<std::array<double, 2>, 4> dirs{{{1, 0}, {0, 1}, {r, r}, {r, -r}}};
  const auto [dx, dy] = dirs[static_cast<size_t>(orient)];
  // keep both endpoints inside the image
  const double ex = std::abs(dx) * length / 2 + width;
  const double ey = std::abs(dy) * length / 2 + width;
  const double cx = ex + u(rng) * std::max(0.0, s - 2 * ex);
  const double cy = ey + u(rng) * std::max(0.0, s - 2 * ey);
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5 - cx;
      const double py = static_cast<double>(y) + 0.5 - cy;
      const double along = px * dx + py * dy;
      const double across = -px * dy + py * dx;
      if (std::abs(along) <= length / 2 && std::abs(across) <= width / 2) p.set(y, x, c);
    }
  }
}

}  // namespace

std::vector<double> synth_class_mix(int num_classes) {
  if (num_classes < 2) throw Error("synth_class_mix: num_classes must be >= 2");
  std::vector<double> mix(static_cast<size_t>(num_classes));
  const double fg = std::min(0.15, 0.6 / (num_classes - 1));
  for (int c = 1; c < num_classes; ++c) mix[static_cast<size_t>(c)] = fg;
  mix[0] = 1.0 - fg * (num_classes - 1);
  return mix;
}

std::vector<SegSample> synth_dataset(uint64_t seed, int n, int64_t size, int num_classes) {
  if (n < 1) throw Error("synth_dataset: n must be >= 1, got " + std::to_string(n));
  if (size < 64) throw Error("synth_dataset: size must be >= 64, got " + std::to_string(size));
  if (num_classes < 2 || num_classes > 255) {
    throw Error("synth_dataset: num_classes must be in [2, 255], got " + std::to_string(num_classes));
  }
  const auto mix = synth_class_mix(num_classes);
  const double area = static_cast<double>(size * size);
  const double min_blob = M_PI * std::pow(kMinBlobRadius * static_cast<double>(size), 2);
  std::vector<SegSample> out;
  out.reserve(static_cast<size_t>(n));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);

  for (int i = 0; i < n; ++i) {
    SegSample s;
    s.label = LabelMap(size, size, 0);
    std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
    counts[0] = size * size;
    Painter painter{s.label, counts};
    for (int obj = 0; obj < 64; ++obj) {
      int best = -1;
      double best_deficit = 0.0;
      for (int c = 1; c < num_classes; ++c) {
        const double target = mix[static_cast<size_t>(c)] * area;
        const double missing = target - static_cast<double>(counts[static_cast<size_t>(c)]);
        const double deficit = missing / target;
        // stop once the remainder is below half the smallest blob
        if (missing > 0.5 * min_blob && deficit > best_deficit) {
          best_deficit = deficit;
          best = c;
        }
      }
      if (best < 0) break;
      paint_blob(painter, rng, size, best, best_deficit * mix[static_cast<size_t>(best)] * area);
    }
    // one strip per image, painted last so it stays whole
    paint_strip(painter, rng, size, std::uniform_int_distribution<int>(1, num_classes - 1)(rng));

    // per-sample brightness shift per class, then per-pixel noise
    std::vector<std::array<double, 3>> colors(static_cast<size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) {
      const double shift = (u(rng) - 0.5) * 0.12;
      colors[static_cast<size_t>(c)] = class_color(c);
      for (auto& ch : colors[static_cast<size_t>(c)]) ch += shift;
    }
    s.image = Tensor(Shape{1, 3, size, size});
    auto img = s.image.mutable_data();
    const int64_t plane = size * size;
    for (int64_t p = 0; p < plane; ++p) {
      const auto& col = colors[s.label.data[static_cast<size_t>(p)]];
      for (int64_t ch = 0; ch < 3; ++ch) {
        img[static_cast<size_t>(ch * plane + p)] =
            static_cast<float>(std::clamp(col[static_cast<size_t>(ch)] + noise(rng), 0.0, 1.0));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

AugmentParams draw_augment(std::mt19937_64& rng, int64_t h, int64_t w, int64_t crop) {
  AugmentParams p;
  p.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  p.scale = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  const int64_t sh = std::max<int64_t>(1, std::llround(static_cast<double>(h) * p.scale));
  const int64_t sw = std::max<int64_t>(1, std::llround(static_cast<double>(w) * p.scale));
  p.crop_y = sh > crop ? std::uniform_int_distribution<int64_t>(0, sh - crop)(rng) : 0;
  p.crop_x = sw > crop ? std::uniform_int_distribution<int64_t>(0, sw - crop)(rng) : 0;
  return p;
}

template <class T>
BasicTensor<T> resize_image(const BasicTensor<T>& x, int64_t out_h, int64_t out_w) {
  const Shape s = x.shape();
  if (s.numel() == 0) throw Error("resize_image: empty input");
  if (s.h == out_h && s.w == out_w) return x;
  BasicTensor<T> out(Shape{s.n, s.c, out_h, out_w});
  kernels::bilinear_forward(x.ptr(), s, out_h, out_w, false, out.mutable_ptr());
  return out;
}

template Tensor resize_image(const Tensor&, int64_t, int64_t);
template Tensor64 resize_image(const Tensor64&, int64_t, int64_t);

LabelMap resize_nearest(const LabelMap& m, int64_t out_h, int64_t out_w) {
  if (out_h == m.h && out_w == m.w) return m;
  LabelMap out(out_h, out_w);
  for (int64_t y = 0; y < out_h; ++y) {
    const int64_t sy = std::min(m.h - 1, (2 * y + 1) * m.h / (2 * out_h));
    for (int64_t x = 0; x < out_w; ++x) {
      const int64_t sx = std::min(m.w - 1, (2 * x + 1) * m.w / (2 * out_w));
      out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

LabelMap flip_labels(const LabelMap& m) {
  LabelMap out(m.h, m.w);
  for (int64_t y = 0; y < m.h; ++y) {
    for (int64_t x = 0; x < m.w; ++x) out.at(y, x) = m.at(y, m.w - 1 - x);
  }
  return out;
}

namespace {
Tensor flip_image(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out(s);
  auto o = out.mutable_data();
  const auto in = x.data();
  for (int64_t r = 0; r < s.n * s.c * s.h; ++r) {
    for (int64_t c = 0; c < s.w; ++c) {
      o[static_cast<size_t>(r * s.w + c)] = in[static_cast<size_t>(r * s.w + s.w - 1 - c)];
    }
  }
  return out;
}
}  // namespace

SegSample apply_augment(const SegSample& s, const AugmentParams& p, int64_t crop) {
  if (crop < 1) throw Error("augment: crop must be positive");
  if (!(p.scale > 0.0)) throw Error("augment: scale must be positive");
  SegSample cur = s;
  if (p.flip) {
    cur.image = flip_image(cur.image);
    cur.label = flip_labels(cur.label);
  }
  const int64_t sh = std::max<int64_t>(1, std::llround(static_cast<double>(s.label.h) * p.scale));
  const int64_t sw = std::max<int64_t>(1, std::llround(static_cast<double>(s.label.w) * p.scale));
  cur.image = resize_image(cur.image, sh, sw);
  cur.label = resize_nearest(cur.label, sh, sw);
  if (sh == crop && sw == crop && p.crop_y == 0 && p.crop_x == 0) return cur;

  SegSample out;
  out.image = Tensor(Shape{1, 3, crop, crop});
  out.label = LabelMap(crop, crop, kIgnoreLabel);
  auto o = out.image.mutable_data();
  const auto in = cur.image.data();
  for (int64_t y = 0; y < crop; ++y) {
    const int64_t sy = y + p.crop_y;
    if (sy < 0 || sy >= sh) continue;
    for (int64_t x = 0; x < crop; ++x) {
      const int64_t sx = x + p.crop_x;
      if (sx < 0 || sx >= sw) continue;
      out.label.at(y, x) = cur.label.at(sy, sx);
      for (int64_t c = 0; c < 3; ++c) {
        o[static_cast<size_t>((c * crop + y) * crop + x)] = in[static_cast<size_t>((c * sh + sy) * sw + sx)];
      }
    }
  }
  return out;
}

}  // namespace segnext
