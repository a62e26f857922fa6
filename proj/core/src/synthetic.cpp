#include "bdb/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

// Procedural stand-in for CIFAR-10: one foreground shape per image whose
// geometry decides the class, drawn with a random colour, position, and size
// over a smooth two-colour background with clutter and pixel noise. Every
// image is a pure function of (seed, split, id).

namespace bdb {

namespace {

constexpr int64_t kSide = 32;
constexpr int64_t kClasses = 10;

using Rgb = std::array<float, 3>;

float luma(const Rgb& c) { return 0.299f * c[0] + 0.587f * c[1] + 0.114f * c[2]; }

struct Canvas {
  float* px;
  void blend(int64_t y, int64_t x, const Rgb& c, float a = 1.0f) {
    if (y < 0 || y >= kSide || x < 0 || x >= kSide) return;
    float* p = px + (y * kSide + x) * 3;
    for (int k = 0; k < 3; ++k) p[k] = (1.0f - a) * p[k] + a * c[k];
  }
};

uint64_t mix(uint64_t h) {
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return h;
}

/// Inside-test for class `label`'s shape centred at (cy, cx) with radius r.
bool inside(int64_t label, double dy, double dx, double r, double angle) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double u = ca * dx + sa * dy;   // rotated coordinates
  const double v = -sa * dx + ca * dy;
  const double d = std::hypot(dx, dy);
  switch (label) {
    case 0:  // disc
      return d <= r;
    case 1:  // square
      return std::abs(u) <= 0.8 * r && std::abs(v) <= 0.8 * r;
    case 2: {  // triangle, apex up in rotated frame
      const double h = 1.6 * r;
      const double t = (v + 0.6 * r) / h;  // 0 at apex row, 1 at base
      return t >= 0.0 && t <= 1.0 && std::abs(u) <= t * r;
    }
    case 3:  // ring
      return d <= r && d >= 0.55 * r;
    case 4:  // plus
      return (std::abs(u) <= 0.28 * r && std::abs(v) <= r) || (std::abs(v) <= 0.28 * r && std::abs(u) <= r);
    case 5:  // horizontal bars inside a square
      return std::abs(dx) <= r && std::abs(dy) <= r && static_cast<int64_t>(std::floor((dy + r) / 2.0)) % 2 == 0;
    case 6:  // vertical bars inside a square
      return std::abs(dx) <= r && std::abs(dy) <= r && static_cast<int64_t>(std::floor((dx + r) / 2.0)) % 2 == 0;
    case 7:  // diagonal cross
      return d <= r && (std::abs(dx - dy) <= 1.2 || std::abs(dx + dy) <= 1.2);
    case 8:  // checkerboard inside a square
      return std::abs(dx) <= r && std::abs(dy) <= r &&
             (static_cast<int64_t>(std::floor((dx + r) / 3.0)) + static_cast<int64_t>(std::floor((dy + r) / 3.0))) % 2 == 0;
    case 9: {  // pair of small discs
      const double off = 0.6 * r;
      return std::hypot(u - off, v) <= 0.45 * r || std::hypot(u + off, v) <= 0.45 * r;
    }
    default:
      return false;
  }
}

void render(float* px, int64_t label, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, 0.06f);
  auto colour = [&] { return Rgb{unit(rng), unit(rng), unit(rng)}; };

  // Background: gradient between two colours plus a low-frequency ripple.
  const Rgb c1 = colour(), c2 = colour();
  const double theta = unit(rng) * 2.0 * std::numbers::pi;
  const double freq = 0.05 + 0.1 * unit(rng);
  const double phase = unit(rng) * 2.0 * std::numbers::pi;
  for (int64_t y = 0; y < kSide; ++y) {
    for (int64_t x = 0; x < kSide; ++x) {
      const double proj = (std::cos(theta) * (x - 15.5) + std::sin(theta) * (y - 15.5)) / 32.0 + 0.5;
      double t = proj + 0.15 * std::sin(2.0 * std::numbers::pi * freq * (x + y) + phase);
      t = std::clamp(t, 0.0, 1.0);
      float* p = px + (y * kSide + x) * 3;
      for (int k = 0; k < 3; ++k) p[k] = static_cast<float>((1.0 - t) * c1[k] + t * c2[k]);
    }
  }
  Canvas canvas{px};
  Rgb bg_mean{};
  for (int k = 0; k < 3; ++k) bg_mean[k] = 0.5f * (c1[k] + c2[k]);

  // Clutter: a few small blobs that carry no class information.
  std::uniform_int_distribution<int64_t> pos(2, kSide - 3);
  const int clutter = static_cast<int>(unit(rng) * 5.0f);
  for (int b = 0; b < clutter; ++b) {
    const Rgb c = colour();
    const int64_t cy = pos(rng), cx = pos(rng);
    const double rr = 1.0 + 2.0 * unit(rng);
    for (int64_t y = cy - 3; y <= cy + 3; ++y)
      for (int64_t x = cx - 3; x <= cx + 3; ++x)
        if (std::hypot(double(y - cy), double(x - cx)) <= rr) canvas.blend(y, x, c, 0.7f);
  }

  // Foreground shape with guaranteed contrast against the background mean.
  Rgb fg = colour();
  if (std::abs(luma(fg) - luma(bg_mean)) < 0.25f) {
    const float shift = luma(bg_mean) > 0.5f ? -0.45f : 0.45f;
    for (auto& v : fg) v = std::clamp(v + shift, 0.0f, 1.0f);
  }
  const double r = 5.0 + 5.0 * unit(rng);
  std::uniform_real_distribution<double> centre(r + 1.0, kSide - 2.0 - r);
  const double cy = centre(rng), cx = centre(rng);
  const bool oriented = label == 5 || label == 6 || label == 7 || label == 8;
  const double angle = oriented ? 0.0 : (unit(rng) - 0.5) * 0.8;
  const float alpha = 0.75f + 0.25f * unit(rng);
  for (int64_t y = 0; y < kSide; ++y)
    for (int64_t x = 0; x < kSide; ++x)
      if (inside(label, y - cy, x - cx, r, angle)) canvas.blend(y, x, fg, alpha);

  for (int64_t i = 0; i < kSide * kSide * 3; ++i) px[i] = std::clamp(px[i] + noise(rng), 0.0f, 1.0f);
}

}  // namespace

torch::Tensor synthetic_images(const std::string& split, std::span<const int64_t> ids, uint64_t seed) {
  const uint64_t split_key = split == "train" ? 0x9e3779b97f4a7c15ULL : 0x632be59bd9b4e019ULL;
  auto images = torch::empty({static_cast<int64_t>(ids.size()), kSide, kSide, 3}, torch::kFloat32);
  auto* base = images.data_ptr<float>();
  for (size_t i = 0; i < ids.size(); ++i) {
    std::mt19937_64 rng(mix(seed ^ split_key ^ mix(static_cast<uint64_t>(ids[i]) + 1)));
    render(base + static_cast<int64_t>(i) * kSide * kSide * 3, ids[i] % kClasses, rng);
  }
  return images;
}

LabeledDataset synthetic_dataset(const std::string& split, std::span<const int64_t> ids, uint64_t seed) {
  auto ids_t = torch::tensor(std::vector<int64_t>(ids.begin(), ids.end()), torch::kInt64);
  auto labels = ids_t.remainder(kClasses);
  return LabeledDataset("synthetic-cifar10", synthetic_images(split, ids, seed), labels, ids_t, kClasses);
}

}  // namespace bdb
