#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cs2/rng.hpp"
#include "cs2/volume.hpp"

namespace cs2 {

// Tissue classes of the phantom corpus.
enum TissueClass : std::uint8_t {
  kBackground = 0,
  kBody = 1,
  kLung = 2,
  kGgo = 3,
};
constexpr int kNumTissueClasses = 4;

// Procedural lung-like phantom: an elliptical soft-tissue body holding two
// lung ellipses, with smooth-bordered GGO blobs inside the lungs. Geometry is
// shared across slices (extruded); noise is drawn per voxel. Background stays
// exactly at its configured HU so scanner-style padding is constant.
struct PhantomSpec {
  std::uint64_t seed = 1;
  int height = 64;
  int width = 64;
  int n_slices = 12;
  int n_ggo_min = 2;
  int n_ggo_max = 4;
  std::array<double, kNumTissueClasses> hu_mean = {-1024.0, 40.0, -800.0, -600.0};
  std::array<double, kNumTissueClasses> noise_scale = {0.0, 1.0, 1.0, 1.0};
  double noise_std = 25.0;
  double lung_scale = 1.0;  // >1 inflates the lungs; used to probe fit errors

  void validate() const {
    if (height < 32 || width < 32)
      raise_data("phantom: size ", height, "x", width,
                 " too small for the lung geometry (need >= 32)");
    if (n_slices < 1) raise_data("phantom: n_slices must be >= 1");
    if (n_ggo_min < 0 || n_ggo_max < n_ggo_min)
      raise_data("phantom: bad ggo count range [", n_ggo_min, ",", n_ggo_max, "]");
    for (double m : hu_mean)
      if (m < kHuMin || m > kHuMax)
        raise_data("phantom: class mean ", m, " outside HU range");
    if (noise_std < 0.0) raise_data("phantom: noise_std must be >= 0");
    if (lung_scale <= 0.0) raise_data("phantom: lung_scale must be > 0");
  }
};

struct LabeledPhantom {
  HUVolume volume;
  LabelVolume truth;
};

namespace phantom_detail {

struct Ellipse {
  double cr, cc, ar, ac;  // center (row,col), semi-axes
  bool contains(double r, double c) const {
    const double u = (r - cr) / ar;
    const double v = (c - cc) / ac;
    return u * u + v * v <= 1.0;
  }
};

inline void gaussian_blur(std::vector<double>& img, int H, int W, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] =
        std::exp(-0.5 * (i / sigma) * (i / sigma));
    ksum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;
  std::vector<double> tmp(img.size());
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int cc = std::clamp(c + i, 0, W - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               img[static_cast<std::size_t>(r) * W + cc];
      }
      tmp[static_cast<std::size_t>(r) * W + c] = acc;
    }
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int rr = std::clamp(r + i, 0, H - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               tmp[static_cast<std::size_t>(rr) * W + c];
      }
      img[static_cast<std::size_t>(r) * W + c] = acc;
    }
}

}  // namespace phantom_detail

inline LabeledPhantom generate_phantom(const PhantomSpec& spec) {
  using phantom_detail::Ellipse;
  spec.validate();
  Rng rng(spec.seed);
  const int H = spec.height, W = spec.width;
  const std::size_t hw = static_cast<std::size_t>(H) * W;

  const Ellipse body{H * 0.5, W * 0.5, H * rng.uniform(0.38, 0.42),
                     W * rng.uniform(0.42, 0.46)};
  const double lung_dc = W * rng.uniform(0.19, 0.23);
  const Ellipse lung_l{H * 0.5 + H * rng.uniform(-0.02, 0.02), W * 0.5 - lung_dc,
                       H * rng.uniform(0.26, 0.30) * spec.lung_scale,
                       W * rng.uniform(0.13, 0.16) * spec.lung_scale};
  const Ellipse lung_r{H * 0.5 + H * rng.uniform(-0.02, 0.02), W * 0.5 + lung_dc,
                       H * rng.uniform(0.26, 0.30) * spec.lung_scale,
                       W * rng.uniform(0.13, 0.16) * spec.lung_scale};

  std::vector<std::uint8_t> plane(hw, kBackground);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const double rr = r + 0.5, cc = c + 0.5;
      auto& label = plane[static_cast<std::size_t>(r) * W + c];
      if (body.contains(rr, cc)) label = kBody;
      if (lung_l.contains(rr, cc) || lung_r.contains(rr, cc)) {
        if (label != kBody)
          raise_data("phantom: lung geometry does not fit inside the body");
        label = kLung;
      }
    }

  // GGO blobs: smoothed random ellipses thresholded at 0.5, clipped to lung.
  const int n_ggo = rng.uniform_int(spec.n_ggo_min, spec.n_ggo_max);
  std::vector<std::size_t> lung_px;
  for (std::size_t i = 0; i < hw; ++i)
    if (plane[i] == kLung) lung_px.push_back(i);
  for (int b = 0; b < n_ggo && !lung_px.empty(); ++b) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      const std::size_t at =
          lung_px[static_cast<std::size_t>(rng.next_u64() % lung_px.size())];
      const double cr = static_cast<double>(at / static_cast<std::size_t>(W));
      const double cc = static_cast<double>(at % static_cast<std::size_t>(W));
      const double ar = rng.uniform(6.0, 11.0);
      const double ac = rng.uniform(6.0, 11.0);
      const double theta = rng.uniform(0.0, 3.14159265358979323846);
      const double ct = std::cos(theta), st = std::sin(theta);
      std::vector<double> field(hw, 0.0);
      const int rad = static_cast<int>(std::ceil(std::max(ar, ac))) + 1;
      for (int r = std::max(0, static_cast<int>(cr) - rad);
           r <= std::min(H - 1, static_cast<int>(cr) + rad); ++r)
        for (int c = std::max(0, static_cast<int>(cc) - rad);
             c <= std::min(W - 1, static_cast<int>(cc) + rad); ++c) {
          const double dr = r - cr, dc = c - cc;
          const double u = (dr * ct + dc * st) / ar;
          const double v = (-dr * st + dc * ct) / ac;
          if (u * u + v * v <= 1.0)
            field[static_cast<std::size_t>(r) * W + c] = 1.0;
        }
      phantom_detail::gaussian_blur(field, H, W, 1.5);
      std::size_t added = 0;
      for (std::size_t i = 0; i < hw; ++i)
        if (field[i] > 0.5 && plane[i] == kLung) {
          plane[i] = kGgo;
          ++added;
        }
      if (added > 0) break;
    }
  }

  LabeledPhantom out;
  out.truth.n_slices = spec.n_slices;
  out.truth.height = H;
  out.truth.width = W;
  out.truth.labels.resize(static_cast<std::size_t>(spec.n_slices) * hw);
  for (int s = 0; s < spec.n_slices; ++s)
    std::copy(plane.begin(), plane.end(),
              out.truth.labels.begin() + static_cast<std::ptrdiff_t>(s * hw));

  out.volume.n_slices = spec.n_slices;
  out.volume.height = H;
  out.volume.width = W;
  out.volume.voxels.resize(out.truth.labels.size());
  for (std::size_t i = 0; i < out.volume.voxels.size(); ++i) {
    const std::uint8_t cls = out.truth.labels[i];
    double v = spec.hu_mean[cls];
    const double sd = spec.noise_std * spec.noise_scale[cls];
    if (sd > 0.0) v += sd * rng.normal();
    v = std::clamp(v, kHuMin, kHuMax);
    out.volume.voxels[i] = static_cast<std::int16_t>(std::llround(v));
  }
  return out;
}

inline std::vector<LabeledPhantom> phantom_corpus(int n, const PhantomSpec& tpl,
                                                  std::uint64_t seed0) {
  if (n < 1) raise_data("phantom_corpus: n must be >= 1");
  std::vector<LabeledPhantom> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PhantomSpec spec = tpl;
    spec.seed = seed0 + static_cast<std::uint64_t>(i);
    out.push_back(generate_phantom(spec));
  }
  return out;
}

}  // namespace cs2
