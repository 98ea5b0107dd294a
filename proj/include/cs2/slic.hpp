#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "cs2/errors.hpp"
#include "cs2/tensor.hpp"

namespace cs2 {

// Partition of the image plane into K non-empty, 4-connected superpixels.
struct SuperpixelMask {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // H*W values in [0,K)
  int n_superpixels = 0;

  int at(int r, int c) const {
    return labels[static_cast<std::size_t>(r) * width + c];
  }
};

namespace slic_detail {

// Largest-component bookkeeping for connectivity enforcement.
struct Component {
  int label = 0;
  std::vector<int> pixels;
};

inline std::vector<Component> find_components(const std::vector<int>& labels,
                                              int H, int W) {
  std::vector<Component> comps;
  std::vector<int> comp_of(labels.size(), -1);
  std::vector<int> stack;
  for (int start = 0; start < H * W; ++start) {
    if (comp_of[static_cast<std::size_t>(start)] >= 0) continue;
    const int id = static_cast<int>(comps.size());
    comps.push_back({labels[static_cast<std::size_t>(start)], {}});
    stack.push_back(start);
    comp_of[static_cast<std::size_t>(start)] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comps[static_cast<std::size_t>(id)].pixels.push_back(p);
      const int r = p / W, c = p % W;
      const int nbr[4] = {r > 0 ? p - W : -1, r < H - 1 ? p + W : -1,
                          c > 0 ? p - 1 : -1, c < W - 1 ? p + 1 : -1};
      for (int q : nbr) {
        if (q < 0 || comp_of[static_cast<std::size_t>(q)] >= 0) continue;
        if (labels[static_cast<std::size_t>(q)] != comps[static_cast<std::size_t>(id)].label)
          continue;
        comp_of[static_cast<std::size_t>(q)] = id;
        stack.push_back(q);
      }
    }
  }
  return comps;
}

// Merges every non-largest fragment of each label into an adjacent surviving
// region (majority adjacent label, lowest label on ties). Repeats until all
// fragments are absorbed, so each final label is one 4-connected region.
inline void enforce_connectivity(std::vector<int>& labels, int H, int W) {
  while (true) {
    auto comps = find_components(labels, H, W);
    // largest component per label wins; earlier raster discovery breaks ties
    std::vector<int> best(static_cast<std::size_t>(
                              1 + *std::max_element(labels.begin(), labels.end())),
                          -1);
    for (std::size_t i = 0; i < comps.size(); ++i) {
      const auto lbl = static_cast<std::size_t>(comps[i].label);
      if (best[lbl] < 0 ||
          comps[i].pixels.size() > comps[static_cast<std::size_t>(best[lbl])].pixels.size())
        best[lbl] = static_cast<int>(i);
    }
    std::vector<bool> kept(labels.size(), false);
    for (std::size_t lbl = 0; lbl < best.size(); ++lbl)
      if (best[lbl] >= 0)
        for (int p : comps[static_cast<std::size_t>(best[lbl])].pixels)
          kept[static_cast<std::size_t>(p)] = true;

    bool merged_any = false;
    bool fragments_left = false;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      const auto lbl = static_cast<std::size_t>(comps[i].label);
      if (static_cast<int>(i) == best[lbl]) continue;
      fragments_left = true;
      // vote over labels of adjacent kept pixels
      std::vector<int> votes(best.size(), 0);
      for (int p : comps[i].pixels) {
        const int r = p / W, c = p % W;
        const int nbr[4] = {r > 0 ? p - W : -1, r < H - 1 ? p + W : -1,
                            c > 0 ? p - 1 : -1, c < W - 1 ? p + 1 : -1};
        for (int q : nbr)
          if (q >= 0 && kept[static_cast<std::size_t>(q)])
            ++votes[static_cast<std::size_t>(labels[static_cast<std::size_t>(q)])];
      }
      int target = -1;
      for (std::size_t v = 0; v < votes.size(); ++v)
        if (votes[v] > 0 && (target < 0 || votes[v] > votes[static_cast<std::size_t>(target)]))
          target = static_cast<int>(v);
      if (target < 0) continue;  // not yet adjacent to a kept region
      for (int p : comps[i].pixels) {
        labels[static_cast<std::size_t>(p)] = target;
        kept[static_cast<std::size_t>(p)] = true;
      }
      merged_any = true;
    }
    if (!fragments_left) break;
    if (!merged_any)
      raise_numeric("slic: connectivity enforcement failed to converge");
  }
}

inline void compact_labels(std::vector<int>& labels, int& k_out) {
  std::vector<int> remap(static_cast<std::size_t>(
                             1 + *std::max_element(labels.begin(), labels.end())),
                         -1);
  int next = 0;
  for (auto& l : labels) {
    if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = next++;
    l = remap[static_cast<std::size_t>(l)];
  }
  k_out = next;
}

}  // namespace slic_detail

// SLIC superpixels with deterministic grid seeding and a fixed iteration
// count. Intensity enters at a modest scale (x20) so that the conventional
// compactness=10 yields spatially compact cells: the downstream mode
// refinement needs boundary pixels to stay minorities inside their cells,
// and strongly intensity-adherent slivers would defeat that.
inline SuperpixelMask slic(const Tensor& image, int n_segments,
                           double compactness, int iters = 10) {
  if (image.ndim() != 2)
    raise_data("slic: image must be [H,W], got ", shape_str(image.shape));
  const int H = image.dim(0), W = image.dim(1);
  if (n_segments < 1) raise_data("slic: n_segments must be >= 1");
  if (n_segments > H * W)
    raise_data("slic: n_segments (", n_segments, ") exceeds pixel count (",
               H * W, ")");
  if (compactness <= 0.0) raise_data("slic: compactness must be > 0");

  std::vector<double> lum(image.data.size());
  for (std::size_t i = 0; i < lum.size(); ++i) lum[i] = 20.0 * image.data[i];

  int ny = std::max(1, static_cast<int>(std::floor(
                           std::sqrt(static_cast<double>(n_segments) * H / W))));
  ny = std::min({ny, n_segments, H});
  int nx = std::min(std::max(1, n_segments / ny), W);
  const int K = nx * ny;

  // Spatial coordinates are pixel centers (r+0.5, c+0.5); grid seeds land on
  // fractional positions so equidistant ties cannot occur on uniform input.
  struct Center {
    double l, r, c;
  };
  std::vector<Center> centers(static_cast<std::size_t>(K));
  for (int i = 0; i < ny; ++i)
    for (int j = 0; j < nx; ++j) {
      const double sr = (i + 0.5) * H / ny;
      const double sc = (j + 0.5) * W / nx;
      const int pr = std::min(H - 1, static_cast<int>(sr));
      const int pc = std::min(W - 1, static_cast<int>(sc));
      centers[static_cast<std::size_t>(i * nx + j)] = {
          lum[static_cast<std::size_t>(pr) * W + pc], sr, sc};
    }

  const double spacing = std::sqrt(static_cast<double>(H) * W / K);
  const double ratio = (compactness / spacing) * (compactness / spacing);
  const int win = std::max(1, static_cast<int>(std::ceil(spacing)));

  std::vector<int> labels(lum.size(), -1);
  std::vector<double> dist(lum.size());
  for (int it = 0; it < iters; ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (int k = 0; k < K; ++k) {
      const Center& ct = centers[static_cast<std::size_t>(k)];
      const int r0 = std::max(0, static_cast<int>(ct.r) - win);
      const int r1 = std::min(H - 1, static_cast<int>(ct.r) + win);
      const int c0 = std::max(0, static_cast<int>(ct.c) - win);
      const int c1 = std::min(W - 1, static_cast<int>(ct.c) + win);
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
          const std::size_t p = static_cast<std::size_t>(r) * W + c;
          const double dl = lum[p] - ct.l;
          const double dr = r + 0.5 - ct.r, dc = c + 0.5 - ct.c;
          const double d = dl * dl + ratio * (dr * dr + dc * dc);
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = k;
          }
        }
    }
    // pixels outside every window (possible once centers drift): nearest center
    for (std::size_t p = 0; p < labels.size(); ++p) {
      if (labels[p] >= 0) continue;
      const int r = static_cast<int>(p) / W, c = static_cast<int>(p) % W;
      double bd = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        const Center& ct = centers[static_cast<std::size_t>(k)];
        const double dl = lum[p] - ct.l;
        const double dr = r + 0.5 - ct.r, dc = c + 0.5 - ct.c;
        const double d = dl * dl + ratio * (dr * dr + dc * dc);
        if (d < bd) {
          bd = d;
          labels[p] = k;
        }
      }
    }
    // recompute centers
    std::vector<double> sl(static_cast<std::size_t>(K)), sr(static_cast<std::size_t>(K)),
        sc(static_cast<std::size_t>(K)), cnt(static_cast<std::size_t>(K));
    for (std::size_t p = 0; p < labels.size(); ++p) {
      const auto k = static_cast<std::size_t>(labels[p]);
      sl[k] += lum[p];
      sr[k] += static_cast<double>(p / static_cast<std::size_t>(W)) + 0.5;
      sc[k] += static_cast<double>(p % static_cast<std::size_t>(W)) + 0.5;
      cnt[k] += 1.0;
    }
    for (int k = 0; k < K; ++k)
      if (cnt[static_cast<std::size_t>(k)] > 0) {
        const auto ks = static_cast<std::size_t>(k);
        centers[ks] = {sl[ks] / cnt[ks], sr[ks] / cnt[ks], sc[ks] / cnt[ks]};
      }
  }

  slic_detail::enforce_connectivity(labels, H, W);
  SuperpixelMask out;
  out.height = H;
  out.width = W;
  out.labels = std::move(labels);
  slic_detail::compact_labels(out.labels, out.n_superpixels);
  return out;
}

}  // namespace cs2
