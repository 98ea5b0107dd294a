#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cs2/optim.hpp"
#include "cs2/slic.hpp"
#include "cs2/tape.hpp"

namespace cs2 {

// Per-pixel integer class labels. distinct_count tracks how many label
// values are actually present.
struct ClusterMask {
  int height = 0;
  int width = 0;
  std::vector<int> labels;
  int distinct_count = 0;

  int at(int r, int c) const {
    return labels[static_cast<std::size_t>(r) * width + c];
  }

  static ClusterMask from_labels(int height, int width, std::vector<int> labels) {
    ClusterMask m;
    m.height = height;
    m.width = width;
    m.labels = std::move(labels);
    m.recount();
    return m;
  }

  void recount() {
    int mx = 0;
    for (int l : labels) mx = std::max(mx, l);
    std::vector<bool> seen(static_cast<std::size_t>(mx) + 1, false);
    for (int l : labels) seen[static_cast<std::size_t>(l)] = true;
    distinct_count = 0;
    for (bool s : seen) distinct_count += s ? 1 : 0;
  }
};

struct UnsupConfig {
  int initial_classes = 32;  // M
  int max_iters = 60;
  int stop_clusters = 4;
  int n_segments = 100;
  double compactness = 10.0;
  int slic_iters = 10;
  std::vector<int> widths = {32, 32};  // hidden conv widths
  double lr = 0.1;
  double momentum = 0.93;
  bool median_denoise = true;  // 3x3 median on the input before clustering
  // Variance floor of the response-map normalization. Dominant classes have
  // nearly flat response maps; normalizing those by their own tiny variance
  // erases their lead, so the head uses a stronger floor than the hidden
  // layers.
  double head_norm_floor = 0.25;

  void validate() const {
    if (stop_clusters < 1) raise_config("maskgen: stop_clusters must be >= 1");
    if (max_iters < 1) raise_config("maskgen: max_iters must be >= 1");
    if (initial_classes < stop_clusters)
      raise_config("maskgen: initial_classes (", initial_classes,
                   ") must be >= stop_clusters (", stop_clusters, ")");
    if (widths.empty()) raise_config("maskgen: need at least one hidden width");
    if (lr <= 0.0) raise_config("maskgen: lr must be > 0");
  }
};

struct UnsupTraceRow {
  int iter = 0;
  double loss = 0.0;
  int distinct_before = 0;  // classes in the argmax mask C
  int distinct_after = 0;   // classes in the refined mask C'
};

struct UnsupResult {
  ClusterMask mask;
  std::vector<UnsupTraceRow> trace;
};

inline ClusterMask argmax_channels(const Tensor& logits) {
  if (logits.ndim() != 3)
    raise_data("argmax_channels: expected [M,H,W], got ", shape_str(logits.shape));
  const int M = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<int> labels(hw, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    double best = logits.data[p];
    int arg = 0;
    for (int m = 1; m < M; ++m) {
      const double v = logits.data[static_cast<std::size_t>(m) * hw + p];
      if (v > best) {
        best = v;
        arg = m;
      }
    }
    labels[p] = arg;
  }
  return ClusterMask::from_labels(H, W, std::move(labels));
}

// Superpixel-mode refinement: inside each superpixel every pixel receives the
// modal class of the input mask there; ties break toward the lowest class.
inline ClusterMask refine_with_superpixels(const ClusterMask& mask,
                                           const SuperpixelMask& sp) {
  if (mask.height != sp.height || mask.width != sp.width)
    raise_data("refine: mask ", mask.height, "x", mask.width,
               " vs superpixels ", sp.height, "x", sp.width);
  int max_class = 0;
  for (int l : mask.labels) max_class = std::max(max_class, l);
  std::vector<int> counts(static_cast<std::size_t>(sp.n_superpixels) *
                              (static_cast<std::size_t>(max_class) + 1),
                          0);
  for (std::size_t p = 0; p < mask.labels.size(); ++p)
    ++counts[static_cast<std::size_t>(sp.labels[p]) * (max_class + 1) +
             static_cast<std::size_t>(mask.labels[p])];
  std::vector<int> mode(static_cast<std::size_t>(sp.n_superpixels), 0);
  for (int m = 0; m < sp.n_superpixels; ++m) {
    const int* row = counts.data() + static_cast<std::size_t>(m) * (max_class + 1);
    int arg = 0;
    for (int c = 1; c <= max_class; ++c)
      if (row[c] > row[arg]) arg = c;
    mode[static_cast<std::size_t>(m)] = arg;
  }
  std::vector<int> out(mask.labels.size());
  for (std::size_t p = 0; p < out.size(); ++p)
    out[p] = mode[static_cast<std::size_t>(sp.labels[p])];
  return ClusterMask::from_labels(mask.height, mask.width, std::move(out));
}

// Edge-preserving 3x3 median filter; the standard CT denoising step before
// intensity clustering. Borders replicate.
inline Tensor median3x3(const Tensor& image) {
  if (image.ndim() != 2)
    raise_data("median3x3: image must be [H,W], got ", shape_str(image.shape));
  const int H = image.dim(0), W = image.dim(1);
  Tensor out(image.shape);
  double window[9];
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      int n = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = std::clamp(r + dr, 0, H - 1);
          const int cc = std::clamp(c + dc, 0, W - 1);
          window[n++] = image.data[static_cast<std::size_t>(rr) * W + cc];
        }
      std::nth_element(window, window + 4, window + 9);
      out.data[static_cast<std::size_t>(r) * W + c] = window[4];
    }
  return out;
}

namespace maskgen_detail {

// The per-image clustering CNN: 3x3 stride-1 convs, instance norm + ReLU
// between layers, a raw logit head of M channels.
struct UnsupNet {
  std::vector<Param> params;

  UnsupNet(const UnsupConfig& cfg, Rng& rng) {
    int in_ch = 1;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      const int out_ch = cfg.widths[i];
      params.emplace_back("unsup.conv" + std::to_string(i) + ".w",
                          he_kernel(out_ch, in_ch, rng));
      // random normalization shifts stagger the ReLU kinks across channels;
      // with zero shifts every normalized channel is the same curve of the
      // local intensity (up to sign) and nearby tissue levels cannot split
      Tensor beta({out_ch});
      for (auto& v : beta.data) v = rng.uniform(-1.0, 1.0);
      params.emplace_back("unsup.conv" + std::to_string(i) + ".b", std::move(beta));
      in_ch = out_ch;
    }
    params.emplace_back("unsup.head.w",
                        he_kernel(cfg.initial_classes, in_ch, rng));
    params.emplace_back("unsup.head.b", Tensor({cfg.initial_classes}, 0.0));
  }

  static Tensor he_kernel(int out_ch, int in_ch, Rng& rng) {
    const double std = std::sqrt(2.0 / (in_ch * 9.0));
    return Tensor::randn({out_ch, in_ch, 3, 3}, rng, std);
  }

  Var forward(Tape& t, Var x, const UnsupConfig& cfg) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (auto& p : params) vars.push_back(t.leaf(p.value));
    // The normalization floor is deliberately high: channels whose kernels
    // nearly cancel the flat regions respond with sensor noise only, and a
    // tiny eps would rescale that noise to unit variance, drowning the
    // low-contrast tissue signal.
    constexpr double kNormFloor = 1e-2;
    Var h = x;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      h = t.conv2d(h, vars[2 * i], 1, 1);
      h = t.instance_norm(h, kNormFloor);
      h = t.bias_add(h, vars[2 * i + 1]);
      h = t.relu(h);
    }
    // The response map is normalized per class before argmax, with a
    // trainable per-class offset, so every class starts with winners
    // somewhere instead of a handful of channels dominating the argmax.
    h = t.conv2d(h, vars[2 * cfg.widths.size()], 1, 1);
    h = t.instance_norm(h, cfg.head_norm_floor);
    h = t.bias_add(h, vars[2 * cfg.widths.size() + 1]);
    leaf_vars = vars;
    return h;
  }

  std::vector<Var> leaf_vars;
};

}  // namespace maskgen_detail

// The unsupervised mask loop: forward -> argmax C -> superpixel refinement
// C' -> cross-entropy(logits, C') -> SGD step, stopping once C' holds at
// most stop_clusters classes or max_iters is reached. No gradient flows
// through the refinement.
inline UnsupResult train_unsupervised(const Tensor& image, const UnsupConfig& cfg,
                                      std::uint64_t seed) {
  cfg.validate();
  if (image.ndim() != 2)
    raise_data("train_unsupervised: image must be [H,W], got ",
               shape_str(image.shape));
  const int H = image.dim(0), W = image.dim(1);
  const Tensor work = cfg.median_denoise ? median3x3(image) : image;
  const SuperpixelMask sp = slic(work, cfg.n_segments, cfg.compactness,
                                 cfg.slic_iters);

  Rng rng(seed);
  maskgen_detail::UnsupNet net(cfg, rng);
  OptimizerConfig oc;
  oc.kind = OptimKind::sgd;
  oc.lr = cfg.lr;
  oc.momentum = cfg.momentum;
  Optimizer opt(oc);
  Tensor input = Tensor::from({1, H, W}, work.data);

  UnsupResult res;
  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    Tape tape;
    Var x = tape.leaf(input);
    Var logits = net.forward(tape, x, cfg);
    const ClusterMask c = argmax_channels(tape.val(logits));
    ClusterMask refined = refine_with_superpixels(c, sp);
    Var loss = tape.cross_entropy(logits, refined.labels);
    const double loss_v = tape.val(loss).data[0];
    if (!std::isfinite(loss_v))
      raise_numeric("train_unsupervised: non-finite loss at iteration ", iter);
    res.trace.push_back({iter, loss_v, c.distinct_count, refined.distinct_count});
    res.mask = std::move(refined);
    if (res.mask.distinct_count <= cfg.stop_clusters || iter == cfg.max_iters)
      break;
    tape.backward(loss);
    std::vector<Param*> ps;
    std::vector<const std::vector<double>*> gs;
    for (std::size_t i = 0; i < net.params.size(); ++i) {
      ps.push_back(&net.params[i]);
      gs.push_back(&tape.grad(net.leaf_vars[i]));
    }
    opt.step(ps, gs);
  }
  return res;
}

// Trace CSV: one row per iteration with the refined mask's class count.
inline void write_trace_csv(const std::vector<UnsupTraceRow>& trace,
                            const std::string& path) {
  std::ofstream os(path);
  if (!os) raise_data("cannot open for writing: ", path);
  os << "iter,loss,distinct_count\n";
  char buf[64];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof(buf), "%.17g", row.loss);
    os << row.iter << "," << buf << "," << row.distinct_after << "\n";
  }
  if (!os) raise_data("write failed: ", path);
}

}  // namespace cs2
