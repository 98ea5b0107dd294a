#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cs2/gan.hpp"
#include "cs2/maskgen.hpp"
#include "cs2/optim.hpp"

namespace cs2 {

// Per-pixel feature vectors, pixel-major [H*W, F]. F is the sum of the
// generator's decoder channel widths.
struct FeatureStack {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<double> values;

  const double* row(std::size_t pixel) const {
    return values.data() + pixel * static_cast<std::size_t>(dim);
  }

  std::size_t pixels() const {
    return static_cast<std::size_t>(height) * width;
  }
};

// Bilinear resampling to (H, W); source grid corners map onto target grid
// corners, so same-size input passes through unchanged and constant maps stay
// constant.
inline Tensor bilinear_upsample(const Tensor& src, int H, int W) {
  if (src.ndim() != 3)
    raise_data("bilinear_upsample: input must be [C,h,w], got ",
               shape_str(src.shape));
  const int C = src.dim(0), h = src.dim(1), w = src.dim(2);
  Tensor out({C, H, W});
  const double rs = H > 1 ? static_cast<double>(h - 1) / (H - 1) : 0.0;
  const double cs = W > 1 ? static_cast<double>(w - 1) / (W - 1) : 0.0;
  for (int r = 0; r < H; ++r) {
    const double fr = r * rs;
    const int r0 = static_cast<int>(fr);
    const int r1 = std::min(r0 + 1, h - 1);
    const double ar = fr - r0;
    for (int c = 0; c < W; ++c) {
      const double fc = c * cs;
      const int c0 = static_cast<int>(fc);
      const int c1 = std::min(c0 + 1, w - 1);
      const double ac = fc - c0;
      for (int ch = 0; ch < C; ++ch) {
        const double* p = src.data.data() + static_cast<std::size_t>(ch) * h * w;
        const double top = (1 - ac) * p[r0 * w + c0] + ac * p[r0 * w + c1];
        const double bot = (1 - ac) * p[r1 * w + c0] + ac * p[r1 * w + c1];
        out.data[(static_cast<std::size_t>(ch) * H + r) * W + c] =
            (1 - ar) * top + ar * bot;
      }
    }
  }
  return out;
}

// Upsample every cached decoder map to image size and concatenate
// channel-wise into per-pixel feature vectors.
inline FeatureStack extract_pixel_features(const SynthesisRecord& rec) {
  if (rec.decoder_feats.empty())
    raise_data("extract_pixel_features: record carries no decoder features");
  const int H = rec.image_norm.dim(1);
  const int W = rec.image_norm.dim(2);
  FeatureStack out;
  out.height = H;
  out.width = W;
  for (const auto& f : rec.decoder_feats) out.dim += f.dim(0);
  out.values.resize(out.pixels() * static_cast<std::size_t>(out.dim));
  int at = 0;
  for (const auto& f : rec.decoder_feats) {
    const Tensor up = bilinear_upsample(f, H, W);
    up.validate_finite("decoder feature map");
    const int C = up.dim(0);
    for (int ch = 0; ch < C; ++ch) {
      const double* p = up.data.data() + static_cast<std::size_t>(ch) * H * W;
      for (std::size_t px = 0; px < out.pixels(); ++px)
        out.values[px * static_cast<std::size_t>(out.dim) +
                   static_cast<std::size_t>(at + ch)] = p[px];
    }
    at += C;
  }
  return out;
}

struct EnsembleConfig {
  int members = 10;
  int classes = 4;
  int hidden = 64;
  int steps = 1200;
  int batch = 256;
  double lr = 1e-3;
  std::int64_t pixel_cap = 100000;
  std::uint64_t seed = 1;

  void validate() const {
    if (members < 1) raise_config("ensemble: members must be >= 1");
    if (classes < 2) raise_config("ensemble: classes must be >= 2");
    if (hidden < 1 || steps < 1 || batch < 1)
      raise_config("ensemble: hidden, steps and batch must be >= 1");
    if (pixel_cap < 1) raise_config("ensemble: pixel_cap must be >= 1");
    if (lr <= 0) raise_config("ensemble: lr must be > 0");
  }
};

// Majority-voting ensemble of small MLP pixel classifiers trained on the
// generator's decoder features. Members differ only in seed (initialization
// and sample shuffling).
class EnsembleSegmenter {
public:
  EnsembleConfig cfg;
  int feature_dim = 0;
  std::vector<double> feat_mean, feat_std;  // training-pool standardization
  std::vector<std::vector<Param>> members;  // 6 tensors per member

  static std::vector<Param> init_member(int feature_dim,
                                        const EnsembleConfig& cfg, Rng& rng) {
    auto he = [&rng](int out, int in) {
      return Tensor::randn({out, in}, rng, std::sqrt(2.0 / in));
    };
    std::vector<Param> p;
    p.emplace_back("w1", he(cfg.hidden, feature_dim));
    p.emplace_back("b1", Tensor({cfg.hidden}, 0.0));
    p.emplace_back("w2", he(cfg.hidden, cfg.hidden));
    p.emplace_back("b2", Tensor({cfg.hidden}, 0.0));
    p.emplace_back("w3", he(cfg.classes, cfg.hidden));
    p.emplace_back("b3", Tensor({cfg.classes}, 0.0));
    return p;
  }

  // Value-only member forward over a batch of standardized features [F, B].
  void member_logits(const std::vector<Param>& m, const double* x, int B,
                     double* logits) const {
    const int F = feature_dim, H1 = cfg.hidden, M = cfg.classes;
    std::vector<double> h1(static_cast<std::size_t>(H1) * B);
    std::vector<double> h2(static_cast<std::size_t>(H1) * B);
    auto gemm = [B](const Tensor& w, const Tensor& b, const double* in,
                    double* out, int O, int I, bool relu) {
      for (int o = 0; o < O; ++o) {
        double* dst = out + static_cast<std::size_t>(o) * B;
        const double bias = b.data[static_cast<std::size_t>(o)];
        for (int j = 0; j < B; ++j) dst[j] = bias;
        const double* wrow = w.data.data() + static_cast<std::size_t>(o) * I;
        for (int i = 0; i < I; ++i) {
          const double wv = wrow[i];
          const double* src = in + static_cast<std::size_t>(i) * B;
          for (int j = 0; j < B; ++j) dst[j] += wv * src[j];
        }
        if (relu)
          for (int j = 0; j < B; ++j) dst[j] = dst[j] > 0 ? dst[j] : 0.0;
      }
    };
    gemm(m[0].value, m[1].value, x, h1.data(), H1, F, true);
    gemm(m[2].value, m[3].value, h1.data(), h2.data(), H1, H1, true);
    gemm(m[4].value, m[5].value, h2.data(), logits, M, H1, false);
  }
};

// Trains the ensemble on aligned (features, labels) pairs. Every member sees
// the same labeled pool, subsampled and shuffled with its own seed.
inline EnsembleSegmenter train_ensemble(
    const std::vector<FeatureStack>& features,
    const std::vector<std::vector<int>>& labels, const EnsembleConfig& cfg) {
  cfg.validate();
  if (features.empty() || features.size() != labels.size())
    raise_data("train_ensemble: ", features.size(), " feature stacks vs ",
               labels.size(), " label maps");
  const int F = features[0].dim;
  std::size_t total = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].dim != F)
      raise_data("train_ensemble: feature dim mismatch at image ", i);
    if (labels[i].size() != features[i].pixels())
      raise_data("train_ensemble: label map size mismatch at image ", i);
    for (std::size_t p = 0; p < labels[i].size(); ++p)
      if (labels[i][p] < 0 || labels[i][p] >= cfg.classes)
        raise_data("train_ensemble: label ", labels[i][p], " at image ", i,
                   " pixel ", p, " outside [0,", cfg.classes, ")");
    total += features[i].pixels();
  }

  // flatten the pool
  std::vector<const double*> pool_feat(total);
  std::vector<int> pool_label(total);
  std::size_t at = 0;
  for (std::size_t i = 0; i < features.size(); ++i)
    for (std::size_t p = 0; p < features[i].pixels(); ++p) {
      pool_feat[at] = features[i].row(p);
      pool_label[at] = labels[i][p];
      ++at;
    }

  EnsembleSegmenter ens;
  ens.cfg = cfg;
  ens.feature_dim = F;
  ens.feat_mean.assign(static_cast<std::size_t>(F), 0.0);
  ens.feat_std.assign(static_cast<std::size_t>(F), 0.0);
  for (std::size_t p = 0; p < total; ++p)
    for (int f = 0; f < F; ++f)
      ens.feat_mean[static_cast<std::size_t>(f)] += pool_feat[p][f];
  for (auto& m : ens.feat_mean) m /= static_cast<double>(total);
  for (std::size_t p = 0; p < total; ++p)
    for (int f = 0; f < F; ++f) {
      const double d = pool_feat[p][f] - ens.feat_mean[static_cast<std::size_t>(f)];
      ens.feat_std[static_cast<std::size_t>(f)] += d * d;
    }
  for (auto& s : ens.feat_std)
    s = std::max(std::sqrt(s / static_cast<double>(total)), 1e-8);

  const std::size_t used = std::min<std::size_t>(
      total, static_cast<std::size_t>(cfg.pixel_cap));

  for (int member = 0; member < cfg.members; ++member) {
    Rng rng(derive_seed(cfg.seed, "ensemble-member-" + std::to_string(member)));
    auto params = EnsembleSegmenter::init_member(F, cfg, rng);
    std::vector<std::size_t> subset(total);
    for (std::size_t i = 0; i < total; ++i) subset[i] = i;
    rng.shuffle(subset);
    subset.resize(used);

    Optimizer opt({OptimKind::adam, cfg.lr, 0.9, 0.999, 1e-8});
    std::size_t cursor = used;  // reshuffle immediately
    std::vector<std::size_t> epoch = subset;
    for (int step = 0; step < cfg.steps; ++step) {
      const int B = static_cast<int>(
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), used));
      Tensor x({F, B});
      std::vector<int> t(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) {
        if (cursor >= used) {
          rng.shuffle(epoch);
          cursor = 0;
        }
        const std::size_t idx = epoch[cursor++];
        const double* src = pool_feat[idx];
        for (int f = 0; f < F; ++f)
          x.data[static_cast<std::size_t>(f) * B + b] =
              (src[f] - ens.feat_mean[static_cast<std::size_t>(f)]) /
              ens.feat_std[static_cast<std::size_t>(f)];
        t[static_cast<std::size_t>(b)] = pool_label[idx];
      }
      Tape tape;
      std::vector<Var> leaves;
      for (auto& p : params) leaves.push_back(tape.leaf(p.value));
      Var h = tape.relu(tape.linear(leaves[0], tape.constant(x), leaves[1]));
      h = tape.relu(tape.linear(leaves[2], h, leaves[3]));
      Var logits = tape.linear(leaves[4], h, leaves[5]);
      Var loss = tape.cross_entropy(logits, t);
      if (!std::isfinite(tape.val(loss).data[0]))
        raise_numeric("train_ensemble: non-finite loss, member ", member,
                      " step ", step);
      tape.backward(loss);
      std::vector<Param*> ps;
      std::vector<const std::vector<double>*> gs;
      for (std::size_t i = 0; i < params.size(); ++i) {
        ps.push_back(&params[i]);
        gs.push_back(&tape.grad(leaves[i]));
      }
      opt.step(ps, gs);
    }
    ens.members.push_back(std::move(params));
  }
  return ens;
}

// Per-pixel majority vote over member argmax predictions; ties resolve to
// the lowest class index.
inline ClusterMask predict(const EnsembleSegmenter& ens,
                           const FeatureStack& features) {
  if (features.dim != ens.feature_dim)
    raise_data("predict: feature dim ", features.dim, " but ensemble expects ",
               ens.feature_dim);
  const std::size_t P = features.pixels();
  const int F = ens.feature_dim, M = ens.cfg.classes;
  std::vector<int> votes(P * static_cast<std::size_t>(M), 0);

  constexpr std::size_t kChunk = 2048;
  std::vector<double> x(static_cast<std::size_t>(F) * kChunk);
  std::vector<double> logits(static_cast<std::size_t>(M) * kChunk);
  for (std::size_t start = 0; start < P; start += kChunk) {
    const int B = static_cast<int>(std::min(kChunk, P - start));
    for (int b = 0; b < B; ++b) {
      const double* src = features.row(start + static_cast<std::size_t>(b));
      for (int f = 0; f < F; ++f)
        x[static_cast<std::size_t>(f) * B + b] =
            (src[f] - ens.feat_mean[static_cast<std::size_t>(f)]) /
            ens.feat_std[static_cast<std::size_t>(f)];
    }
    for (const auto& m : ens.members) {
      ens.member_logits(m, x.data(), B, logits.data());
      for (int b = 0; b < B; ++b) {
        int arg = 0;
        double best = logits[b];
        for (int c = 1; c < M; ++c) {
          const double v = logits[static_cast<std::size_t>(c) * B + b];
          if (v > best) {
            best = v;
            arg = c;
          }
        }
        ++votes[(start + static_cast<std::size_t>(b)) * M + static_cast<std::size_t>(arg)];
      }
    }
  }

  std::vector<int> out(P);
  for (std::size_t p = 0; p < P; ++p) {
    const int* v = votes.data() + p * static_cast<std::size_t>(M);
    int arg = 0;
    for (int c = 1; c < M; ++c)
      if (v[c] > v[arg]) arg = c;
    out[p] = arg;
  }
  return ClusterMask::from_labels(features.height, features.width,
                                  std::move(out));
}

// Removes 4-connected components of non-background classes smaller than
// min_size, reassigning them to the majority label adjacent to the component
// (measured on the input mask; ties to the lowest label).
inline ClusterMask postprocess_components(const ClusterMask& mask,
                                          int min_size) {
  if (min_size < 0) raise_data("postprocess: min_size must be >= 0");
  const int H = mask.height, W = mask.width;
  std::vector<int> out = mask.labels;
  if (min_size == 0) return ClusterMask::from_labels(H, W, std::move(out));

  std::vector<bool> seen(mask.labels.size(), false);
  std::vector<int> stack, comp;
  for (int start = 0; start < H * W; ++start) {
    if (seen[static_cast<std::size_t>(start)]) continue;
    const int cls = mask.labels[static_cast<std::size_t>(start)];
    if (cls == 0) {
      seen[static_cast<std::size_t>(start)] = true;
      continue;
    }
    comp.clear();
    stack.assign(1, start);
    seen[static_cast<std::size_t>(start)] = true;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comp.push_back(p);
      const int r = p / W, c = p % W;
      const int nbr[4] = {r > 0 ? p - W : -1, r < H - 1 ? p + W : -1,
                          c > 0 ? p - 1 : -1, c < W - 1 ? p + 1 : -1};
      for (int q : nbr)
        if (q >= 0 && !seen[static_cast<std::size_t>(q)] &&
            mask.labels[static_cast<std::size_t>(q)] == cls) {
          seen[static_cast<std::size_t>(q)] = true;
          stack.push_back(q);
        }
    }
    if (static_cast<int>(comp.size()) >= min_size) continue;
    // surrounding majority on the input snapshot
    std::vector<int> tally;
    for (int p : comp) {
      const int r = p / W, c = p % W;
      const int nbr[4] = {r > 0 ? p - W : -1, r < H - 1 ? p + W : -1,
                          c > 0 ? p - 1 : -1, c < W - 1 ? p + 1 : -1};
      for (int q : nbr) {
        if (q < 0 || mask.labels[static_cast<std::size_t>(q)] == cls) continue;
        const int l = mask.labels[static_cast<std::size_t>(q)];
        if (static_cast<int>(tally.size()) <= l) tally.resize(static_cast<std::size_t>(l) + 1, 0);
        ++tally[static_cast<std::size_t>(l)];
      }
    }
    int target = -1;
    for (std::size_t l = 0; l < tally.size(); ++l)
      if (tally[l] > 0 && (target < 0 || tally[l] > tally[static_cast<std::size_t>(target)]))
        target = static_cast<int>(l);
    if (target < 0) continue;  // component fills the image; leave it
    for (int p : comp) out[static_cast<std::size_t>(p)] = target;
  }
  return ClusterMask::from_labels(H, W, std::move(out));
}

// Dice overlap 2|P n T| / (|P| + |T|); 1.0 when both sets are empty.
inline double dice(const ClusterMask& pred, const ClusterMask& truth,
                   int class_id) {
  if (pred.height != truth.height || pred.width != truth.width)
    raise_data("dice: shape mismatch ", pred.height, "x", pred.width, " vs ",
               truth.height, "x", truth.width);
  std::size_t p_count = 0, t_count = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool in_p = pred.labels[i] == class_id;
    const bool in_t = truth.labels[i] == class_id;
    p_count += in_p;
    t_count += in_t;
    both += in_p && in_t;
  }
  if (p_count + t_count == 0) return 1.0;
  return 2.0 * static_cast<double>(both) /
         static_cast<double>(p_count + t_count);
}

// Ensemble checkpoints share the CS2CKP1 conventions under magic CS2ENS1.
inline void save_ensemble(const EnsembleSegmenter& ens,
                          const std::string& path) {
  auto os = io_detail::open_out(path);
  os << "magic=CS2ENS1\n";
  os << "members=" << ens.cfg.members << "\n";
  os << "classes=" << ens.cfg.classes << "\n";
  os << "hidden=" << ens.cfg.hidden << "\n";
  os << "feature_dim=" << ens.feature_dim << "\n";
  os << "steps=" << ens.cfg.steps << "\n";
  os << "batch=" << ens.cfg.batch << "\n";
  os << "lr=" << io_detail::format_double(ens.cfg.lr) << "\n";
  os << "pixel_cap=" << ens.cfg.pixel_cap << "\n";
  os << "seed=" << ens.cfg.seed << "\n";
  os << "\n";
  for (double v : ens.feat_mean) io_detail::put_f64le(os, v);
  for (double v : ens.feat_std) io_detail::put_f64le(os, v);
  for (const auto& m : ens.members)
    for (const auto& p : m)
      for (double v : p.value.data) io_detail::put_f64le(os, v);
  if (!os) raise_data("write failed: ", path);
}

inline EnsembleSegmenter load_ensemble(const std::string& path) {
  auto is = io_detail::open_in(path);
  std::map<std::string, std::string> kv;
  std::string line;
  bool terminated = false;
  while (std::getline(is, line)) {
    if (line.empty()) {
      terminated = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      raise_data(path, ": malformed header line '", line, "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!terminated || kv["magic"] != "CS2ENS1")
    raise_data(path, ": malformed ensemble header");
  EnsembleSegmenter ens;
  try {
    ens.cfg.members = std::stoi(kv.at("members"));
    ens.cfg.classes = std::stoi(kv.at("classes"));
    ens.cfg.hidden = std::stoi(kv.at("hidden"));
    ens.feature_dim = std::stoi(kv.at("feature_dim"));
    ens.cfg.steps = std::stoi(kv.at("steps"));
    ens.cfg.batch = std::stoi(kv.at("batch"));
    ens.cfg.lr = std::strtod(kv.at("lr").c_str(), nullptr);
    ens.cfg.pixel_cap = std::stoll(kv.at("pixel_cap"));
    ens.cfg.seed = std::stoull(kv.at("seed"));
  } catch (const std::out_of_range&) {
    raise_data(path, ": ensemble header is missing keys");
  }
  ens.cfg.validate();

  const auto raw = io_detail::read_rest(is);
  const std::size_t per_member =
      static_cast<std::size_t>(ens.cfg.hidden) * ens.feature_dim + ens.cfg.hidden +
      static_cast<std::size_t>(ens.cfg.hidden) * ens.cfg.hidden + ens.cfg.hidden +
      static_cast<std::size_t>(ens.cfg.classes) * ens.cfg.hidden + ens.cfg.classes;
  const std::size_t want =
      2 * static_cast<std::size_t>(ens.feature_dim) +
      static_cast<std::size_t>(ens.cfg.members) * per_member;
  if (raw.size() != want * 8)
    raise_data(path, ": size mismatch, expected ", want * 8,
               " payload bytes but file has ", raw.size());
  std::size_t off = 0;
  auto next = [&raw, &off]() {
    std::uint64_t u = 0;
    for (int b = 7; b >= 0; --b)
      u = (u << 8) | static_cast<std::uint8_t>(raw[off + static_cast<std::size_t>(b)]);
    off += 8;
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  };
  ens.feat_mean.resize(static_cast<std::size_t>(ens.feature_dim));
  ens.feat_std.resize(static_cast<std::size_t>(ens.feature_dim));
  for (auto& v : ens.feat_mean) v = next();
  for (auto& v : ens.feat_std) v = next();
  for (int m = 0; m < ens.cfg.members; ++m) {
    Rng dummy(0);
    auto params = EnsembleSegmenter::init_member(ens.feature_dim, ens.cfg, dummy);
    for (auto& p : params)
      for (auto& v : p.value.data) v = next();
    ens.members.push_back(std::move(params));
  }
  return ens;
}

}  // namespace cs2
