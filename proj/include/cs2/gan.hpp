#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cs2/optim.hpp"
#include "cs2/tape.hpp"
#include "cs2/volume.hpp"

namespace cs2 {

struct GanConfig {
  int image_size = 64;
  std::vector<int> enc_widths = {32, 64};
  int n_resblocks = 3;
  std::vector<int> disc_widths = {32, 64, 64};
  int style_channels = 16;
  int style_layers = 4;
  double lambda_adv = 1.0;
  double lambda_style = 1.0;
  double lambda_content = 10.0;
  int batch_size = 1;
  int steps = 2000;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 1;
  std::uint64_t style_seed = 99;
  int checkpoint_every = 500;
  HuWindow window{};
  // AdaIN site regularizer. Smaller than the usual 1e-5 because the
  // statistics-transfer contract (post-AdaIN std == style std to 1e-5) is
  // unattainable at eps=1e-5 once activation variances drop below ~1.
  double norm_eps = 1e-6;

  void validate() const {
    if (image_size < 8 || image_size % 4 != 0)
      raise_config("gan: image_size must be a multiple of 4 and >= 8");
    if (enc_widths.size() != 2)
      raise_config("gan: expected 2 encoder widths");
    if (n_resblocks < 0) raise_config("gan: n_resblocks must be >= 0");
    if (disc_widths.empty()) raise_config("gan: discriminator needs widths");
    if (lambda_adv < 0 || lambda_style < 0 || lambda_content < 0)
      raise_config("gan: loss weights must be >= 0");
    if (lambda_adv + lambda_style + lambda_content <= 0)
      raise_config("gan: at least one loss weight must be > 0");
    if (batch_size < 1) raise_config("gan: batch_size must be >= 1");
    if (steps < 1) raise_config("gan: steps must be >= 1");
    if (lr <= 0) raise_config("gan: lr must be > 0");
    window.validate();
  }
};

// Architecture description, the unit the AdaIN placement audit runs on. The
// forward pass is driven by this same list, so the audit checks the network
// that actually executes.
struct BlockDesc {
  enum class Kind { encoder, residual, decoder, output };
  Kind kind;
  std::string name;
  bool has_adain;
  int out_channels;
  int style_site;  // decoder blocks: encoder AdaIN site supplying style stats
};

namespace gan_detail {

inline Tensor he_conv(int co, int ci, int k, Rng& rng) {
  return Tensor::randn({co, ci, k, k}, rng,
                       std::sqrt(2.0 / (static_cast<double>(ci) * k * k)));
}

}  // namespace gan_detail

// The conditional generator. A shared encoder processes the guidance map
// (content) and the reference image (style); each encoder conv block
// renormalizes content features to the style stream's statistics. Residual
// blocks stay normalization-free so they preserve the identity mapping.
// Decoder AdaIN sites reuse the cached style features, deepest site first.
class Generator {
public:
  static constexpr int kChannels = Slab::kChannels;

  Generator() = default;

  Generator(const GanConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int w0 = cfg.enc_widths[0];
    const int w1 = cfg.enc_widths[1];
    params.emplace_back("g.enc1.w", gan_detail::he_conv(w0, kChannels, 3, rng));
    params.emplace_back("g.enc2.w", gan_detail::he_conv(w1, w0, 3, rng));
    for (int i = 0; i < cfg.n_resblocks; ++i) {
      const std::string base = "g.res" + std::to_string(i + 1);
      params.emplace_back(base + ".a.w", gan_detail::he_conv(w1, w1, 3, rng));
      params.emplace_back(base + ".b.w", gan_detail::he_conv(w1, w1, 3, rng));
    }
    params.emplace_back("g.dec1.w", gan_detail::he_conv(w1, w1, 3, rng));
    params.emplace_back("g.dec2.w", gan_detail::he_conv(w0, w1, 3, rng));
    params.emplace_back("g.out.w", gan_detail::he_conv(kChannels, w0, 3, rng));
    params.emplace_back("g.out.b", Tensor({kChannels}, 0.0));

    blocks_.push_back({BlockDesc::Kind::encoder, "enc1", true, w0, -1});
    blocks_.push_back({BlockDesc::Kind::encoder, "enc2", true, w1, -1});
    for (int i = 0; i < cfg.n_resblocks; ++i)
      blocks_.push_back({BlockDesc::Kind::residual,
                         "res" + std::to_string(i + 1), false, w1, -1});
    blocks_.push_back({BlockDesc::Kind::decoder, "dec1", true, w1, 1});
    blocks_.push_back({BlockDesc::Kind::decoder, "dec2", true, w0, 0});
    blocks_.push_back({BlockDesc::Kind::output, "out", false, kChannels, -1});
  }

  const std::vector<BlockDesc>& architecture() const { return blocks_; }
  const GanConfig& config() const { return cfg_; }

  struct Forward {
    Var image;                        // [4,H,W] in [0,1]
    std::vector<Var> decoder_feats;   // post-activation decoder block outputs
    std::vector<Var> adain_pre;       // content features entering each AdaIN
    std::vector<Var> adain_post;      // content features leaving each AdaIN
    std::vector<Var> style_sites;     // style features cached per encoder site
  };

  // Both streams share the encoder weights. Style features are taken
  // post-conv, pre-activation, mirroring the content side of each AdaIN.
  Forward forward(Tape& t, const std::vector<Var>& leaves, Var guidance,
                  Var reference) const {
    const Tensor& g = t.val(guidance);
    const Tensor& r = t.val(reference);
    if (g.shape != r.shape)
      raise_data("generator: guidance ", shape_str(g.shape),
                 " vs reference ", shape_str(r.shape));
    if (g.ndim() != 3 || g.dim(0) != kChannels)
      raise_data("generator: inputs must be [", kChannels, ",H,W], got ",
                 shape_str(g.shape));

    Forward out;
    Var content = guidance;
    Var style = reference;
    std::size_t pi = 0;  // parameter cursor, follows declaration order
    for (const auto& b : blocks_) {
      switch (b.kind) {
        case BlockDesc::Kind::encoder: {
          Var w = leaves[pi++];
          Var c = t.conv2d(content, w, 2, 1);
          Var s = t.conv2d(style, w, 2, 1);
          out.style_sites.push_back(s);
          if (b.has_adain) {
            out.adain_pre.push_back(c);
            c = t.adain(c, s, cfg_.norm_eps);
            out.adain_post.push_back(c);
          }
          content = t.relu(c);
          style = t.relu(s);
          break;
        }
        case BlockDesc::Kind::residual: {
          Var wa = leaves[pi++];
          Var wb = leaves[pi++];
          Var h = t.relu(t.conv2d(content, wa, 1, 1));
          Var res = t.conv2d(h, wb, 1, 1);
          if (b.has_adain)
            raise_data("generator: residual blocks must not carry AdaIN");
          content = t.add(content, res);
          break;
        }
        case BlockDesc::Kind::decoder: {
          Var w = leaves[pi++];
          Var c = t.conv2d(t.upsample_nearest2x(content), w, 1, 1);
          if (b.has_adain) {
            out.adain_pre.push_back(c);
            c = t.adain(c, out.style_sites[static_cast<std::size_t>(b.style_site)],
                        cfg_.norm_eps);
            out.adain_post.push_back(c);
          }
          content = t.relu(c);
          out.decoder_feats.push_back(content);
          break;
        }
        case BlockDesc::Kind::output: {
          Var w = leaves[pi++];
          Var bias = leaves[pi++];
          out.image = t.sigmoid(t.bias_add(t.conv2d(content, w, 1, 1), bias));
          break;
        }
      }
    }
    return out;
  }

  std::vector<Var> make_leaves(Tape& t, bool trainable) const {
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params)
      leaves.push_back(trainable ? t.leaf(p.value) : t.constant(p.value));
    return leaves;
  }

  std::vector<Param> params;

private:
  GanConfig cfg_;
  std::vector<BlockDesc> blocks_;
};

// Patch discriminator: stride-2 leaky-ReLU conv stack ending in a spatial
// logit map, never a scalar.
class Discriminator {
public:
  Discriminator() = default;

  Discriminator(const GanConfig& cfg, Rng& rng) {
    int in_ch = Generator::kChannels;
    for (std::size_t i = 0; i < cfg.disc_widths.size(); ++i) {
      const int out_ch = cfg.disc_widths[i];
      const std::string base = "d.conv" + std::to_string(i + 1);
      params.emplace_back(base + ".w", gan_detail::he_conv(out_ch, in_ch, 3, rng));
      params.emplace_back(base + ".b", Tensor({out_ch}, 0.0));
      in_ch = out_ch;
    }
    params.emplace_back("d.head.w", gan_detail::he_conv(1, in_ch, 3, rng));
    params.emplace_back("d.head.b", Tensor({1}, 0.0));
    n_blocks_ = static_cast<int>(cfg.disc_widths.size());
  }

  Var forward(Tape& t, const std::vector<Var>& leaves, Var image) const {
    Var h = image;
    std::size_t pi = 0;
    for (int i = 0; i < n_blocks_; ++i) {
      h = t.bias_add(t.conv2d(h, leaves[pi], 2, 1), leaves[pi + 1]);
      pi += 2;
      h = t.leaky_relu(h, 0.2);
    }
    return t.bias_add(t.conv2d(h, leaves[pi], 1, 1), leaves[pi + 1]);
  }

  std::vector<Var> make_leaves(Tape& t, bool trainable) const {
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params)
      leaves.push_back(trainable ? t.leaf(p.value) : t.constant(p.value));
    return leaves;
  }

  std::vector<Param> params;

private:
  int n_blocks_ = 0;
};

// Fixed random-weight feature stack for the style matching loss. The first
// layer is 1x1 so its Gram matrices are invariant under spatial permutation;
// deeper layers are stride-2 3x3 convs. Weights are seeded, never trained.
class StyleExtractor {
public:
  StyleExtractor() = default;

  explicit StyleExtractor(const GanConfig& cfg) {
    Rng rng(cfg.style_seed);
    const int c = cfg.style_channels;
    weights_.push_back(gan_detail::he_conv(c, Generator::kChannels, 1, rng));
    for (int i = 1; i < cfg.style_layers; ++i)
      weights_.push_back(gan_detail::he_conv(c, c, 3, rng));
  }

  // Gram matrices of every layer's activations.
  std::vector<Var> grams(Tape& t, Var image) const {
    std::vector<Var> out;
    Var h = image;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      const int stride = i == 0 ? 1 : 2;
      const int pad = i == 0 ? 0 : 1;
      h = t.relu(t.conv2d(h, t.constant(weights_[i]), stride, pad));
      out.push_back(t.gram(h));
    }
    return out;
  }

private:
  std::vector<Tensor> weights_;
};

// Sum over extractor layers of the MSE between Gram matrices. Gradients flow
// into synth only; the reference branch is held constant.
inline Var style_loss(Tape& t, const StyleExtractor& extractor, Var synth,
                      const Tensor& reference) {
  const auto gs = extractor.grams(t, synth);
  Tape ref_tape;
  const auto gr_vars = extractor.grams(ref_tape, ref_tape.constant(reference));
  Var total{-1};
  for (std::size_t i = 0; i < gs.size(); ++i) {
    Var term = t.mse(gs[i], t.constant(ref_tape.val(gr_vars[i])));
    total = total.valid() ? t.add(total, term) : term;
  }
  return total;
}

inline Var content_loss(Tape& t, Var synth, Var guidance_norm) {
  return t.mse(synth, guidance_norm);
}

// Least-squares adversarial terms over patch-logit maps.
inline Var lsgan_toward(Tape& t, Var logits, double target) {
  Tensor tgt(t.val(logits).shape, target);
  return t.mse(logits, t.constant(std::move(tgt)));
}

struct LossParts {
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_style = 0.0;
  double g_content = 0.0;
  double g_total = 0.0;

  bool finite() const {
    return std::isfinite(d_loss) && std::isfinite(g_adv) &&
           std::isfinite(g_style) && std::isfinite(g_content) &&
           std::isfinite(g_total);
  }
};

// Verifies the placement rule on an architecture description: AdaIN in every
// encoder/decoder conv block, in no residual block.
inline void audit_adain_rule(const std::vector<BlockDesc>& blocks) {
  int sites = 0;
  for (const auto& b : blocks) {
    const bool conv_block = b.kind == BlockDesc::Kind::encoder ||
                            b.kind == BlockDesc::Kind::decoder;
    if (conv_block && !b.has_adain)
      raise_data("architecture audit: block '", b.name, "' is missing AdaIN");
    if (b.kind == BlockDesc::Kind::residual && b.has_adain)
      raise_data("architecture audit: residual block '", b.name,
                 "' must not carry AdaIN");
    if (b.has_adain) ++sites;
  }
  if (sites == 0) raise_data("architecture audit: no AdaIN sites found");
}

// One training sample: a normalized 4-channel guidance stack and a
// normalized 4-channel reference slab, tagged with the source phantom so
// pairing can avoid corresponding pairs.
struct GanSample {
  Tensor guidance_norm;
  Tensor reference_norm;
  int source_id = 0;
};

struct GanLogRow {
  int step = 0;
  LossParts losses;
};

inline void write_gan_log_csv(const std::vector<GanLogRow>& log,
                              const std::string& path) {
  std::ofstream os(path);
  if (!os) raise_data("cannot open for writing: ", path);
  os << "step,d_loss,g_adv,g_style,g_content\n";
  char buf[160];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g", row.step,
                  row.losses.d_loss, row.losses.g_adv, row.losses.g_style,
                  row.losses.g_content);
    os << buf << "\n";
  }
  if (!os) raise_data("write failed: ", path);
}

struct TrainedGan {
  Generator gen;
  Discriminator disc;
  std::vector<GanLogRow> log;
};

// Checkpoints: text header (magic, step, config echo, tensor manifest) then
// raw little-endian float64 payloads, generator tensors first, then
// discriminator, in declaration order.
inline void save_checkpoint(const Generator& gen, const Discriminator& disc,
                            const GanConfig& cfg, int step,
                            const std::string& path) {
  auto os = io_detail::open_out(path);
  os << "magic=CS2CKP1\n";
  os << "step=" << step << "\n";
  os << "cfg.image_size=" << cfg.image_size << "\n";
  os << "cfg.enc_widths=" << cfg.enc_widths[0] << "," << cfg.enc_widths[1] << "\n";
  os << "cfg.n_resblocks=" << cfg.n_resblocks << "\n";
  os << "cfg.disc_widths=";
  for (std::size_t i = 0; i < cfg.disc_widths.size(); ++i)
    os << (i ? "," : "") << cfg.disc_widths[i];
  os << "\n";
  os << "cfg.style_channels=" << cfg.style_channels << "\n";
  os << "cfg.style_layers=" << cfg.style_layers << "\n";
  os << "cfg.lambda_adv=" << io_detail::format_double(cfg.lambda_adv) << "\n";
  os << "cfg.lambda_style=" << io_detail::format_double(cfg.lambda_style) << "\n";
  os << "cfg.lambda_content=" << io_detail::format_double(cfg.lambda_content)
     << "\n";
  os << "cfg.batch_size=" << cfg.batch_size << "\n";
  os << "cfg.steps=" << cfg.steps << "\n";
  os << "cfg.lr=" << io_detail::format_double(cfg.lr) << "\n";
  os << "cfg.beta1=" << io_detail::format_double(cfg.beta1) << "\n";
  os << "cfg.beta2=" << io_detail::format_double(cfg.beta2) << "\n";
  os << "cfg.seed=" << cfg.seed << "\n";
  os << "cfg.style_seed=" << cfg.style_seed << "\n";
  os << "cfg.checkpoint_every=" << cfg.checkpoint_every << "\n";
  os << "cfg.window_lo=" << io_detail::format_double(cfg.window.lo) << "\n";
  os << "cfg.window_hi=" << io_detail::format_double(cfg.window.hi) << "\n";
  os << "cfg.norm_eps=" << io_detail::format_double(cfg.norm_eps) << "\n";
  auto manifest = [&os](const std::vector<Param>& ps) {
    for (const auto& p : ps) {
      os << "t." << p.name << "=";
      for (std::size_t d = 0; d < p.value.shape.size(); ++d)
        os << (d ? "x" : "") << p.value.shape[d];
      os << "\n";
    }
  };
  manifest(gen.params);
  manifest(disc.params);
  os << "\n";
  for (const auto* set : {&gen.params, &disc.params})
    for (const auto& p : *set)
      for (double v : p.value.data) io_detail::put_f64le(os, v);
  if (!os) raise_data("write failed: ", path);
}

struct Checkpoint {
  Generator gen;
  Discriminator disc;
  GanConfig cfg;
  int step = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  auto is = io_detail::open_in(path);
  std::string line;
  std::map<std::string, std::string> kv;
  std::vector<std::pair<std::string, std::string>> manifest;
  bool terminated = false;
  while (std::getline(is, line)) {
    if (line.empty()) {
      terminated = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      raise_data(path, ": malformed header line '", line, "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key.rfind("t.", 0) == 0)
      manifest.emplace_back(key.substr(2), value);
    else
      kv[key] = value;
  }
  if (!terminated || kv["magic"] != "CS2CKP1")
    raise_data(path, ": malformed checkpoint header");

  auto ints = [&](const std::string& s) {
    std::vector<int> out;
    std::size_t p = 0;
    while (p < s.size()) {
      auto comma = s.find(',', p);
      if (comma == std::string::npos) comma = s.size();
      out.push_back(std::stoi(s.substr(p, comma - p)));
      p = comma + 1;
    }
    return out;
  };
  GanConfig cfg;
  try {
    cfg.image_size = std::stoi(kv.at("cfg.image_size"));
    cfg.enc_widths = ints(kv.at("cfg.enc_widths"));
    cfg.n_resblocks = std::stoi(kv.at("cfg.n_resblocks"));
    cfg.disc_widths = ints(kv.at("cfg.disc_widths"));
    cfg.style_channels = std::stoi(kv.at("cfg.style_channels"));
    cfg.style_layers = std::stoi(kv.at("cfg.style_layers"));
    cfg.lambda_adv = std::strtod(kv.at("cfg.lambda_adv").c_str(), nullptr);
    cfg.lambda_style = std::strtod(kv.at("cfg.lambda_style").c_str(), nullptr);
    cfg.lambda_content = std::strtod(kv.at("cfg.lambda_content").c_str(), nullptr);
    cfg.batch_size = std::stoi(kv.at("cfg.batch_size"));
    cfg.steps = std::stoi(kv.at("cfg.steps"));
    cfg.lr = std::strtod(kv.at("cfg.lr").c_str(), nullptr);
    cfg.beta1 = std::strtod(kv.at("cfg.beta1").c_str(), nullptr);
    cfg.beta2 = std::strtod(kv.at("cfg.beta2").c_str(), nullptr);
    cfg.seed = std::stoull(kv.at("cfg.seed"));
    cfg.style_seed = std::stoull(kv.at("cfg.style_seed"));
    cfg.checkpoint_every = std::stoi(kv.at("cfg.checkpoint_every"));
    cfg.window.lo = std::strtod(kv.at("cfg.window_lo").c_str(), nullptr);
    cfg.window.hi = std::strtod(kv.at("cfg.window_hi").c_str(), nullptr);
    cfg.norm_eps = std::strtod(kv.at("cfg.norm_eps").c_str(), nullptr);
  } catch (const std::out_of_range&) {
    raise_data(path, ": checkpoint header is missing config keys");
  }
  cfg.validate();

  Checkpoint ck;
  ck.cfg = cfg;
  ck.step = std::stoi(kv.at("step"));
  Rng rng(cfg.seed);
  ck.gen = Generator(cfg, rng);
  ck.disc = Discriminator(cfg, rng);

  std::size_t mi = 0;
  auto check_manifest = [&](const std::vector<Param>& ps) {
    for (const auto& p : ps) {
      if (mi >= manifest.size() || manifest[mi].first != p.name)
        raise_data(path, ": checkpoint manifest mismatch at ", p.name);
      ++mi;
    }
  };
  check_manifest(ck.gen.params);
  check_manifest(ck.disc.params);

  const auto raw = io_detail::read_rest(is);
  std::size_t want = 0;
  for (const auto* set : {&ck.gen.params, &ck.disc.params})
    for (const auto& p : *set) want += p.value.data.size();
  if (raw.size() != want * 8)
    raise_data(path, ": size mismatch, expected ", want * 8,
               " payload bytes but file has ", raw.size());
  std::size_t off = 0;
  for (auto* set : {&ck.gen.params, &ck.disc.params})
    for (auto& p : *set)
      for (auto& v : p.value.data) {
        std::uint64_t u = 0;
        for (int b = 7; b >= 0; --b)
          u = (u << 8) | static_cast<std::uint8_t>(raw[off + static_cast<std::size_t>(b)]);
        std::memcpy(&v, &u, 8);
        off += 8;
        if (!std::isfinite(v))
          raise_data(path, ": non-finite parameter value in ", p.name);
      }
  return ck;
}

// Alternating least-squares D/G steps over non-corresponding pairs. The
// reference assignment reshuffles every epoch with self-pairs rotated away.
// Deterministic per seed. Diverging losses abort with the step index; when
// checkpoint_dir is set, a rolling checkpoint is kept so the abort message
// can point at the last good state.
inline TrainedGan train_gan(const std::vector<GanSample>& corpus,
                            const GanConfig& cfg,
                            const std::string& checkpoint_dir = "") {
  cfg.validate();
  if (static_cast<int>(corpus.size()) < cfg.batch_size)
    raise_data("train_gan: corpus of ", corpus.size(),
               " samples is smaller than batch_size ", cfg.batch_size);
  for (const auto& s : corpus) {
    s.guidance_norm.validate_finite("train_gan guidance");
    s.reference_norm.validate_finite("train_gan reference");
  }

  Rng rng(cfg.seed);
  TrainedGan out;
  out.gen = Generator(cfg, rng);
  out.disc = Discriminator(cfg, rng);
  const StyleExtractor extractor(cfg);

  Optimizer g_opt({OptimKind::adam, cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
  Optimizer d_opt({OptimKind::adam, cfg.lr, cfg.beta1, cfg.beta2, 1e-8});

  const int n = static_cast<int>(corpus.size());
  std::vector<int> ref_of(static_cast<std::size_t>(n));
  std::vector<int> order(static_cast<std::size_t>(n));
  int cursor = n;  // forces a shuffle on the first step

  auto reshuffle = [&] {
    for (int i = 0; i < n; ++i) {
      order[static_cast<std::size_t>(i)] = i;
      ref_of[static_cast<std::size_t>(i)] = i;
    }
    rng.shuffle(order);
    rng.shuffle(ref_of);
    if (n > 1)
      for (int i = 0; i < n; ++i) {
        auto& r = ref_of[static_cast<std::size_t>(i)];
        if (corpus[static_cast<std::size_t>(r)].source_id ==
            corpus[static_cast<std::size_t>(i)].source_id)
          std::swap(r, ref_of[static_cast<std::size_t>((i + 1) % n)]);
      }
    cursor = 0;
  };

  const std::string ckpt_path =
      checkpoint_dir.empty() ? "" : checkpoint_dir + "/ckpt_latest.cs2ckp";
  int last_saved_step = 0;

  for (int step = 1; step <= cfg.steps; ++step) {
    // assemble the batch
    std::vector<int> batch_g, batch_r;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= n) reshuffle();
      const int gi = order[static_cast<std::size_t>(cursor)];
      batch_g.push_back(gi);
      batch_r.push_back(ref_of[static_cast<std::size_t>(gi)]);
      ++cursor;
    }

    // generator tape: forward now, losses after the discriminator update
    Tape tg;
    const auto g_leaves = out.gen.make_leaves(tg, true);
    std::vector<Generator::Forward> fwds;
    std::vector<Var> guidance_vars;
    for (int b = 0; b < cfg.batch_size; ++b) {
      Var gv = tg.constant(corpus[static_cast<std::size_t>(batch_g[b])].guidance_norm);
      Var rv = tg.constant(corpus[static_cast<std::size_t>(batch_r[b])].reference_norm);
      guidance_vars.push_back(gv);
      fwds.push_back(out.gen.forward(tg, g_leaves, gv, rv));
    }

    // discriminator step on real vs detached fake
    LossParts parts;
    {
      Tape td;
      const auto d_leaves = out.disc.make_leaves(td, true);
      Var d_loss{-1};
      for (int b = 0; b < cfg.batch_size; ++b) {
        Var real = td.constant(corpus[static_cast<std::size_t>(batch_r[b])].reference_norm);
        Var fake = td.constant(tg.val(fwds[static_cast<std::size_t>(b)].image));
        Var term = td.scale(
            td.add(lsgan_toward(td, out.disc.forward(td, d_leaves, real), 1.0),
                   lsgan_toward(td, out.disc.forward(td, d_leaves, fake), 0.0)),
            0.5);
        d_loss = d_loss.valid() ? td.add(d_loss, term) : term;
      }
      if (cfg.batch_size > 1)
        d_loss = td.scale(d_loss, 1.0 / cfg.batch_size);
      parts.d_loss = td.val(d_loss).data[0];
      td.backward(d_loss);
      std::vector<Param*> ps;
      std::vector<const std::vector<double>*> gs;
      for (std::size_t i = 0; i < out.disc.params.size(); ++i) {
        ps.push_back(&out.disc.params[i]);
        gs.push_back(&td.grad(d_leaves[i]));
      }
      d_opt.step(ps, gs);
    }

    // generator losses against the updated discriminator
    {
      const auto d_leaves = out.disc.make_leaves(tg, false);
      Var adv{-1}, sty{-1}, con{-1};
      for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& f = fwds[static_cast<std::size_t>(b)];
        Var a = lsgan_toward(tg, out.disc.forward(tg, d_leaves, f.image), 1.0);
        Var s = style_loss(tg, extractor, f.image,
                           corpus[static_cast<std::size_t>(batch_r[b])].reference_norm);
        Var c = content_loss(tg, f.image, guidance_vars[static_cast<std::size_t>(b)]);
        adv = adv.valid() ? tg.add(adv, a) : a;
        sty = sty.valid() ? tg.add(sty, s) : s;
        con = con.valid() ? tg.add(con, c) : c;
      }
      if (cfg.batch_size > 1) {
        adv = tg.scale(adv, 1.0 / cfg.batch_size);
        sty = tg.scale(sty, 1.0 / cfg.batch_size);
        con = tg.scale(con, 1.0 / cfg.batch_size);
      }
      Var g_loss = tg.add(tg.add(tg.scale(adv, cfg.lambda_adv),
                                 tg.scale(sty, cfg.lambda_style)),
                          tg.scale(con, cfg.lambda_content));
      parts.g_adv = tg.val(adv).data[0];
      parts.g_style = tg.val(sty).data[0];
      parts.g_content = tg.val(con).data[0];
      parts.g_total = tg.val(g_loss).data[0];
      if (!parts.finite()) {
        const std::string where =
            ckpt_path.empty()
                ? std::string("no checkpoint saved")
                : ckpt_path + " at step " + std::to_string(last_saved_step);
        raise_numeric("train_gan: non-finite loss at step ", step,
                      "; last checkpoint: ", where);
      }
      tg.backward(g_loss);
      std::vector<Param*> ps;
      std::vector<const std::vector<double>*> gs;
      for (std::size_t i = 0; i < out.gen.params.size(); ++i) {
        ps.push_back(&out.gen.params[i]);
        gs.push_back(&tg.grad(g_leaves[i]));
      }
      g_opt.step(ps, gs);
    }

    out.log.push_back({step, parts});
    if (!ckpt_path.empty() &&
        (step % cfg.checkpoint_every == 0 || step == cfg.steps)) {
      save_checkpoint(out.gen, out.disc, cfg, step, ckpt_path);
      last_saved_step = step;
    }
  }
  return out;
}

// Inference output: the HU-denormalized image plus everything downstream
// segmentation needs.
struct SynthesisRecord {
  Tensor image_hu;                  // [4,H,W]
  Tensor image_norm;                // [4,H,W] in [0,1]
  std::vector<Tensor> decoder_feats;
  Tensor guidance_norm;
  Tensor reference_norm;
};

inline SynthesisRecord synthesize(const Generator& gen,
                                  const Tensor& guidance_norm,
                                  const Tensor& reference_norm) {
  Tape t;
  const auto leaves = gen.make_leaves(t, false);
  const auto f = gen.forward(t, leaves, t.constant(guidance_norm),
                             t.constant(reference_norm));
  SynthesisRecord rec;
  rec.image_norm = t.val(f.image);
  rec.image_hu = rec.image_norm;
  for (auto& v : rec.image_hu.data) v = gen.config().window.denormalize(v);
  for (Var d : f.decoder_feats) rec.decoder_feats.push_back(t.val(d));
  rec.guidance_norm = guidance_norm;
  rec.reference_norm = reference_norm;
  return rec;
}

}  // namespace cs2
