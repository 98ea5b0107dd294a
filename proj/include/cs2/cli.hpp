#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "cs2/config.hpp"
#include "cs2/ensemble.hpp"
#include "cs2/gan.hpp"
#include "cs2/guidance.hpp"
#include "cs2/image_io.hpp"
#include "cs2/maskgen.hpp"
#include "cs2/phantom.hpp"
#include "cs2/volume.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace cs2::cli {

namespace fs = std::filesystem;

namespace detail {

inline std::string index_name(const char* stem, std::size_t i,
                              const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu%s", stem, i, ext);
  return buf;
}

inline std::vector<std::string> list_files(const std::string& dir,
                                           const std::string& ext) {
  if (!fs::is_directory(dir)) raise_data("missing input directory: ", dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext)
      out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) raise_data("no ", ext, " files in ", dir);
  return out;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise_data("cannot create directory ", dir, ": ", ec.message());
}

inline void write_config_echo(const RunConfig& cfg, const std::string& dir) {
  std::ofstream os(dir + "/cs2.config", std::ios::binary);
  if (!os) raise_data("cannot write config echo in ", dir);
  os << cfg.to_text();
}

// Slab truth plane: under the extruded phantom geometry every selected slice
// shares one 2D label map; stored single-slice for slab-level evaluation.
inline LabelVolume slab_truth(const LabelVolume& truth) {
  const auto idx = select_2_5d_indices(truth.n_slices);
  LabelVolume out;
  out.n_slices = 1;
  out.height = truth.height;
  out.width = truth.width;
  out.dz = truth.dz;
  out.dy = truth.dy;
  out.dx = truth.dx;
  const std::size_t hw = static_cast<std::size_t>(truth.height) * truth.width;
  out.labels.assign(truth.labels.begin() + static_cast<std::ptrdiff_t>(idx[0] * hw),
                    truth.labels.begin() + static_cast<std::ptrdiff_t>((idx[0] + 1) * hw));
  return out;
}

inline Tensor normalized_slab_tensor(const HUVolume& vol, HuWindow window) {
  const Slab slab = normalize_hu(select_2_5d(vol), window);
  return slab.as_tensor();
}

inline void save_feature_stack(const FeatureStack& f, const std::string& path) {
  FloatStack s;
  s.n = f.dim;
  s.height = f.height;
  s.width = f.width;
  s.values.resize(f.values.size());
  for (int d = 0; d < f.dim; ++d)
    for (std::size_t p = 0; p < f.pixels(); ++p)
      s.values[static_cast<std::size_t>(d) * f.pixels() + p] =
          f.values[p * static_cast<std::size_t>(f.dim) + static_cast<std::size_t>(d)];
  save_float_stack(s, path, "CS2FTR1");
}

inline FeatureStack load_feature_stack(const std::string& path) {
  const auto s = load_float_stack(path, "CS2FTR1");
  FeatureStack f;
  f.dim = s.n;
  f.height = s.height;
  f.width = s.width;
  f.values.resize(s.values.size());
  for (int d = 0; d < f.dim; ++d)
    for (std::size_t p = 0; p < f.pixels(); ++p)
      f.values[p * static_cast<std::size_t>(f.dim) + static_cast<std::size_t>(d)] =
          s.values[static_cast<std::size_t>(d) * f.pixels() + p];
  return f;
}

inline HUVolume hu_volume_from_tensor(const Tensor& image_hu) {
  HUVolume v;
  v.n_slices = image_hu.dim(0);
  v.height = image_hu.dim(1);
  v.width = image_hu.dim(2);
  v.voxels.resize(image_hu.data.size());
  for (std::size_t i = 0; i < image_hu.data.size(); ++i)
    v.voxels[i] = static_cast<std::int16_t>(
        std::llround(std::clamp(image_hu.data[i], kHuMin, kHuMax)));
  return v;
}

inline ClusterMask mask_slice(const LabelVolume& m, int slice) {
  const std::size_t hw = static_cast<std::size_t>(m.height) * m.width;
  std::vector<int> labels(hw);
  for (std::size_t p = 0; p < hw; ++p)
    labels[p] = m.labels[static_cast<std::size_t>(slice) * hw + p];
  return ClusterMask::from_labels(m.height, m.width, std::move(labels));
}

}  // namespace detail

// phantom: corpus of labeled phantoms on disk.
inline void cmd_phantom(const RunConfig& cfg, int count,
                        const std::string& out_dir) {
  detail::ensure_dir(out_dir);
  detail::write_config_echo(cfg, out_dir);
  const std::uint64_t seed0 = cfg.stage_seed("phantom");
  for (int i = 0; i < count; ++i) {
    PhantomSpec spec = cfg.phantom;
    spec.seed = seed0 + static_cast<std::uint64_t>(i);
    const auto ph = generate_phantom(spec);
    const auto idx = static_cast<std::size_t>(i);
    save_volume(ph.volume, out_dir + "/" + detail::index_name("phantom", idx, ".cs2vol"));
    save_labels(ph.truth, out_dir + "/" + detail::index_name("truth", idx, ".cs2msk"));
    save_labels(detail::slab_truth(ph.truth),
                out_dir + "/" + detail::index_name("slabtruth", idx, ".cs2msk"));
  }
}

// maskgen: per-volume (optionally per-channel) unsupervised cluster masks.
inline void cmd_maskgen(const RunConfig& cfg, const std::string& in_dir,
                        const std::string& out_dir) {
  const auto vols = detail::list_files(in_dir, ".cs2vol");
  detail::ensure_dir(out_dir);
  detail::write_config_echo(cfg, out_dir);
  const bool all_channels = cfg.maskgen_channels == "all";
  for (std::size_t i = 0; i < vols.size(); ++i) {
    const HUVolume vol = load_volume(vols[i]);
    const Slab norm = normalize_hu(select_2_5d(vol), cfg.maskgen_window);
    LabelVolume mask_out;
    mask_out.n_slices = Slab::kChannels;
    mask_out.height = norm.height;
    mask_out.width = norm.width;
    mask_out.labels.resize(static_cast<std::size_t>(Slab::kChannels) *
                           norm.height * norm.width);
    const int n_channels = all_channels ? Slab::kChannels : 1;
    for (int c = 0; c < n_channels; ++c) {
      const auto seed = derive_seed(
          cfg.seed, "maskgen-" + std::to_string(i) + "-" + std::to_string(c));
      const auto res = train_unsupervised(norm.channel(c), cfg.maskgen, seed);
      write_trace_csv(res.trace,
                      out_dir + "/" +
                          detail::index_name("trace", i,
                                             ("_c" + std::to_string(c) + ".csv").c_str()));
      const std::size_t hw = static_cast<std::size_t>(norm.height) * norm.width;
      const int reps = all_channels ? 1 : Slab::kChannels;
      for (int r = 0; r < reps; ++r)
        for (std::size_t p = 0; p < hw; ++p)
          mask_out.labels[static_cast<std::size_t>(c + r) * hw + p] =
              static_cast<std::uint8_t>(res.mask.labels[p]);
    }
    save_labels(mask_out, out_dir + "/" + detail::index_name("mask", i, ".cs2msk"));
  }
}

// guide: mean-HU guidance stacks from cluster masks and raw HU slabs.
inline void cmd_guide(const RunConfig& cfg, const std::string& masks_dir,
                      const std::string& volumes_dir,
                      const std::string& edits_path,
                      const std::string& out_dir) {
  const auto masks = detail::list_files(masks_dir, ".cs2msk");
  const auto vols = detail::list_files(volumes_dir, ".cs2vol");
  if (masks.size() != vols.size())
    raise_data("guide: ", masks.size(), " masks vs ", vols.size(), " volumes");
  std::vector<EditOp> edits;
  if (!edits_path.empty()) edits = load_edits(edits_path);
  detail::ensure_dir(out_dir);
  detail::write_config_echo(cfg, out_dir);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const LabelVolume mask = load_labels(masks[i]);
    const HUVolume vol = load_volume(vols[i]);
    const Slab slab = select_2_5d(vol);
    if (mask.n_slices != Slab::kChannels || mask.height != slab.height ||
        mask.width != slab.width)
      raise_data("guide: mask ", masks[i], " does not match volume ", vols[i]);
    FloatStack stack;
    stack.n = Slab::kChannels;
    stack.height = slab.height;
    stack.width = slab.width;
    stack.values.resize(static_cast<std::size_t>(stack.n) * stack.height *
                        stack.width);
    const std::size_t hw = static_cast<std::size_t>(slab.height) * slab.width;
    for (int c = 0; c < Slab::kChannels; ++c) {
      GuidanceMap g =
          mean_hu_assignment(detail::mask_slice(mask, c), slab.channel(c));
      if (!edits.empty()) g = apply_edits(g, edits);
      std::copy(g.values.begin(), g.values.end(),
                stack.values.begin() + static_cast<std::ptrdiff_t>(c * hw));
    }
    save_float_stack(stack, out_dir + "/" + detail::index_name("guidance", i, ".cs2gdf"),
                     "CS2GDF1");
  }
}

namespace detail {

inline Tensor guidance_tensor_normalized(const FloatStack& stack,
                                         HuWindow window) {
  Tensor t =
      Tensor::from({stack.n, stack.height, stack.width}, stack.values);
  for (auto& v : t.data) v = window.normalize(v);
  return t;
}

inline std::vector<GanSample> load_gan_corpus(const RunConfig& cfg,
                                              const std::string& guidance_dir,
                                              const std::string& reference_dir) {
  const auto gfiles = list_files(guidance_dir, ".cs2gdf");
  const auto rfiles = list_files(reference_dir, ".cs2vol");
  if (gfiles.size() != rfiles.size())
    raise_data("train-gan: ", gfiles.size(), " guidance stacks vs ",
               rfiles.size(), " reference volumes");
  std::vector<GanSample> corpus;
  for (std::size_t i = 0; i < gfiles.size(); ++i) {
    GanSample s;
    s.source_id = static_cast<int>(i);
    const auto stack = load_float_stack(gfiles[i], "CS2GDF1");
    if (stack.n != Slab::kChannels)
      raise_data("train-gan: guidance ", gfiles[i], " has ", stack.n,
                 " channels, expected ", Slab::kChannels);
    if (stack.height != cfg.gan.image_size || stack.width != cfg.gan.image_size)
      raise_data("train-gan: guidance ", gfiles[i], " is ", stack.height, "x",
                 stack.width, " but the model expects ", cfg.gan.image_size,
                 "x", cfg.gan.image_size);
    s.guidance_norm = guidance_tensor_normalized(stack, cfg.window);
    s.reference_norm = normalized_slab_tensor(load_volume(rfiles[i]), cfg.window);
    corpus.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace detail

// train-gan: the multiple-AdaIN GAN on non-corresponding pairs.
inline void cmd_train_gan(const RunConfig& cfg, const std::string& guidance_dir,
                          const std::string& reference_dir,
                          const std::string& out_dir) {
  const auto corpus = detail::load_gan_corpus(cfg, guidance_dir, reference_dir);
  detail::ensure_dir(out_dir);
  detail::write_config_echo(cfg, out_dir);
  const auto trained = train_gan(corpus, cfg.gan, out_dir);
  save_checkpoint(trained.gen, trained.disc, cfg.gan, cfg.gan.steps,
                  out_dir + "/ckpt.cs2ckp");
  write_gan_log_csv(trained.log, out_dir + "/train_log.csv");
}

// synth: images plus cached decoder features from a trained generator.
inline void cmd_synth(const RunConfig& cfg, const std::string& ckpt_path,
                      const std::string& guidance_dir,
                      const std::string& reference_dir, int n,
                      const std::string& out_dir) {
  const auto ck = load_checkpoint(ckpt_path);
  const auto gfiles = detail::list_files(guidance_dir, ".cs2gdf");
  const auto rfiles = detail::list_files(reference_dir, ".cs2vol");
  if (n < 1) raise_config("synth: n must be >= 1");
  detail::ensure_dir(out_dir);
  detail::write_config_echo(cfg, out_dir);
  std::ofstream manifest(out_dir + "/synth_manifest.csv");
  manifest << "index,guidance,reference\n";
  const std::size_t G = gfiles.size(), R = rfiles.size();
  for (int k = 0; k < n; ++k) {
    const std::size_t gi = static_cast<std::size_t>(k) % G;
    std::size_t ri = (gi + 1 + static_cast<std::size_t>(k) / G) % R;
    if (R > 1 && ri == gi) ri = (ri + 1) % R;
    const auto stack = load_float_stack(gfiles[gi], "CS2GDF1");
    const Tensor guide = detail::guidance_tensor_normalized(stack, ck.cfg.window);
    if (guide.dim(1) != ck.cfg.image_size)
      raise_data("synth: guidance size ", guide.dim(1),
                 " does not match checkpoint image_size ", ck.cfg.image_size);
    const Tensor ref =
        detail::normalized_slab_tensor(load_volume(rfiles[ri]), ck.cfg.window);
    const auto rec = synthesize(ck.gen, guide, ref);
    const auto idx = static_cast<std::size_t>(k);
    save_volume(detail::hu_volume_from_tensor(rec.image_hu),
                out_dir + "/" + detail::index_name("synth", idx, ".cs2vol"));
    detail::save_feature_stack(
        extract_pixel_features(rec),
        out_dir + "/" + detail::index_name("features", idx, ".cs2ftr"));
    save_hu_plane_pgm(out_dir + "/" + detail::index_name("preview", idx, ".pgm"),
                      rec.image_hu.dim(1), rec.image_hu.dim(2),
                      rec.image_hu.data.data(), ck.cfg.window);
    manifest << k << "," << gfiles[gi] << "," << rfiles[ri] << "\n";
  }
  if (!manifest) raise_data("write failed: ", out_dir, "/synth_manifest.csv");
}

// train-seg: ensemble classifier from a labeled list file, one
// "<features.cs2ftr> <truth.cs2msk>" pair per line.
inline void cmd_train_seg(const RunConfig& cfg, const std::string& labeled_list,
                          const std::string& out_dir) {
  std::ifstream is(labeled_list);
  if (!is) raise_data("missing labeled list: ", labeled_list);
  std::vector<FeatureStack> features;
  std::vector<std::vector<int>> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos)
      raise_data("labeled list line ", line_no,
                 ": expected '<features> <truth>'");
    features.push_back(detail::load_feature_stack(line.substr(0, space)));
    const LabelVolume truth = load_labels(line.substr(space + 1));
    if (truth.n_slices != 1)
      raise_data("labeled list line ", line_no,
                 ": truth must be a single-slice mask");
    std::vector<int> lab(truth.labels.begin(), truth.labels.end());
    labels.push_back(std::move(lab));
  }
  if (features.empty()) raise_data("labeled list is empty: ", labeled_list);
  detail::ensure_dir(out_dir);
  detail::write_config_echo(cfg, out_dir);
  const auto ens = train_ensemble(features, labels, cfg.ensemble);
  save_ensemble(ens, out_dir + "/ensemble.cs2ens");
}

// infer: paired (image, mask) synthesis, the pipeline's end product.
inline void cmd_infer(const RunConfig& cfg, const std::string& gan_ckpt,
                      const std::string& ens_ckpt,
                      const std::string& guidance_dir,
                      const std::string& reference_dir,
                      const std::string& edits_path,
                      const std::string& out_dir) {
  const auto ck = load_checkpoint(gan_ckpt);
  const auto ens = load_ensemble(ens_ckpt);
  const auto gfiles = detail::list_files(guidance_dir, ".cs2gdf");
  const auto rfiles = detail::list_files(reference_dir, ".cs2vol");
  std::vector<EditOp> edits;
  if (!edits_path.empty()) edits = load_edits(edits_path);
  detail::ensure_dir(out_dir);
  detail::write_config_echo(cfg, out_dir);
  for (std::size_t i = 0; i < gfiles.size(); ++i) {
    auto stack = load_float_stack(gfiles[i], "CS2GDF1");
    if (!edits.empty()) {
      const std::size_t hw = static_cast<std::size_t>(stack.height) * stack.width;
      for (int c = 0; c < stack.n; ++c) {
        GuidanceMap g;
        g.height = stack.height;
        g.width = stack.width;
        g.values.assign(stack.values.begin() + static_cast<std::ptrdiff_t>(c * hw),
                        stack.values.begin() + static_cast<std::ptrdiff_t>((c + 1) * hw));
        g = apply_edits(g, edits);
        std::copy(g.values.begin(), g.values.end(),
                  stack.values.begin() + static_cast<std::ptrdiff_t>(c * hw));
      }
    }
    const Tensor guide = detail::guidance_tensor_normalized(stack, ck.cfg.window);
    const std::size_t ri = rfiles.size() > 1 ? (i + 1) % rfiles.size() : 0;
    const Tensor ref =
        detail::normalized_slab_tensor(load_volume(rfiles[ri]), ck.cfg.window);
    const auto rec = synthesize(ck.gen, guide, ref);
    const auto pred = predict(ens, extract_pixel_features(rec));
    const auto post = postprocess_components(pred, cfg.infer_min_component);
    save_volume(detail::hu_volume_from_tensor(rec.image_hu),
                out_dir + "/" + detail::index_name("image", i, ".cs2vol"));
    LabelVolume mask;
    mask.n_slices = 1;
    mask.height = post.height;
    mask.width = post.width;
    mask.labels.assign(post.labels.begin(), post.labels.end());
    save_labels(mask, out_dir + "/" + detail::index_name("mask", i, ".cs2msk"));
    save_hu_plane_pgm(out_dir + "/" + detail::index_name("preview", i, ".pgm"),
                      rec.image_hu.dim(1), rec.image_hu.dim(2),
                      rec.image_hu.data.data(), ck.cfg.window);
  }
}

// eval: per-class mean Dice between prediction and truth masks.
inline void cmd_eval(const std::string& pred_dir, const std::string& truth_dir,
                     const std::string& report_path, int classes = 4) {
  const auto preds = detail::list_files(pred_dir, ".cs2msk");
  const auto truths = detail::list_files(truth_dir, ".cs2msk");
  if (preds.size() != truths.size())
    raise_data("eval: ", preds.size(), " predictions vs ", truths.size(),
               " truths");
  std::vector<double> sums(static_cast<std::size_t>(classes), 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const LabelVolume p = load_labels(preds[i]);
    const LabelVolume t = load_labels(truths[i]);
    if (p.n_slices != 1 || t.n_slices != 1)
      raise_data("eval: masks must be single-slice (", preds[i], ", ",
                 truths[i], ")");
    const auto pm = detail::mask_slice(p, 0);
    const auto tm = detail::mask_slice(t, 0);
    for (int c = 0; c < classes; ++c)
      sums[static_cast<std::size_t>(c)] += dice(pm, tm, c);
  }
  std::ofstream os(report_path);
  if (!os) raise_data("cannot write report: ", report_path);
  os << "class,dice\n";
  char buf[64];
  for (int c = 0; c < classes; ++c) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g", c,
                  sums[static_cast<std::size_t>(c)] / static_cast<double>(preds.size()));
    os << buf << "\n";
  }
  if (!os) raise_data("write failed: ", report_path);
}

// Argument dispatch shared by the cs2 binary and the test harness.
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence.
inline int run(std::vector<std::string> args) {
  CLI::App app{"cs2: controllable simultaneous synthesis of CT-like images "
               "and segmentation masks"};
  app.require_subcommand(1);

  std::string config_path, out_dir, in_dir, masks_dir, volumes_dir;
  std::string guidance_dir, reference_dir, ckpt, gan_ckpt, ens_ckpt;
  std::string edits_path, labeled_list, pred_dir, truth_dir, report_path;
  int n = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "pipeline config file");
    cmd->add_option_function<std::uint64_t>(
        "--seed",
        [&](std::uint64_t s) {
          seed = s;
          seed_set = true;
        },
        "override the global seed");
  };

  auto* c_defaults = app.add_subcommand("defaults", "print the default config");
  auto* c_phantom = app.add_subcommand("phantom", "generate a phantom corpus");
  add_common(c_phantom);
  c_phantom->add_option("--out", out_dir)->required();
  c_phantom->add_option("--n", n, "corpus size (default from config)");
  auto* c_maskgen =
      app.add_subcommand("maskgen", "unsupervised cluster masks for volumes");
  add_common(c_maskgen);
  c_maskgen->add_option("--in", in_dir)->required();
  c_maskgen->add_option("--out", out_dir)->required();
  auto* c_guide = app.add_subcommand("guide", "mean-HU guidance maps");
  add_common(c_guide);
  c_guide->add_option("--masks", masks_dir)->required();
  c_guide->add_option("--volumes", volumes_dir)->required();
  c_guide->add_option("--edits", edits_path);
  c_guide->add_option("--out", out_dir)->required();
  auto* c_train_gan = app.add_subcommand("train-gan", "train the AdaIN GAN");
  add_common(c_train_gan);
  c_train_gan->add_option("--guidance", guidance_dir)->required();
  c_train_gan->add_option("--reference", reference_dir)->required();
  c_train_gan->add_option("--out", out_dir)->required();
  auto* c_synth = app.add_subcommand("synth", "synthesize images + features");
  add_common(c_synth);
  c_synth->add_option("--ckpt", ckpt)->required();
  c_synth->add_option("--guidance", guidance_dir)->required();
  c_synth->add_option("--reference", reference_dir)->required();
  c_synth->add_option("--n", n, "number of outputs (default: one per guidance)");
  c_synth->add_option("--out", out_dir)->required();
  auto* c_train_seg =
      app.add_subcommand("train-seg", "train the ensemble pixel classifier");
  add_common(c_train_seg);
  c_train_seg->add_option("--ckpt", gan_ckpt, "generator checkpoint (unused, "
                                              "features come from the list)");
  c_train_seg->add_option("--labeled", labeled_list)->required();
  c_train_seg->add_option("--out", out_dir)->required();
  auto* c_infer =
      app.add_subcommand("infer", "paired image + mask synthesis");
  add_common(c_infer);
  c_infer->add_option("--gan-ckpt", gan_ckpt)->required();
  c_infer->add_option("--ens-ckpt", ens_ckpt)->required();
  c_infer->add_option("--guidance", guidance_dir)->required();
  c_infer->add_option("--reference", reference_dir)->required();
  c_infer->add_option("--edits", edits_path);
  c_infer->add_option("--out", out_dir)->required();
  auto* c_eval = app.add_subcommand("eval", "Dice report");
  c_eval->add_option("--pred", pred_dir)->required();
  c_eval->add_option("--truth", truth_dir)->required();
  c_eval->add_option("--report", report_path)->required();

  std::vector<const char*> argv;
  argv.push_back("cs2");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) {  // --help
        std::cout << app.help() << std::endl;
        return 0;
      }
      raise_config("argument error: ", e.what());
    }

    RunConfig cfg =
        config_path.empty() ? default_config() : RunConfig::from_file(config_path);
    if (seed_set) {
      cfg.seed = seed;
      cfg.gan.seed = cfg.stage_seed("gan");
      cfg.ensemble.seed = cfg.stage_seed("ensemble");
    }

    if (c_defaults->parsed()) {
      std::cout << default_config().to_text();
      return 0;
    }
    if (c_phantom->parsed())
      cmd_phantom(cfg, n > 0 ? n : cfg.phantom_count, out_dir);
    else if (c_maskgen->parsed())
      cmd_maskgen(cfg, in_dir, out_dir);
    else if (c_guide->parsed())
      cmd_guide(cfg, masks_dir, volumes_dir, edits_path, out_dir);
    else if (c_train_gan->parsed())
      cmd_train_gan(cfg, guidance_dir, reference_dir, out_dir);
    else if (c_synth->parsed())
      cmd_synth(cfg, ckpt, guidance_dir, reference_dir,
                n > 0 ? n : static_cast<int>(
                                detail::list_files(guidance_dir, ".cs2gdf").size()),
                out_dir);
    else if (c_train_seg->parsed())
      cmd_train_seg(cfg, labeled_list, out_dir);
    else if (c_infer->parsed())
      cmd_infer(cfg, gan_ckpt, ens_ckpt, guidance_dir, reference_dir,
                edits_path, out_dir);
    else if (c_eval->parsed())
      cmd_eval(pred_dir, truth_dir, report_path);
    return 0;
  } catch (const Error& e) {
    nlohmann::json j;
    j["error"] = e.kind() == ErrorKind::config
                     ? "config"
                     : (e.kind() == ErrorKind::data ? "data" : "numeric");
    j["message"] = e.what();
    std::cerr << j.dump() << std::endl;
    switch (e.kind()) {
      case ErrorKind::config:
        return 2;
      case ErrorKind::data:
        return 3;
      case ErrorKind::numeric:
        return 4;
    }
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json j;
    j["error"] = "internal";
    j["message"] = e.what();
    std::cerr << j.dump() << std::endl;
    return 1;
  }
}

}  // namespace cs2::cli
