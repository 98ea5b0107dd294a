#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cs2/ensemble.hpp"
#include "cs2/gan.hpp"
#include "cs2/maskgen.hpp"
#include "cs2/phantom.hpp"
#include "cs2/volume.hpp"

namespace cs2 {

// Whole-pipeline configuration. One file, sectioned key=value text; every
// stage's seed derives from the global seed, and the canonical text form
// round-trips losslessly (the config echo written next to stage outputs is
// exactly this serialization).
struct RunConfig {
  std::uint64_t seed = 17;

  int phantom_count = 200;
  PhantomSpec phantom;
  HuWindow window;

  UnsupConfig maskgen;
  std::string maskgen_channels = "all";  // all | first
  // Clustering reads the slab through its own window. The default saturates
  // soft tissue so the low-contrast lung interior spreads over the range the
  // per-image CNN actually resolves.
  HuWindow maskgen_window{-1024.0, -400.0};

  GanConfig gan;

  EnsembleConfig ensemble;
  int labeled_budget = 30;

  int infer_min_component = 20;

  void validate() const {
    if (phantom_count < 1) raise_config("config: phantom.count must be >= 1");
    phantom.validate();
    window.validate();
    maskgen.validate();
    maskgen_window.validate();
    if (maskgen_channels != "all" && maskgen_channels != "first")
      raise_config("config: maskgen.channels must be 'all' or 'first'");
    gan.validate();
    ensemble.validate();
    if (labeled_budget < 1) raise_config("config: ensemble.labeled must be >= 1");
    if (infer_min_component < 0)
      raise_config("config: infer.min_component must be >= 0");
  }

  std::uint64_t stage_seed(const std::string& stage) const {
    return derive_seed(seed, stage);
  }

  std::string to_text() const;
  static RunConfig parse(const std::string& text);
  static RunConfig from_file(const std::string& path);
};

namespace config_detail {

inline std::string fmt(double v) { return io_detail::format_double(v); }

inline std::string fmt_widths(const std::vector<int>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i)
    s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

inline std::vector<int> parse_widths(const std::string& s,
                                     const std::string& key) {
  std::vector<int> out;
  std::size_t p = 0;
  while (p <= s.size()) {
    auto comma = s.find(',', p);
    if (comma == std::string::npos) comma = s.size();
    try {
      out.push_back(std::stoi(s.substr(p, comma - p)));
    } catch (const std::exception&) {
      raise_config("config: bad value '", s, "' for ", key);
    }
    p = comma + 1;
    if (comma == s.size()) break;
  }
  if (out.empty()) raise_config("config: empty list for ", key);
  return out;
}

}  // namespace config_detail

inline std::string RunConfig::to_text() const {
  using config_detail::fmt;
  std::ostringstream os;
  os << "[run]\n";
  os << "seed = " << seed << "\n";
  os << "\n[phantom]\n";
  os << "count = " << phantom_count << "\n";
  os << "height = " << phantom.height << "\n";
  os << "width = " << phantom.width << "\n";
  os << "n_slices = " << phantom.n_slices << "\n";
  os << "n_ggo_min = " << phantom.n_ggo_min << "\n";
  os << "n_ggo_max = " << phantom.n_ggo_max << "\n";
  os << "hu_background = " << fmt(phantom.hu_mean[0]) << "\n";
  os << "hu_body = " << fmt(phantom.hu_mean[1]) << "\n";
  os << "hu_lung = " << fmt(phantom.hu_mean[2]) << "\n";
  os << "hu_ggo = " << fmt(phantom.hu_mean[3]) << "\n";
  os << "noise_std = " << fmt(phantom.noise_std) << "\n";
  os << "lung_scale = " << fmt(phantom.lung_scale) << "\n";
  os << "\n[window]\n";
  os << "lo = " << fmt(window.lo) << "\n";
  os << "hi = " << fmt(window.hi) << "\n";
  os << "\n[maskgen]\n";
  os << "classes = " << maskgen.initial_classes << "\n";
  os << "max_iters = " << maskgen.max_iters << "\n";
  os << "stop_clusters = " << maskgen.stop_clusters << "\n";
  os << "n_segments = " << maskgen.n_segments << "\n";
  os << "compactness = " << fmt(maskgen.compactness) << "\n";
  os << "slic_iters = " << maskgen.slic_iters << "\n";
  os << "widths = " << config_detail::fmt_widths(maskgen.widths) << "\n";
  os << "lr = " << fmt(maskgen.lr) << "\n";
  os << "momentum = " << fmt(maskgen.momentum) << "\n";
  os << "median_denoise = " << (maskgen.median_denoise ? "true" : "false")
     << "\n";
  os << "channels = " << maskgen_channels << "\n";
  os << "window_lo = " << fmt(maskgen_window.lo) << "\n";
  os << "window_hi = " << fmt(maskgen_window.hi) << "\n";
  os << "\n[gan]\n";
  os << "image_size = " << gan.image_size << "\n";
  os << "enc_widths = " << config_detail::fmt_widths(gan.enc_widths) << "\n";
  os << "n_resblocks = " << gan.n_resblocks << "\n";
  os << "disc_widths = " << config_detail::fmt_widths(gan.disc_widths) << "\n";
  os << "style_channels = " << gan.style_channels << "\n";
  os << "style_layers = " << gan.style_layers << "\n";
  os << "lambda_adv = " << fmt(gan.lambda_adv) << "\n";
  os << "lambda_style = " << fmt(gan.lambda_style) << "\n";
  os << "lambda_content = " << fmt(gan.lambda_content) << "\n";
  os << "batch_size = " << gan.batch_size << "\n";
  os << "steps = " << gan.steps << "\n";
  os << "lr = " << fmt(gan.lr) << "\n";
  os << "beta1 = " << fmt(gan.beta1) << "\n";
  os << "beta2 = " << fmt(gan.beta2) << "\n";
  os << "style_seed = " << gan.style_seed << "\n";
  os << "checkpoint_every = " << gan.checkpoint_every << "\n";
  os << "\n[ensemble]\n";
  os << "members = " << ensemble.members << "\n";
  os << "classes = " << ensemble.classes << "\n";
  os << "hidden = " << ensemble.hidden << "\n";
  os << "steps = " << ensemble.steps << "\n";
  os << "batch = " << ensemble.batch << "\n";
  os << "lr = " << fmt(ensemble.lr) << "\n";
  os << "pixel_cap = " << ensemble.pixel_cap << "\n";
  os << "labeled = " << labeled_budget << "\n";
  os << "\n[infer]\n";
  os << "min_component = " << infer_min_component << "\n";
  return os.str();
}

inline RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;

  auto bad = [&](const std::string& what) {
    raise_config("config line ", line_no, ": ", what);
  };

  std::map<std::string, std::string> kv;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') bad("unterminated section header");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) bad("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) bad("empty key or value");
    kv[section + "." + key] = value;
  }

  auto take_int = [&kv](const std::string& key, int& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    try {
      dst = std::stoi(it->second);
    } catch (const std::exception&) {
      raise_config("config: bad integer '", it->second, "' for ", key);
    }
    kv.erase(it);
  };
  auto take_i64 = [&kv](const std::string& key, std::int64_t& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    try {
      dst = std::stoll(it->second);
    } catch (const std::exception&) {
      raise_config("config: bad integer '", it->second, "' for ", key);
    }
    kv.erase(it);
  };
  auto take_u64 = [&kv](const std::string& key, std::uint64_t& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    try {
      dst = std::stoull(it->second);
    } catch (const std::exception&) {
      raise_config("config: bad integer '", it->second, "' for ", key);
    }
    kv.erase(it);
  };
  auto take_double = [&kv](const std::string& key, double& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    char* end = nullptr;
    dst = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0')
      raise_config("config: bad number '", it->second, "' for ", key);
    kv.erase(it);
  };
  auto take_bool = [&kv](const std::string& key, bool& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    if (it->second == "true")
      dst = true;
    else if (it->second == "false")
      dst = false;
    else
      raise_config("config: bad bool '", it->second, "' for ", key);
    kv.erase(it);
  };
  auto take_string = [&kv](const std::string& key, std::string& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    dst = it->second;
    kv.erase(it);
  };
  auto take_widths = [&kv](const std::string& key, std::vector<int>& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    dst = config_detail::parse_widths(it->second, key);
    kv.erase(it);
  };

  take_u64("run.seed", cfg.seed);
  take_int("phantom.count", cfg.phantom_count);
  take_int("phantom.height", cfg.phantom.height);
  take_int("phantom.width", cfg.phantom.width);
  take_int("phantom.n_slices", cfg.phantom.n_slices);
  take_int("phantom.n_ggo_min", cfg.phantom.n_ggo_min);
  take_int("phantom.n_ggo_max", cfg.phantom.n_ggo_max);
  take_double("phantom.hu_background", cfg.phantom.hu_mean[0]);
  take_double("phantom.hu_body", cfg.phantom.hu_mean[1]);
  take_double("phantom.hu_lung", cfg.phantom.hu_mean[2]);
  take_double("phantom.hu_ggo", cfg.phantom.hu_mean[3]);
  take_double("phantom.noise_std", cfg.phantom.noise_std);
  take_double("phantom.lung_scale", cfg.phantom.lung_scale);
  take_double("window.lo", cfg.window.lo);
  take_double("window.hi", cfg.window.hi);
  take_int("maskgen.classes", cfg.maskgen.initial_classes);
  take_int("maskgen.max_iters", cfg.maskgen.max_iters);
  take_int("maskgen.stop_clusters", cfg.maskgen.stop_clusters);
  take_int("maskgen.n_segments", cfg.maskgen.n_segments);
  take_double("maskgen.compactness", cfg.maskgen.compactness);
  take_int("maskgen.slic_iters", cfg.maskgen.slic_iters);
  take_widths("maskgen.widths", cfg.maskgen.widths);
  take_double("maskgen.lr", cfg.maskgen.lr);
  take_double("maskgen.momentum", cfg.maskgen.momentum);
  take_bool("maskgen.median_denoise", cfg.maskgen.median_denoise);
  take_string("maskgen.channels", cfg.maskgen_channels);
  take_double("maskgen.window_lo", cfg.maskgen_window.lo);
  take_double("maskgen.window_hi", cfg.maskgen_window.hi);
  take_int("gan.image_size", cfg.gan.image_size);
  take_widths("gan.enc_widths", cfg.gan.enc_widths);
  take_int("gan.n_resblocks", cfg.gan.n_resblocks);
  take_widths("gan.disc_widths", cfg.gan.disc_widths);
  take_int("gan.style_channels", cfg.gan.style_channels);
  take_int("gan.style_layers", cfg.gan.style_layers);
  take_double("gan.lambda_adv", cfg.gan.lambda_adv);
  take_double("gan.lambda_style", cfg.gan.lambda_style);
  take_double("gan.lambda_content", cfg.gan.lambda_content);
  take_int("gan.batch_size", cfg.gan.batch_size);
  take_int("gan.steps", cfg.gan.steps);
  take_double("gan.lr", cfg.gan.lr);
  take_double("gan.beta1", cfg.gan.beta1);
  take_double("gan.beta2", cfg.gan.beta2);
  take_u64("gan.style_seed", cfg.gan.style_seed);
  take_int("gan.checkpoint_every", cfg.gan.checkpoint_every);
  take_int("ensemble.members", cfg.ensemble.members);
  take_int("ensemble.classes", cfg.ensemble.classes);
  take_int("ensemble.hidden", cfg.ensemble.hidden);
  take_int("ensemble.steps", cfg.ensemble.steps);
  take_int("ensemble.batch", cfg.ensemble.batch);
  take_double("ensemble.lr", cfg.ensemble.lr);
  take_i64("ensemble.pixel_cap", cfg.ensemble.pixel_cap);
  take_int("ensemble.labeled", cfg.labeled_budget);
  take_int("infer.min_component", cfg.infer_min_component);

  if (!kv.empty())
    raise_config("config: unknown key '", kv.begin()->first, "'");

  // stage seeds derive from the global seed
  cfg.gan.window = cfg.window;
  cfg.gan.seed = cfg.stage_seed("gan");
  cfg.ensemble.seed = cfg.stage_seed("ensemble");
  cfg.validate();
  return cfg;
}

inline RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise_config("cannot open config: ", path);
  const std::string text((std::istreambuf_iterator<char>(is)), {});
  return parse(text);
}

inline RunConfig default_config() { return RunConfig::parse(""); }

}  // namespace cs2
