#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cs2/errors.hpp"
#include "cs2/tensor.hpp"

namespace cs2 {

constexpr double kHuMin = -1024.0;
constexpr double kHuMax = 3071.0;

// 3D stack of signed Hounsfield-unit slices, slice-major then row-major.
// Spacing is carried as metadata only.
struct HUVolume {
  int n_slices = 0;
  int height = 0;
  int width = 0;
  std::vector<std::int16_t> voxels;
  double dz = 1.0, dy = 1.0, dx = 1.0;

  std::int16_t at(int s, int r, int c) const {
    return voxels[(static_cast<std::size_t>(s) * height + r) * width + c];
  }

  void validate() const {
    if (n_slices <= 0 || height <= 0 || width <= 0)
      raise_data("volume: non-positive dimensions ", n_slices, "x", height, "x",
                 width);
    const std::size_t want = static_cast<std::size_t>(n_slices) * height * width;
    if (voxels.size() != want)
      raise_data("volume: size mismatch, header implies ", want,
                 " voxels but payload has ", voxels.size());
    for (std::size_t i = 0; i < voxels.size(); ++i)
      if (voxels[i] < kHuMin || voxels[i] > kHuMax)
        raise_data("volume: hu out of range at voxel ", i, ": ", voxels[i]);
  }
};

// Per-voxel class labels accompanying a volume (same geometry).
struct LabelVolume {
  int n_slices = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;
  double dz = 1.0, dy = 1.0, dx = 1.0;

  std::uint8_t at(int s, int r, int c) const {
    return labels[(static_cast<std::size_t>(s) * height + r) * width + c];
  }
};

// 4-channel 2.5D working sample. Values are HU as doubles until normalized.
struct Slab {
  static constexpr int kChannels = 4;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // [4, H, W]
  std::array<int, 4> source_slices = {0, 0, 0, 0};

  double at(int c, int r, int col) const {
    return values[(static_cast<std::size_t>(c) * height + r) * width + col];
  }

  Tensor as_tensor() const {
    return Tensor::from({kChannels, height, width}, values);
  }

  Tensor channel(int c) const {
    const std::size_t hw = static_cast<std::size_t>(height) * width;
    std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(c * hw),
                          values.begin() + static_cast<std::ptrdiff_t>((c + 1) * hw));
    return Tensor::from({height, width}, std::move(v));
  }
};

// The 2.5D selection rule, 0-indexed: with N slices,
//   lower = floor(0.25*(N-1)), upper = ceil(0.75*(N-1)),
//   step  = floor((upper-lower)/4), indices = lower + k*step, k in 0..3.
// Reproduces the reference case N=31 -> [7,11,15,19].
inline std::array<int, 4> select_2_5d_indices(int n_slices) {
  const int lower = static_cast<int>(std::floor(0.25 * (n_slices - 1)));
  const int upper = static_cast<int>(std::ceil(0.75 * (n_slices - 1)));
  const int step = (upper - lower) / 4;
  if (step < 1)
    raise_data("select_2_5d: volume with ", n_slices,
               " slices is too thin; at least 7 slices are required");
  return {lower, lower + step, lower + 2 * step, lower + 3 * step};
}

inline Slab select_2_5d(const HUVolume& v) {
  const auto idx = select_2_5d_indices(v.n_slices);
  Slab s;
  s.height = v.height;
  s.width = v.width;
  s.source_slices = idx;
  s.values.resize(static_cast<std::size_t>(Slab::kChannels) * v.height * v.width);
  const std::size_t hw = static_cast<std::size_t>(v.height) * v.width;
  for (int c = 0; c < Slab::kChannels; ++c) {
    const std::int16_t* src = v.voxels.data() + static_cast<std::size_t>(idx[c]) * hw;
    double* dst = s.values.data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<double>(src[i]);
  }
  return s;
}

// HU display/normalization window; values clamp to [lo,hi] and map to [0,1].
struct HuWindow {
  double lo = -1024.0;
  double hi = 600.0;

  void validate() const {
    if (!(lo < hi)) raise_data("window: lo (", lo, ") must be < hi (", hi, ")");
  }

  double normalize(double hu) const {
    const double c = hu < lo ? lo : (hu > hi ? hi : hu);
    return (c - lo) / (hi - lo);
  }

  double denormalize(double u) const { return lo + u * (hi - lo); }
};

inline Slab normalize_hu(const Slab& s, HuWindow w) {
  w.validate();
  Slab out = s;
  for (auto& v : out.values) v = w.normalize(v);
  return out;
}

inline Slab denormalize_hu(const Slab& s, HuWindow w) {
  w.validate();
  Slab out = s;
  for (auto& v : out.values) v = w.denormalize(v);
  return out;
}

// ---------------------------------------------------------------------------
// File formats. All on-disk containers share one scheme: a UTF-8 text header
// of key=value lines opened by a magic tag and terminated by a blank line,
// followed by a raw little-endian payload (slice-major, row-major).
//   CS2VOL1  int16 HU voxels
//   CS2MSK1  uint8 class labels
//   CS2GDF1  float64 guidance values
//   CS2FTR1  float64 feature planes
// ---------------------------------------------------------------------------

namespace io_detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Header {
  std::string magic;
  int n_slices = 0, height = 0, width = 0;
  double dz = 1.0, dy = 1.0, dx = 1.0;
};

inline void write_header(std::ostream& os, const Header& h) {
  os << "magic=" << h.magic << "\n";
  os << "n_slices=" << h.n_slices << "\n";
  os << "height=" << h.height << "\n";
  os << "width=" << h.width << "\n";
  os << "dz=" << format_double(h.dz) << "\n";
  os << "dy=" << format_double(h.dy) << "\n";
  os << "dx=" << format_double(h.dx) << "\n";
  os << "\n";
}

inline Header read_header(std::istream& is, const std::string& path,
                          const char* expect_magic) {
  Header h;
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
  if (!terminated) raise_data(path, ": malformed header, missing blank line");
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) raise_data(path, ": malformed header, missing key ", key);
    return it->second;
  };
  h.magic = need("magic");
  if (h.magic != expect_magic)
    raise_data(path, ": malformed header, magic '", h.magic, "' but expected ",
               expect_magic);
  auto to_int = [&](const std::string& s, const char* key) {
    try {
      std::size_t pos = 0;
      const int v = std::stoi(s, &pos);
      if (pos != s.size() || v <= 0) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      raise_data(path, ": malformed header, bad ", key, " value '", s, "'");
    }
  };
  h.n_slices = to_int(need("n_slices"), "n_slices");
  h.height = to_int(need("height"), "height");
  h.width = to_int(need("width"), "width");
  h.dz = std::strtod(need("dz").c_str(), nullptr);
  h.dy = std::strtod(need("dy").c_str(), nullptr);
  h.dx = std::strtod(need("dx").c_str(), nullptr);
  return h;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) raise_data("cannot open for writing: ", path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise_data("cannot open: ", path);
  return is;
}

inline void put_i16le(std::ostream& os, std::int16_t v) {
  const auto u = static_cast<std::uint16_t>(v);
  const char b[2] = {static_cast<char>(u & 0xFF), static_cast<char>(u >> 8)};
  os.write(b, 2);
}

inline void put_f64le(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline std::vector<char> read_rest(std::istream& is) {
  return std::vector<char>(std::istreambuf_iterator<char>(is),
                           std::istreambuf_iterator<char>());
}

}  // namespace io_detail

inline void save_volume(const HUVolume& v, const std::string& path) {
  v.validate();
  auto os = io_detail::open_out(path);
  io_detail::write_header(os, {"CS2VOL1", v.n_slices, v.height, v.width, v.dz,
                               v.dy, v.dx});
  for (std::int16_t x : v.voxels) io_detail::put_i16le(os, x);
  if (!os) raise_data("write failed: ", path);
}

inline HUVolume load_volume(const std::string& path) {
  auto is = io_detail::open_in(path);
  const auto h = io_detail::read_header(is, path, "CS2VOL1");
  const auto raw = io_detail::read_rest(is);
  const std::size_t want =
      static_cast<std::size_t>(h.n_slices) * h.height * h.width;
  if (raw.size() != want * 2)
    raise_data(path, ": size mismatch, header implies ", want * 2,
               " payload bytes but file has ", raw.size());
  HUVolume v;
  v.n_slices = h.n_slices;
  v.height = h.height;
  v.width = h.width;
  v.dz = h.dz;
  v.dy = h.dy;
  v.dx = h.dx;
  v.voxels.resize(want);
  for (std::size_t i = 0; i < want; ++i) {
    const auto lo = static_cast<std::uint8_t>(raw[2 * i]);
    const auto hi = static_cast<std::uint8_t>(raw[2 * i + 1]);
    v.voxels[i] = static_cast<std::int16_t>(
        static_cast<std::uint16_t>(lo) | (static_cast<std::uint16_t>(hi) << 8));
  }
  v.validate();
  return v;
}

inline void save_labels(const LabelVolume& m, const std::string& path) {
  auto os = io_detail::open_out(path);
  io_detail::write_header(os, {"CS2MSK1", m.n_slices, m.height, m.width, m.dz,
                               m.dy, m.dx});
  os.write(reinterpret_cast<const char*>(m.labels.data()),
           static_cast<std::streamsize>(m.labels.size()));
  if (!os) raise_data("write failed: ", path);
}

inline LabelVolume load_labels(const std::string& path) {
  auto is = io_detail::open_in(path);
  const auto h = io_detail::read_header(is, path, "CS2MSK1");
  const auto raw = io_detail::read_rest(is);
  const std::size_t want =
      static_cast<std::size_t>(h.n_slices) * h.height * h.width;
  if (raw.size() != want)
    raise_data(path, ": size mismatch, header implies ", want,
               " payload bytes but file has ", raw.size());
  LabelVolume m;
  m.n_slices = h.n_slices;
  m.height = h.height;
  m.width = h.width;
  m.dz = h.dz;
  m.dy = h.dy;
  m.dx = h.dx;
  m.labels.assign(raw.begin(), raw.end());
  return m;
}

// Stack of float64 planes; used for guidance maps (CS2GDF1) and cached
// per-pixel features (CS2FTR1).
struct FloatStack {
  int n = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

inline void save_float_stack(const FloatStack& f, const std::string& path,
                             const char* magic) {
  auto os = io_detail::open_out(path);
  io_detail::write_header(os, {magic, f.n, f.height, f.width, 1.0, 1.0, 1.0});
  for (double v : f.values) io_detail::put_f64le(os, v);
  if (!os) raise_data("write failed: ", path);
}

inline FloatStack load_float_stack(const std::string& path, const char* magic) {
  auto is = io_detail::open_in(path);
  const auto h = io_detail::read_header(is, path, magic);
  const auto raw = io_detail::read_rest(is);
  const std::size_t want =
      static_cast<std::size_t>(h.n_slices) * h.height * h.width;
  if (raw.size() != want * 8)
    raise_data(path, ": size mismatch, header implies ", want * 8,
               " payload bytes but file has ", raw.size());
  FloatStack f;
  f.n = h.n_slices;
  f.height = h.height;
  f.width = h.width;
  f.values.resize(want);
  for (std::size_t i = 0; i < want; ++i) {
    std::uint64_t u = 0;
    for (int b = 7; b >= 0; --b)
      u = (u << 8) | static_cast<std::uint8_t>(raw[8 * i + b]);
    std::memcpy(&f.values[i], &u, 8);
  }
  return f;
}

}  // namespace cs2
