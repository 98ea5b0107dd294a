#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cs2/maskgen.hpp"
#include "cs2/volume.hpp"

#include "json.hpp"

namespace cs2 {

// HU-valued structural map: every pixel carries the mean HU of its source
// cluster, so the disordered cluster ids become an ordered, editable labeling.
struct GuidanceMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;                 // H*W, HU
  std::vector<std::pair<int, double>> provenance;  // (class id, mean HU)
  std::vector<double> edit_values;            // HU introduced by edits

  double at(int r, int c) const {
    return values[static_cast<std::size_t>(r) * width + c];
  }

  Tensor as_tensor() const { return Tensor::from({height, width}, values); }
};

// Replaces every pixel with the arithmetic mean HU of its class. A class
// whose pixels are all identical maps to exactly that value, which makes
// re-assignment bit-exact.
inline GuidanceMap mean_hu_assignment(const ClusterMask& mask,
                                      const Tensor& image) {
  if (image.ndim() != 2 || image.dim(0) != mask.height ||
      image.dim(1) != mask.width)
    raise_data("mean_hu_assignment: mask ", mask.height, "x", mask.width,
               " vs image ", shape_str(image.shape));
  int max_class = 0;
  for (int l : mask.labels) max_class = std::max(max_class, l);
  const std::size_t n_classes = static_cast<std::size_t>(max_class) + 1;
  std::vector<double> sum(n_classes, 0.0), lo(n_classes, kHuMax + 1),
      hi(n_classes, kHuMin - 1);
  std::vector<std::int64_t> cnt(n_classes, 0);
  for (std::size_t p = 0; p < mask.labels.size(); ++p) {
    const auto cls = static_cast<std::size_t>(mask.labels[p]);
    const double v = image.data[p];
    sum[cls] += v;
    lo[cls] = std::min(lo[cls], v);
    hi[cls] = std::max(hi[cls], v);
    ++cnt[cls];
  }
  std::vector<double> mean(n_classes, 0.0);
  GuidanceMap out;
  out.height = mask.height;
  out.width = mask.width;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (cnt[c] == 0) continue;
    mean[c] = lo[c] == hi[c] ? lo[c] : sum[c] / static_cast<double>(cnt[c]);
    out.provenance.emplace_back(static_cast<int>(c), mean[c]);
  }
  out.values.resize(mask.labels.size());
  for (std::size_t p = 0; p < mask.labels.size(); ++p)
    out.values[p] = mean[static_cast<std::size_t>(mask.labels[p])];
  return out;
}

// Declarative structural edit: a filled circle or polygon painted at a
// constant HU.
struct EditOp {
  enum class Kind { circle, polygon };
  Kind kind = Kind::circle;
  double cx = 0.0, cy = 0.0, radius = 0.0;          // circle
  std::vector<std::pair<double, double>> vertices;  // polygon (x, y)
  double hu = 0.0;

  void validate() const {
    if (hu < kHuMin || hu > kHuMax)
      raise_data("edit: hu value ", hu, " outside [", kHuMin, ",", kHuMax, "]");
    if (kind == Kind::circle && radius < 0.0)
      raise_data("edit: negative radius ", radius);
    if (kind == Kind::polygon && vertices.size() < 3)
      raise_data("edit: polygon needs >= 3 vertices, got ", vertices.size());
  }
};

namespace guidance_detail {

// A pixel (row r, col c) has center (x=c, y=r). Circle membership is strict,
// so radius 0 paints nothing.
inline bool in_circle(const EditOp& e, int r, int c) {
  const double dx = c - e.cx;
  const double dy = r - e.cy;
  return dx * dx + dy * dy < e.radius * e.radius;
}

// Even-odd rule on pixel centers.
inline bool in_polygon(const EditOp& e, int r, int c) {
  const double x = c, y = r;
  bool inside = false;
  const std::size_t n = e.vertices.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto [xi, yi] = e.vertices[i];
    const auto [xj, yj] = e.vertices[j];
    if ((yi > y) != (yj > y) &&
        x < (xj - xi) * (y - yi) / (yj - yi) + xi)
      inside = !inside;
  }
  return inside;
}

inline bool covers(const EditOp& e, int r, int c) {
  return e.kind == EditOp::Kind::circle ? in_circle(e, r, c)
                                        : in_polygon(e, r, c);
}

}  // namespace guidance_detail

// Applies edits in list order; later shapes overwrite earlier ones. Shapes
// are clipped at the image border.
inline GuidanceMap apply_edits(const GuidanceMap& gmap,
                               const std::vector<EditOp>& edits) {
  GuidanceMap out = gmap;
  for (const auto& e : edits) {
    e.validate();
    bool painted = false;
    for (int r = 0; r < out.height; ++r)
      for (int c = 0; c < out.width; ++c)
        if (guidance_detail::covers(e, r, c)) {
          out.values[static_cast<std::size_t>(r) * out.width + c] = e.hu;
          painted = true;
        }
    if (painted) out.edit_values.push_back(e.hu);
  }
  return out;
}

// JSON-lines edit files, one op per line:
//   {"kind":"circle","cx":96,"cy":80,"r":30,"hu":-600}
//   {"kind":"polygon","vertices":[[10,12],[30,12],[20,28]],"hu":-600}
inline std::vector<EditOp> parse_edits(const std::string& text) {
  std::vector<EditOp> out;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      raise_data("edits line ", line_no, ": ", ex.what());
    }
    EditOp e;
    const std::string kind = j.value("kind", "");
    if (kind == "circle") {
      e.kind = EditOp::Kind::circle;
      if (!j.contains("cx") || !j.contains("cy") || !j.contains("r") ||
          !j.contains("hu"))
        raise_data("edits line ", line_no, ": circle needs cx, cy, r, hu");
      e.cx = j["cx"].get<double>();
      e.cy = j["cy"].get<double>();
      e.radius = j["r"].get<double>();
      e.hu = j["hu"].get<double>();
    } else if (kind == "polygon") {
      e.kind = EditOp::Kind::polygon;
      if (!j.contains("vertices") || !j.contains("hu"))
        raise_data("edits line ", line_no, ": polygon needs vertices, hu");
      for (const auto& v : j["vertices"])
        e.vertices.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
      e.hu = j["hu"].get<double>();
    } else {
      raise_data("edits line ", line_no, ": unknown kind '", kind, "'");
    }
    e.validate();
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<EditOp> load_edits(const std::string& path) {
  auto is = io_detail::open_in(path);
  const std::string text((std::istreambuf_iterator<char>(is)), {});
  return parse_edits(text);
}

}  // namespace cs2
