#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cs2/errors.hpp"
#include "cs2/rng.hpp"

namespace cs2 {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Dense n-dimensional array of 64-bit floats, row-major. The grad buffer is
// allocated iff requires_grad is set and always matches the data shape.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;

  explicit Tensor(std::vector<int> shp, double fill = 0.0)
      : shape(std::move(shp)) {
    for (int d : shape)
      if (d <= 0) raise_data("tensor: non-positive dimension in ", shape_str(shape));
    data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  }

  static Tensor from(std::vector<int> shp, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(shp);
    if (shape_numel(t.shape) != static_cast<std::int64_t>(values.size()))
      raise_data("tensor: shape ", shape_str(t.shape), " does not match ",
                 values.size(), " values");
    t.data = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor randn(std::vector<int> shp, Rng& rng, double std = 1.0) {
    Tensor t(std::move(shp));
    for (auto& v : t.data) v = std * rng.normal();
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  void set_requires_grad(bool flag) {
    requires_grad = flag;
    if (flag)
      grad.assign(data.size(), 0.0);
    else
      grad.clear();
  }

  void zero_grad() {
    if (requires_grad) grad.assign(data.size(), 0.0);
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Contract check for module boundaries: every stored value must be finite.
  void validate_finite(const char* what) const {
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!std::isfinite(data[i]))
        raise_numeric(what, ": non-finite value at flat index ", i);
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

}  // namespace cs2
