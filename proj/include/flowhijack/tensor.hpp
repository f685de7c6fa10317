// Dense row-major tensor of 64-bit floats. The only value type the
// autodiff graph and the policy code operate on.
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flowhijack {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (numel_of(shape) != v.size())
      throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor full(std::vector<std::size_t> s, double x) {
    std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, x));
  }
  static Tensor scalar(double x) { return Tensor({1}, {x}); }
  static Tensor vec(std::vector<double> data) {
    std::size_t n = data.size();
    return Tensor({n}, std::move(data));
  }

  std::size_t numel() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& at(std::size_t i) { return v[i]; }
  double at(std::size_t i) const { return v[i]; }
  double& at(std::size_t i, std::size_t j) { return v[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
      os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }
};

inline bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.v == b.v;
}

}  // namespace flowhijack
