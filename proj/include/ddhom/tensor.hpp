#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ddhom/common.hpp"

namespace ddhom {

// Dense row-major float64 tensor, rank <= 4. Images use (N, H, W, C).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  }
  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }
  static Tensor from(std::vector<int> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    if (static_cast<long long>(t.data.size()) != t.numel())
      throw InvalidInputError("Tensor::from: shape/data mismatch");
    return t;
  }

  static long long numel_of(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
  }
  long long numel() const { return numel_of(shape); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + ")";
  }
};

}  // namespace ddhom
