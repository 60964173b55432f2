#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "kws/common.hpp"

namespace kws::nn {

// Dense row-major N-d array. Everything the network touches is one of these.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel_of(shape), T(0)) {}

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  T at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  T& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }
};

template <typename T>
void require_shape(const Tensor<T>& t, const std::vector<std::size_t>& shape, const char* what) {
  if (t.shape != shape) {
    fail("shape-error", std::string(what) + " has shape " + t.shape_str());
  }
}

template <typename T, typename U>
Tensor<T> cast_tensor(const Tensor<U>& src) {
  Tensor<T> out(src.shape);
  for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<T>(src.data[i]);
  return out;
}

}  // namespace kws::nn
