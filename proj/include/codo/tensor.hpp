#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace codo {

// Dense row-major double tensor, rank <= 4. Feature maps are (C, H, W).
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::initializer_list<std::int64_t> s)
      : Tensor(std::vector<std::int64_t>(s)) {}

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  double& operator()(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const double& operator()(std::int64_t i) const {
    return data[static_cast<std::size_t>(i)];
  }
  double& operator()(std::int64_t i, std::int64_t j) {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  const double& operator()(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  double& operator()(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const double& operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  void fill(double v) { data.assign(data.size(), v); }
  void add_(const Tensor& other);          // elementwise +=
  void axpy_(double alpha, const Tensor&); // this += alpha * other
  void scale_(double alpha);
  double dot(const Tensor& other) const;
  double norm2() const;
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

}  // namespace codo
