#include "codo/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace codo {

void Tensor::add_(const Tensor& other) {
  if (data.size() != other.data.size())
    throw std::invalid_argument("Tensor::add_: size mismatch");
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
}

void Tensor::axpy_(double alpha, const Tensor& other) {
  if (data.size() != other.data.size())
    throw std::invalid_argument("Tensor::axpy_: size mismatch");
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += alpha * other.data[i];
}

void Tensor::scale_(double alpha) {
  for (auto& v : data) v *= alpha;
}

double Tensor::dot(const Tensor& other) const {
  if (data.size() != other.data.size())
    throw std::invalid_argument("Tensor::dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += data[i] * other.data[i];
  return s;
}

double Tensor::norm2() const {
  double s = 0.0;
  for (double v : data) s += v * v;
  return std::sqrt(s);
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace codo
