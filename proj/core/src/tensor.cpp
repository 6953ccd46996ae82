#include "bodycomp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bodycomp {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw std::runtime_error("Tensor: data length does not match shape");
  }
}

void Tensor::fill(double value) {
  std::fill(data_.begin(), data_.end(), value);
}

double Tensor::sum() const {
  double s = 0;
  for (double v : data_) s += v;
  return s;
}

bool Tensor::all_finite() const { return std::isfinite(sum()); }

}  // namespace bodycomp
