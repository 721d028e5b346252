#include "evfuse/tensor.hpp"

#include <algorithm>

#include "evfuse/errors.hpp"

namespace evfuse {

std::size_t shape_volume(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(shape_volume(shape_), fill) {
  if (shape_.empty() || shape_.size() > 4) throw ShapeError("tensor rank must be 1..4");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.empty() || shape_.size() > 4) throw ShapeError("tensor rank must be 1..4");
  if (values_.size() != shape_volume(shape_)) throw ShapeError("value count != product of shape");
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

}  // namespace evfuse
