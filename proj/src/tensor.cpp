// SPDX-License-Identifier: Apache-2.0
#include "ta2n/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ta2n/error.hpp"

namespace ta2n {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) require(d > 0, ErrorCode::kInvalidArgument, "zero-sized dimension in " + shape_string(shape_));
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) require(d > 0, ErrorCode::kInvalidArgument, "zero-sized dimension in " + shape_string(shape_));
  require(shape_numel(shape_) == data_.size(), ErrorCode::kShapeMismatch,
          "data length " + std::to_string(data_.size()) + " does not match " + shape_string(shape_));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  require(index.size() == shape_.size(), ErrorCode::kInvalidArgument, "index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    require(i < shape_[axis], ErrorCode::kInvalidArgument, "index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }
double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

double Tensor::item() const {
  require(data_.size() == 1, ErrorCode::kShapeMismatch, "item() on " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == data_.size(), ErrorCode::kShapeMismatch,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void add_inplace(Tensor& dst, const Tensor& src, double scale) {
  require(dst.shape() == src.shape(), ErrorCode::kShapeMismatch,
          "add_inplace " + shape_string(dst.shape()) + " vs " + shape_string(src.shape()));
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

}  // namespace ta2n
