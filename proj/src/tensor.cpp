#include "stemlm/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "eigen_util.hpp"
#include "stemlm/error.hpp"

namespace stemlm::num {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
  if (data_.size() != rows * cols)
    fail(ErrorKind::numeric, "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                 shape_string());
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

double Tensor::item() const {
  if (data_.size() != 1) fail(ErrorKind::numeric, "item() on tensor of shape " + shape_string());
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return as_matrix(*this).allFinite();  // vectorised, unlike a per-element isfinite
}

}  // namespace stemlm::num
