#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace egnn {

// Row-major dense matrix of doubles.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double* operator[](std::size_t r) { return values.data() + r * cols; }
  const double* operator[](std::size_t r) const {
    return values.data() + r * cols;
  }

  double& at(std::size_t r, std::size_t c) {
    if (r >= rows || c >= cols) throw std::out_of_range("DenseMatrix::at");
    return values[r * cols + c];
  }
  double at(std::size_t r, std::size_t c) const {
    if (r >= rows || c >= cols) throw std::out_of_range("DenseMatrix::at");
    return values[r * cols + c];
  }

  std::span<double> row(std::size_t r) {
    if (r >= rows) throw std::out_of_range("DenseMatrix::row");
    return {values.data() + r * cols, cols};
  }
  std::span<const double> row(std::size_t r) const {
    if (r >= rows) throw std::out_of_range("DenseMatrix::row");
    return {values.data() + r * cols, cols};
  }

  std::size_t size() const { return values.size(); }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }

  void fill(double v) { values.assign(values.size(), v); }

  bool same_shape(const DenseMatrix& o) const {
    return rows == o.rows && cols == o.cols;
  }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const DenseMatrix& o) const {
    return rows == o.rows && cols == o.cols && values == o.values;
  }
};

// Trainable value plus its gradient accumulator, same shape.
struct Param {
  DenseMatrix value;
  DenseMatrix grad;

  Param() = default;
  explicit Param(DenseMatrix v) : value(std::move(v)) {
    grad = DenseMatrix(value.rows, value.cols);
  }
  Param(std::size_t r, std::size_t c) : value(r, c), grad(r, c) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const { return value.size(); }
};

}  // namespace egnn
