#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "common.hpp"

namespace pctl {

// Dense row-major matrix of 64-bit floats. Everything in the project is
// rank 2: scalars are 1x1, row vectors 1xn. 64-bit throughout so that the
// finite-difference gradient checks have headroom.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);
  static Tensor column(std::vector<double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t numel() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  std::string shape_string() const;

  double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  // Copy of row r as a 1xcols tensor.
  Tensor row_copy(std::size_t r) const;
  // Rows selected by index, stacked in the given order.
  Tensor gather_rows(const std::vector<std::size_t>& rows) const;

  double item() const;  // value of a 1x1 tensor

  bool operator==(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && values_ == other.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Plain (non-differentiated) helpers shared by clustering and data prep.

// Row-wise L2 normalization. Zero rows stay zero; if warn_counter is given
// it is incremented once per zero row instead of producing NaN.
Tensor l2_normalize_rows_plain(const Tensor& x, std::size_t* warn_counter = nullptr);

double squared_distance_rows(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb);
double dot_rows(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb);

}  // namespace pctl
