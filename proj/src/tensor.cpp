#include "tensor.hpp"

#include <cmath>

namespace pctl {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw Error::runtime("Tensor: value count " + std::to_string(values_.size()) +
                         " does not match shape " + shape_string());
  }
}

Tensor Tensor::scalar(double v) { return Tensor(1, 1, {v}); }

Tensor Tensor::row(std::vector<double> v) {
  std::size_t n = v.size();
  return Tensor(1, n, std::move(v));
}

Tensor Tensor::column(std::vector<double> v) {
  std::size_t n = v.size();
  return Tensor(n, 1, std::move(v));
}

std::string Tensor::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Tensor::fill(double v) {
  for (double& x : values_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : values_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor Tensor::row_copy(std::size_t r) const {
  Tensor out(1, cols_);
  for (std::size_t c = 0; c < cols_; ++c) out.at(0, c) = at(r, c);
  return out;
}

Tensor Tensor::gather_rows(const std::vector<std::size_t>& rows) const {
  Tensor out(rows.size(), cols_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= rows_) {
      throw Error::runtime("Tensor::gather_rows: row index " + std::to_string(rows[i]) +
                           " out of range for " + shape_string());
    }
    for (std::size_t c = 0; c < cols_; ++c) out.at(i, c) = at(rows[i], c);
  }
  return out;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw Error::runtime("Tensor::item: expected a scalar, got " + shape_string());
  }
  return values_[0];
}

Tensor l2_normalize_rows_plain(const Tensor& x, std::size_t* warn_counter) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) sq += x.at(r, c) * x.at(r, c);
    double norm = std::sqrt(sq);
    if (norm == 0.0) {
      if (warn_counter) ++*warn_counter;
      continue;  // row stays zero
    }
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) / norm;
  }
  return out;
}

double squared_distance_rows(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb) {
  double sq = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double d = a.at(ra, c) - b.at(rb, c);
    sq += d * d;
  }
  return sq;
}

double dot_rows(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += a.at(ra, c) * b.at(rb, c);
  return s;
}

}  // namespace pctl
