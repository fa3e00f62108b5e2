#include "relrefine/numkit/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relrefine::nk {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor2D& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("Tensor2D: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str());
  }
}

Tensor2D Tensor2D::uninitialized(std::size_t rows, std::size_t cols) {
  Tensor2D t;
  t.rows_ = rows;
  t.cols_ = cols;
  t.data_.resize(rows * cols);
  return t;
}

Tensor2D Tensor2D::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Tensor2D t(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Tensor2D::from_rows: ragged rows");
    std::size_t j = 0;
    for (double v : row) t(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor2D Tensor2D::identity(std::size_t n) {
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor2D Tensor2D::row_vector(std::span<const double> values) {
  return Tensor2D(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Tensor2D::shape_str() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void Tensor2D::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor2D::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor2D& Tensor2D::operator+=(const Tensor2D& o) {
  if (!same_shape(o)) {
    throw std::invalid_argument("Tensor2D +=: shape " + shape_str() + " vs " + o.shape_str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor2D& Tensor2D::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void gemm(const Tensor2D& a, bool ta, const Tensor2D& b, bool tb, Tensor2D& out,
          bool accumulate) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t ka = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (ka != kb) {
    throw std::invalid_argument("matmul shape mismatch: " + a.shape_str() + (ta ? "^T" : "") +
                                " x " + b.shape_str() + (tb ? "^T" : ""));
  }
  if (!accumulate || out.rows() != m || out.cols() != n) {
    if (accumulate && !out.empty()) {
      throw std::invalid_argument("gemm accumulate into wrong shape " + out.shape_str());
    }
    out = Tensor2D(m, n);
  }
  if (m == 0 || n == 0 || ka == 0) return;
  MutMap o(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  auto av = view(a);
  auto bv = view(b);
  if (!ta && !tb) {
    o.noalias() += av * bv;
  } else if (ta && !tb) {
    o.noalias() += av.transpose() * bv;
  } else if (!ta && tb) {
    o.noalias() += av * bv.transpose();
  } else {
    o.noalias() += av.transpose() * bv.transpose();
  }
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  Tensor2D out;
  gemm(a, false, b, false, out);
  return out;
}

Tensor2D transpose(const Tensor2D& a) {
  Tensor2D t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double max_abs_diff(const Tensor2D& a, const Tensor2D& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("max_abs_diff: shape " + a.shape_str() + " vs " + b.shape_str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace relrefine::nk
