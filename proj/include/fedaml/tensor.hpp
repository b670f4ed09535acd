#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace fedaml {

// Dense row-major tensor of doubles. Most of the library works with rank-2
// tensors; a scalar is represented as a 1x1 matrix.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor scalar(double value);
  static Tensor column(std::span<const double> values);
  static Tensor row(std::span<const double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors; throw if the tensor is not a matrix.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  // Scalar value of a single-element tensor.
  double item() const;

  std::span<const double> row_span(std::size_t r) const;
  std::span<double> row_span(std::size_t r);

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Compressed sparse row matrix. Used for fixed graph operators (adjacency,
// transition matrices, neighbour averaging) that never need gradients.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> col_idx;
  std::vector<double> values;

  // Entries with duplicate coordinates are summed. Columns within a row end
  // up sorted ascending.
  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols,
                                 std::vector<std::tuple<std::size_t, std::size_t, double>> triplets);
  static CsrMatrix diagonal(std::span<const double> diag);

  std::size_t nnz() const { return values.size(); }
  CsrMatrix transpose() const;
  std::vector<double> row_sums() const;
  // y = A x for a dense vector.
  std::vector<double> multiply(std::span<const double> x) const;
  // Y = A X for a dense matrix.
  Tensor multiply(const Tensor& x) const;
  Tensor to_dense() const;
  double at(std::size_t r, std::size_t c) const;
};

}  // namespace fedaml
