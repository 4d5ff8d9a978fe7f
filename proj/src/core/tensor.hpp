#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace mvi::nn {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

// Dense row-major double tensor. The buffer is shared between reshaped views;
// values are treated as immutable once produced by an op.
class Tensor {
 public:
  Tensor() : buf_(std::make_shared<std::vector<double>>()) {}

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<double>>(size_t(count(shape_)), 0.0)) {}

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data(), t.data() + t.numel(), value);
    return t;
  }

  static Tensor scalar(double value) { return full({1}, value); }

  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal() * stddev;
    return t;
  }

  static Tensor from_vector(std::vector<int> shape, std::vector<double> values) {
    require_arg(int64_t(values.size()) == count(shape), "from_vector: size mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = std::make_shared<std::vector<double>>(std::move(values));
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(size_t(i)); }
  int ndim() const { return int(shape_.size()); }
  int64_t numel() const { return count(shape_); }

  double* data() { return buf_->data(); }
  const double* data() const { return buf_->data(); }
  double& operator[](int64_t i) { return (*buf_)[size_t(i)]; }
  double operator[](int64_t i) const { return (*buf_)[size_t(i)]; }

  Tensor reshaped(std::vector<int> shape) const {
    require_arg(count(shape) == numel(), "reshaped: element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = buf_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.buf_ = std::make_shared<std::vector<double>>(*buf_);
    return t;
  }

  void add_(const Tensor& other) {
    require_arg(other.numel() == numel(), "add_: size mismatch");
    for (int64_t i = 0; i < numel(); ++i) data()[i] += other.data()[i];
  }

  void fill_(double v) { std::fill(data(), data() + numel(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // 2D matrix view; for higher ranks the leading dims collapse into rows.
  EMap mat(int rows, int cols) {
    require_arg(int64_t(rows) * cols == numel(), "mat: view size mismatch");
    return EMap(data(), rows, cols);
  }
  ECMap mat(int rows, int cols) const {
    require_arg(int64_t(rows) * cols == numel(), "mat: view size mismatch");
    return ECMap(data(), rows, cols);
  }

  std::string shape_str() const;

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      require_arg(d >= 0, "negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> buf_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace mvi::nn
