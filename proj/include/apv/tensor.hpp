#pragma once

#include <cstdint>
#include <vector>

#include "apv/errors.hpp"

namespace apv {

using real = double;

// Dense row-major tensor. Most of the library works with 2-D tensors
// [rows, features]; convolution ops interpret the feature axis as C*H*W.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), real(0));
  }

  static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<long> shape, real v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(real v) {
    Tensor t({1, 1});
    t.data_[0] = v;
    return t;
  }

  static Tensor from(std::vector<long> shape, std::vector<real> data) {
    Tensor t;
    if (count(shape) != static_cast<long>(data.size()))
      throw ShapeError("tensor data does not match shape");
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const std::vector<long>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  long dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  long size() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }

  real& at(long i) { return data_[static_cast<std::size_t>(i)]; }
  real at(long i) const { return data_[static_cast<std::size_t>(i)]; }

  // 2-D accessors.
  long rows() const { return shape_.empty() ? 0 : shape_[0]; }
  long cols() const { return size() == 0 || rows() == 0 ? 0 : size() / rows(); }
  real& operator()(long r, long c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  real operator()(long r, long c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<long> s) const {
    if (count(s) != size()) throw ShapeError("reshape size mismatch");
    Tensor t;
    t.shape_ = std::move(s);
    t.data_ = data_;
    return t;
  }

  void fill(real v) {
    for (auto& x : data_) x = v;
  }

  static long count(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<long> shape_;
  std::vector<real> data_;
};

}  // namespace apv
