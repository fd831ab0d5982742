#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace condisr {

/// Dense row-major tensor. 4-D tensors follow the NCHW convention.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<long> dims) : dims_(std::move(dims)) {
    data_.assign(static_cast<std::size_t>(numel_of(dims_)), T(0));
  }
  Tensor(std::initializer_list<long> dims) : Tensor(std::vector<long>(dims)) {}

  static Tensor full(std::vector<long> dims, T v) {
    Tensor t(std::move(dims));
    t.fill(v);
    return t;
  }

  long numel() const { return numel_of(dims_); }
  int ndim() const { return static_cast<int>(dims_.size()); }
  long dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  const std::vector<long>& dims() const { return dims_; }
  bool empty() const { return data_.empty(); }

  // NCHW helpers for 4-D tensors.
  long n() const { return dims_[0]; }
  long c() const { return dims_[1]; }
  long h() const { return dims_[2]; }
  long w() const { return dims_[3]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(long n, long c, long h, long w) {
    return data_[static_cast<std::size_t>(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
  }
  const T& at(long n, long c, long h, long w) const {
    return data_[static_cast<std::size_t>(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
  }
  T& at(long i, long j) { return data_[static_cast<std::size_t>(i * dims_[1] + j)]; }
  const T& at(long i, long j) const { return data_[static_cast<std::size_t>(i * dims_[1] + j)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(dims_);
    for (long i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

  Tensor reshaped(std::vector<long> dims) const {
    if (numel_of(dims) != numel()) throw std::runtime_error("reshape: element count mismatch");
    Tensor out = *this;
    out.dims_ = std::move(dims);
    return out;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

  static long numel_of(const std::vector<long>& dims) {
    long n = 1;
    for (long d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

 private:
  std::vector<long> dims_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace condisr
