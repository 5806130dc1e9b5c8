#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "surge/errors.hpp"

namespace surge {

using Shape = std::vector<std::int64_t>;

namespace detail {

// Recycles equally-sized buffers across training steps; large activation
// tensors otherwise bounce through mmap and page-zeroing every batch.
// Thread-local, so pooled buffers never cross threads.
class BufferPool {
public:
  static BufferPool& instance() {
    thread_local BufferPool pool;
    return pool;
  }

  std::shared_ptr<std::vector<double>> acquire(std::size_t n) {
    auto& bucket = free_[n];
    std::vector<double>* raw;
    if (!bucket.empty()) {
      raw = bucket.back().release();
      bucket.pop_back();
      held_bytes_ -= n * sizeof(double);
    } else {
      raw = new std::vector<double>(n);
    }
    return std::shared_ptr<std::vector<double>>(raw, [](std::vector<double>* v) {
      BufferPool::instance().release(v);
    });
  }

  void release(std::vector<double>* v) {
    const std::size_t bytes = v->size() * sizeof(double);
    if (held_bytes_ + bytes > kMaxHeldBytes) {
      delete v;
      return;
    }
    held_bytes_ += bytes;
    free_[v->size()].emplace_back(v);
  }

private:
  static constexpr std::size_t kMaxHeldBytes = 1'500'000'000;
  std::unordered_map<std::size_t, std::vector<std::unique_ptr<std::vector<double>>>> free_;
  std::size_t held_bytes_ = 0;
};

}  // namespace detail

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

inline void check_shape_valid(const Shape& s) {
  for (auto e : s) {
    if (e < 1) throw dimension_error("invalid extent in shape " + shape_str(s));
  }
}

// Dense row-major real tensor. Treated as an immutable value once built:
// copies share the underlying buffer, forward operations always allocate
// fresh outputs. A rank-0 tensor is a scalar.
class Tensor {
public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(data))) {
    check_shape_valid(shape_);
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_->size())) {
      throw dimension_error("tensor data length " + std::to_string(data_->size()) +
                            " does not match shape " + shape_str(shape_));
    }
  }

  // Pooled buffer with unspecified contents; caller must write every element.
  static Tensor uninitialized(Shape shape) {
    check_shape_valid(shape);
    auto n = shape_numel(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = detail::BufferPool::instance().acquire(static_cast<std::size_t>(n));
    return t;
  }

  static Tensor zeros(Shape shape) {
    Tensor t = uninitialized(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), 0.0);
    return t;
  }

  static Tensor full(Shape shape, double v) {
    Tensor t = uninitialized(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  std::int64_t extent(std::int64_t axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  const double* data() const { return data_->data(); }
  const std::vector<double>& vec() const { return *data_; }

  // Only for filling freshly built tensors; never applied to shared values.
  double* mutable_data() { return data_->data(); }

  double scalar_value() const {
    if (numel() != 1) throw contract_error("scalar_value on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  double at(std::initializer_list<std::int64_t> idx) const {
    return (*data_)[flat_index(idx)];
  }

  // Same buffer, new shape.
  Tensor reshaped(Shape new_shape) const {
    check_shape_valid(new_shape);
    if (shape_numel(new_shape) != numel()) {
      throw dimension_error("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                            ": element count mismatch");
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    for (double v : *data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_buffer(const Tensor& other) const { return data_ == other.data_; }

private:
  std::size_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<std::int64_t>(idx.size()) != rank()) {
      throw dimension_error("index rank mismatch for shape " + shape_str(shape_));
    }
    std::size_t flat = 0;
    std::size_t d = 0;
    for (auto i : idx) {
      flat = flat * static_cast<std::size_t>(shape_[d]) + static_cast<std::size_t>(i);
      ++d;
    }
    return flat;
  }

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

// b broadcasts onto a when b's shape is a trailing suffix of a's
// (covers scalars and per-feature bias vectors).
inline bool suffix_broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  }
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) {
    throw dimension_error("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace surge
