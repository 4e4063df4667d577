// Copyright 2026 The MocDT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "mocdt/error.hpp"

namespace mocdt::diff {

/// Dense row-major array of rank 0, 1 or 2. Rank-1 arrays behave as a
/// single row wherever a matrix is expected.
template <class T>
class Array {
 public:
  using value_type = T;

  Array() = default;
  static Array scalar(T v) {
    Array a;
    a.rank_ = 0;
    a.rows_ = a.cols_ = 1;
    a.data_.assign(1, v);
    return a;
  }
  static Array vector(std::size_t n, T fill = T(0)) {
    Array a;
    a.rank_ = 1;
    a.rows_ = 1;
    a.cols_ = n;
    a.data_.assign(n, fill);
    return a;
  }
  static Array matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
    Array a;
    a.rank_ = 2;
    a.rows_ = rows;
    a.cols_ = cols;
    a.data_.assign(rows * cols, fill);
    return a;
  }
  static Array from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    Array a = matrix(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != a.cols_) throw ShapeError("from_rows: ragged rows");
      std::size_t c = 0;
      for (T v : row) a.data_[r * a.cols_ + c++] = v;
      ++r;
    }
    return a;
  }
  static Array from_vector(std::vector<T> values) {
    Array a;
    a.rank_ = 1;
    a.rows_ = 1;
    a.cols_ = values.size();
    a.data_ = std::move(values);
    return a;
  }
  /// Same shape as `like`, filled with `fill`.
  static Array like(const Array& like, T fill = T(0)) {
    Array a;
    a.rank_ = like.rank_;
    a.rows_ = like.rows_;
    a.cols_ = like.cols_;
    a.data_.assign(like.data_.size(), fill);
    return a;
  }

  std::size_t rank() const { return rank_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const {
    if (rank_ == 0) return {};
    if (rank_ == 1) return {cols_};
    return {rows_, cols_};
  }
  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    auto s = shape();
    for (std::size_t k = 0; k < s.size(); ++k) os << (k ? "," : "") << s[k];
    os << ']';
    return os.str();
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T* row(std::size_t r) { return data_.data() + r * cols_; }
  const T* row(std::size_t r) const { return data_.data() + r * cols_; }

  bool same_shape(const Array& o) const { return rank_ == o.rank_ && rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Array& o) const { return same_shape(o) && data_ == o.data_; }

 private:
  std::size_t rank_ = 2;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

}  // namespace mocdt::diff
