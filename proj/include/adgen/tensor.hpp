// Copyright 2026 The adgen Authors.
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

#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace adgen {

// Dense row-major matrix of doubles.
//
// Every kernel below computes each output row from the matching input row(s)
// only, accumulating inner products in ascending index order. A one-row call
// therefore produces bit-identical results to the same row inside a batched
// call, which lets incremental beam decoding reproduce teacher-forced logits
// exactly.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix RowVector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void Fill(double value);
  // In-place this += other (same shape).
  void AddInPlace(const Matrix& other, double scale = 1.0);
  bool AllFinite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out = a * b, shapes (n x k) * (k x m).
Matrix MatMul(const Matrix& a, const Matrix& b);
// out = a * b^T, shapes (n x k) * (m x k)^T.
Matrix MatMulTransB(const Matrix& a, const Matrix& b);
// out = a^T * b, shapes (k x n)^T * (k x m).
Matrix MatMulTransA(const Matrix& a, const Matrix& b);

Matrix Add(const Matrix& a, const Matrix& b);
Matrix AddRowBroadcast(const Matrix& a, const Matrix& bias);
Matrix Hadamard(const Matrix& a, const Matrix& b);
Matrix ConcatCols(const Matrix& a, const Matrix& b);
Matrix SliceRows(const Matrix& a, std::size_t begin, std::size_t count);
Matrix StackRows(std::span<const Matrix* const> parts);

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise layer normalization with learned scale and offset (both 1 x d).
Matrix LayerNorm(const Matrix& x, const Matrix& gamma, const Matrix& beta);

// tanh approximation of GELU.
double Gelu(double x);
double GeluDerivative(double x);
Matrix Gelu(const Matrix& x);

// Numerically stable row-wise log-softmax and softmax.
Matrix LogSoftmaxRows(const Matrix& logits);
Matrix SoftmaxRows(const Matrix& logits);
void LogSoftmaxInPlace(std::span<double> row);

// Scaled dot-product attention of one query row over the first `n_keys` rows
// of `keys`/`values`. Writes the attention weights into `weights` (size
// n_keys) and the attended vector into `out`.
void AttendRow(std::span<const double> query, const Matrix& keys, const Matrix& values,
               std::size_t n_keys, std::span<double> weights, std::span<double> out);

// Attention for every query row. With `causal`, query i sees keys 0..i;
// otherwise every key.
Matrix Attend(const Matrix& queries, const Matrix& keys, const Matrix& values, bool causal);

// Centered uniform initialization with half-width `scale`.
Matrix RandomUniform(std::size_t rows, std::size_t cols, double scale, std::mt19937_64& rng);

double Dot(std::span<const double> a, std::span<const double> b);

}  // namespace adgen
