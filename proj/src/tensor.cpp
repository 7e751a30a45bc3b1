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

#include "adgen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace adgen {
namespace {

void RequireSameShape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::RowVector(std::span<const double> values) {
  Matrix m(1, values.size());
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

void Matrix::Fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Matrix::AddInPlace(const Matrix& other, double scale) {
  RequireSameShape(*this, other, "AddInPlace");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

bool Matrix::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix MatMul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("MatMul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix MatMulTransB(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("MatMulTransB: inner dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = Dot(a.row(i), b.row(j));
  }
  return out;
}

Matrix MatMulTransA(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("MatMulTransA: inner dimension mismatch");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      auto o = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix Add(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "Add");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

Matrix AddRowBroadcast(const Matrix& a, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw std::invalid_argument("AddRowBroadcast: bias must be 1 x cols");
  }
  Matrix out = a;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += bias(0, j);
  }
  return out;
}

Matrix Hadamard(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "Hadamard");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

Matrix ConcatCols(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("ConcatCols: row count mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), o.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), o.begin() + static_cast<long>(a.cols()));
  }
  return out;
}

Matrix SliceRows(const Matrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) throw std::invalid_argument("SliceRows: out of range");
  Matrix out(count, a.cols());
  for (std::size_t i = 0; i < count; ++i) {
    std::copy(a.row(begin + i).begin(), a.row(begin + i).end(), out.row(i).begin());
  }
  return out;
}

Matrix StackRows(std::span<const Matrix* const> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front()->cols();
  std::size_t rows = 0;
  for (const Matrix* p : parts) {
    if (p->cols() != cols) throw std::invalid_argument("StackRows: column mismatch");
    rows += p->rows();
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const Matrix* p : parts) {
    for (std::size_t i = 0; i < p->rows(); ++i, ++r) {
      std::copy(p->row(i).begin(), p->row(i).end(), out.row(r).begin());
    }
  }
  return out;
}

Matrix LayerNorm(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols()) {
    throw std::invalid_argument("LayerNorm: gamma/beta must be 1 x d");
  }
  const auto d = static_cast<double>(x.cols());
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= d;
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    auto o = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = (in[j] - mean) * inv_std * gamma(0, j) + beta(0, j);
    }
  }
  return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double Gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double GeluDerivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Matrix Gelu(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data()) v = Gelu(v);
  return out;
}

void LogSoftmaxInPlace(std::span<double> row) {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : row) v -= lse;
}

Matrix LogSoftmaxRows(const Matrix& logits) {
  Matrix out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) LogSoftmaxInPlace(out.row(i));
  return out;
}

Matrix SoftmaxRows(const Matrix& logits) {
  Matrix out = LogSoftmaxRows(logits);
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void AttendRow(std::span<const double> query, const Matrix& keys, const Matrix& values,
               std::size_t n_keys, std::span<double> weights, std::span<double> out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n_keys; ++j) {
    weights[j] = Dot(query, keys.row(j)) * scale;
    mx = std::max(mx, weights[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n_keys; ++j) {
    weights[j] = std::exp(weights[j] - mx);
    sum += weights[j];
  }
  for (std::size_t j = 0; j < n_keys; ++j) weights[j] /= sum;
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < n_keys; ++j) {
    auto v = values.row(j);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += weights[j] * v[c];
  }
}

Matrix Attend(const Matrix& queries, const Matrix& keys, const Matrix& values, bool causal) {
  if (queries.cols() != keys.cols() || keys.rows() != values.rows()) {
    throw std::invalid_argument("Attend: shape mismatch");
  }
  if (causal && keys.rows() < queries.rows()) {
    throw std::invalid_argument("Attend: causal attention needs a key per query");
  }
  Matrix out(queries.rows(), values.cols());
  std::vector<double> weights(keys.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const std::size_t n = causal ? i + 1 : keys.rows();
    AttendRow(queries.row(i), keys, values, n, weights, out.row(i));
  }
  return out;
}

Matrix RandomUniform(std::size_t rows, std::size_t cols, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Matrix out(rows, cols);
  for (double& v : out.data()) v = dist(rng);
  return out;
}

}  // namespace adgen
