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


#include <cmath>
#include <random>
#include <stdexcept>

#include "adgen/tensor.hpp"
#include "doctest.h"

using adgen::Matrix;

namespace {

Matrix NaiveMatMul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

Matrix Transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

void CheckClose(const Matrix& a, const Matrix& b, double tol) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= tol);
}

}  // namespace

TEST_CASE("matmul variants agree with the naive triple loop") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng() % 5, k = 1 + rng() % 5, m = 1 + rng() % 5;
    Matrix a = adgen::RandomUniform(n, k, 1.0, rng);
    Matrix b = adgen::RandomUniform(k, m, 1.0, rng);
    CheckClose(adgen::MatMul(a, b), NaiveMatMul(a, b), 1e-12);
    CheckClose(adgen::MatMulTransB(a, Transpose(b)), NaiveMatMul(a, b), 1e-12);
    CheckClose(adgen::MatMulTransA(Transpose(a), b), NaiveMatMul(a, b), 1e-12);
  }
  CHECK_THROWS_AS(adgen::MatMul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one and log-softmax stays finite") {
  std::mt19937_64 rng(5);
  Matrix logits = adgen::RandomUniform(20, 7, 50.0, rng);
  logits(0, 0) = 700.0;
  logits(1, 3) = -700.0;
  Matrix p = adgen::SoftmaxRows(logits);
  Matrix lp = adgen::LogSoftmaxRows(logits);
  CHECK(lp.AllFinite());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double v : p.row(r)) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("layer norm yields zero mean and unit variance rows") {
  std::mt19937_64 rng(8);
  Matrix x = adgen::RandomUniform(4, 6, 3.0, rng);
  Matrix y = adgen::LayerNorm(x, Matrix(1, 6, 1.0), Matrix(1, 6));
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(r)) mean += v;
    mean /= 6.0;
    for (double v : y.row(r)) var += (v - mean) * (v - mean);
    var /= 6.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("causal attention row i equals attention over the first i+1 keys") {
  std::mt19937_64 rng(9);
  Matrix q = adgen::RandomUniform(4, 3, 1.0, rng);
  Matrix k = adgen::RandomUniform(4, 3, 1.0, rng);
  Matrix v = adgen::RandomUniform(4, 3, 1.0, rng);
  Matrix causal = adgen::Attend(q, k, v, true);
  for (std::size_t i = 0; i < 4; ++i) {
    Matrix qi = adgen::SliceRows(q, i, 1);
    Matrix full = adgen::Attend(qi, adgen::SliceRows(k, 0, i + 1), adgen::SliceRows(v, 0, i + 1),
                                false);
    for (std::size_t c = 0; c < 3; ++c) CHECK(full(0, c) == causal(i, c));
  }
  // A single key attends only to itself.
  Matrix one = adgen::Attend(adgen::SliceRows(q, 0, 1), adgen::SliceRows(k, 0, 1),
                             adgen::SliceRows(v, 0, 1), true);
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(one(0, c) - v(0, c)) < 1e-15);
}

TEST_CASE("gelu derivative matches finite differences") {
  for (double x = -4.0; x <= 4.0; x += 0.37) {
    const double h = 1e-6;
    const double numeric = (adgen::Gelu(x + h) - adgen::Gelu(x - h)) / (2 * h);
    CHECK(std::abs(numeric - adgen::GeluDerivative(x)) < 1e-7);
  }
}

TEST_CASE("shape helpers") {
  Matrix a{{1, 2}, {3, 4}};
  Matrix b{{5}, {6}};
  Matrix c = adgen::ConcatCols(a, b);
  CHECK(c.cols() == 3);
  CHECK(c(1, 2) == 6);
  const Matrix* parts[] = {&a, &a};
  CHECK(adgen::StackRows(parts).rows() == 4);
  CHECK(adgen::SliceRows(a, 1, 1)(0, 0) == 3);
  CHECK_THROWS_AS(adgen::SliceRows(a, 1, 2), std::invalid_argument);
  Matrix nan_matrix(1, 1, std::nan(""));
  CHECK_FALSE(nan_matrix.AllFinite());
}
