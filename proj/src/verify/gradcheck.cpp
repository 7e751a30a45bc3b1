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


#include "adgen/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace adgen {

GradCheckResult CheckGradients(const ScalarBuilder& build,
                               const std::vector<std::pair<std::string, Matrix*>>& params,
                               const GradCheckOptions& options) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    Var loss = build(tape);
    tape.Backward(loss);
    for (const auto& [name, m] : params) {
      const Matrix* g = tape.GradOf(*m);
      analytic.push_back(g ? *g : Matrix(m->rows(), m->cols()));
    }
  }
  auto eval = [&build]() {
    Tape tape(false);
    return build(tape).scalar();
  };

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& m = *params[p].second;
    const std::size_t n = m.size();
    std::size_t stride = 1;
    if (options.max_entries > 0 && n > options.max_entries) {
      stride = (n + options.max_entries - 1) / options.max_entries;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      double& x = m.data()[i];
      const double orig = x;
      x = orig + options.step;
      const double plus = eval();
      x = orig - options.step;
      const double minus = eval();
      x = orig;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[p].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.entries;
      if (!(err <= result.max_rel_error)) {
        result.max_rel_error = std::isnan(err) ? INFINITY : err;
        std::ostringstream os;
        os << params[p].first << "[" << i << "] analytic=" << a << " numeric=" << numeric;
        result.worst = os.str();
      }
    }
  }
  return result;
}

}  // namespace adgen
