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


// Central finite-difference gradient oracle for tape-built scalar functions.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adgen/autodiff.hpp"

namespace adgen {

// Builds the scalar on the given tape. Parameters under test must enter the
// tape through Tape::Param so the analytic gradient can be looked up.
using ScalarBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Upper bound on entries probed per tensor (strided); 0 = all.
  std::size_t max_entries = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::string worst;  // "name[index] analytic=... numeric=..."
};

// Compares the tape gradient of `build` w.r.t. every tensor in `params`
// (which `build` must reference by address) against central differences.
GradCheckResult CheckGradients(const ScalarBuilder& build,
                               const std::vector<std::pair<std::string, Matrix*>>& params,
                               const GradCheckOptions& options = {});

}  // namespace adgen
