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


// Property checks shared by the `verify` subcommand and the acceptance
// binary. Every check compares library output against an independent oracle
// and reports one pass/fail line.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adgen::verify {

// Deliberate corruptions used to prove that a check can fail.
enum class Fault {
  kNone,
  kRspo,      // RSPO terms scaled by 1/4
  kGradient,  // analytic gradients scaled by 3/2
  kTopk,      // pre-cut keeps only half of each beam's top-k
};

Fault ParseFault(const std::string& text);  // "", "none", "rspo", "gradient", "topk"

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// Formats "PASS name: detail (1.23 s)".
std::string FormatResult(const CheckResult& r);

CheckResult CheckRspoBound(std::size_t lists, std::uint64_t seed, Fault fault = Fault::kNone);
CheckResult CheckRspoChain(std::size_t lists, std::uint64_t seed, Fault fault = Fault::kNone);
CheckResult CheckGradients(std::size_t configs, std::uint64_t seed, Fault fault = Fault::kNone);
CheckResult CheckTopkExactness(std::size_t instances, std::uint64_t seed,
                               Fault fault = Fault::kNone);
CheckResult CheckBeamInvariance(std::size_t models, std::uint64_t seed);
CheckResult CheckLazyAr(std::size_t models, std::uint64_t seed);
CheckResult CheckQuantizer(std::size_t fittings, std::size_t fixture_seeds, std::uint64_t seed);
CheckResult CheckExhaustiveSandwich(std::size_t models, std::uint64_t seed);
CheckResult CheckEcpmBuckets(std::size_t sets, std::uint64_t seed);
CheckResult CheckTabsAndCache(std::size_t streams, std::uint64_t seed);
CheckResult CheckLearningSanity(std::size_t seeds, std::size_t ticks, std::size_t required);

struct SuiteOptions {
  bool full = false;  // acceptance-scale sample sizes
  bool learning = false;
  std::uint64_t seed = 0;
  Fault fault = Fault::kNone;
};

std::vector<CheckResult> RunSuite(const SuiteOptions& options);

}  // namespace adgen::verify
