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


// The `adgen` command: gen-data, quantize, train, serve-sim, bench, verify.
//
// Configuration precedence, lowest first: built-in defaults, --config file,
// --set key=value, named flags, --seed/--out. Exit codes: 0 success,
// 1 validation failure (bad input, failed verification), 2 runtime failure.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "adgen/io.hpp"

namespace adgen::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// `args` excludes the program name.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Fills derived simulation fields from the run seed and validates.
void FinalizeRunConfig(RunConfig& config);

// Subcommands over a finalized config. Each returns an exit code and throws
// std::invalid_argument for bad inputs.
int GenData(const RunConfig& config, std::ostream& out);
int Quantize(const RunConfig& config, std::ostream& out);
int Train(const RunConfig& config, std::ostream& out);
int ServeSim(const RunConfig& config, std::ostream& out);
int Bench(const RunConfig& config, std::ostream& out);
int Verify(const RunConfig& config, bool full, std::ostream& out);

}  // namespace adgen::cli
