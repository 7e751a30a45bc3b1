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


// Acceptance suite: one PASS/FAIL line per criterion, exit 1 on any failure.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "adgen/verify.hpp"

int main(int argc, char** argv) {
  CLI::App app{"adgen acceptance suite"};
  std::uint64_t seed = 0;
  std::string fault = "none";
  bool skip_learning = false;
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--inject-fault", fault, "none, rspo, gradient or topk");
  app.add_flag("--skip-learning", skip_learning, "Skip the online learning criterion");
  CLI11_PARSE(app, argc, argv);

  adgen::verify::SuiteOptions o;
  o.full = true;
  o.learning = !skip_learning;
  o.seed = seed;
  try {
    o.fault = adgen::verify::ParseFault(fault);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  int failed = 0, index = 0;
  for (const auto& r : adgen::verify::RunSuite(o)) {
    std::cout << "[" << ++index << "] " << adgen::verify::FormatResult(r) << std::endl;
    failed += r.pass ? 0 : 1;
  }
  std::cout << (failed ? "acceptance: FAIL (" + std::to_string(failed) + " criteria)" : "acceptance: PASS")
            << std::endl;
  return failed ? 1 : 0;
}
