// Copyright 2026 The robustnd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

#include <cstdio>

#include "robustnd/testing/acceptance.hpp"

int main() {
  namespace t = robustnd::testing;
  const auto results = t::run_acceptance(t::AcceptanceSizes{}, [](const t::CriterionResult& r) {
    std::printf("%s\n", t::format_result(r).c_str());
    std::fflush(stdout);
  });
  std::size_t failed = 0;
  for (const auto& r : results) failed += !r.pass;
  std::printf("%zu/%zu criteria passed\n", results.size() - failed, results.size());
  return failed == 0 ? 0 : 1;
}
