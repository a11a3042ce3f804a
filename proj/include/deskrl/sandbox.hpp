#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "deskrl/taskbank.hpp"

namespace deskrl {

enum class SandboxDetail { all_tests_passed, syntax_error, budget_exceeded, wrong_output, runtime_error };

struct SandboxOutcome {
    bool passed = false;
    SandboxDetail detail = SandboxDetail::syntax_error;
};

const char* to_string(SandboxDetail d);

constexpr long long kDefaultStepBudget = 10000;

// True iff the program parses in the mini prefix language:
//   expr := integer | 'x' | '(' op expr+ ')'   with op in {+, -, *, pow}.
bool sandbox_check_syntax(std::string_view program);

// Runs every test case under a reduction-step budget. Failures are outcomes,
// never errors; with multiple failing tests the lowest-index one decides the
// detail, so the result is identical for any worker count.
// Throws std::invalid_argument when two tests share an input with different
// expected outputs (multiple valid outputs are unsupported by the schema).
SandboxOutcome sandbox_run(std::string_view program, const std::vector<CodeTestCase>& tests,
                           long long budget = kDefaultStepBudget, int workers = 0);

}  // namespace deskrl
