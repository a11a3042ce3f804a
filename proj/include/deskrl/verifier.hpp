#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deskrl/taskbank.hpp"

namespace deskrl {

// ---------------------------------------------------------------------------
// Expression AST over integer/rational literals, variables, +, -, *, ^ with
// integer exponent, unary minus and parentheses.
// ---------------------------------------------------------------------------

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    enum class Kind { rational, var, add, mul, pow, neg };
    Kind kind = Kind::rational;
    long long num = 0;  // rational
    long long den = 1;  // rational, > 0 after canonicalization
    std::string name;   // var
    std::vector<ExprPtr> kids;
    int exponent = 0;  // pow, in [-8, 8]
};

std::optional<ExprPtr> parse_expr(std::string_view text);

// Normal form: rationals reduced, sums/products flattened with deterministic
// term ordering, numeric subexpressions folded. The printed form reparses to
// the same normal form (idempotence).
std::string canonical(const ExprPtr& expr);

// Convenience: parse-then-canonical; nullopt on parse failure.
std::optional<std::string> canonical_form(std::string_view text);

// ---------------------------------------------------------------------------
// Answer extraction & verification
// ---------------------------------------------------------------------------

enum class VerifyReason { string_match, semantic_match, mismatch, extraction_failed, parse_failed };

struct VerifyResult {
    bool correct = false;
    VerifyReason reason = VerifyReason::mismatch;
};

const char* to_string(VerifyReason r);

// Content of the last well-bracketed \boxed{...} appearing after the decoded
// separator marker; nullopt when absent or unbalanced.
std::optional<std::string> extract_answer(std::string_view response_text);

// Same boxed scan without requiring the separator marker.
std::optional<std::string> extract_boxed(std::string_view text);

// Four-step check: extract, canonical string compare, then boxed-wrapped gold
// re-extraction and semantic equality over 16 seeded rational assignments.
// Throws std::invalid_argument when the gold itself does not parse.
VerifyResult verify_answer(std::string_view candidate, std::string_view gold);

// Binary accuracy reward; truncated responses score 0 unconditionally.
int reward(const Problem& problem, const Vocab& vocab, std::span<const TokenId> tokens, bool truncated);

}  // namespace deskrl
