#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deskrl/policy.hpp"

namespace deskrl {

enum class ProblemKind { math_like, code_like };

struct CodeTestCase {
    long long input = 0;
    long long expected = 0;
};

// Gold payload for code_like problems. The response fills the template hole
// ('?') with its decoded answer digits; `program` is the reference solution.
struct CodeGold {
    std::string program;
    std::string program_template;
    std::vector<CodeTestCase> tests;
};

enum class FlawKind { none, truncated_statement, duplicated_statement, missing_referent };

struct Problem {
    std::string id;
    ProblemKind kind = ProblemKind::math_like;
    TokenSeq prompt;
    std::string gold_expr;  // math_like: canonical expression string
    CodeGold code;          // code_like only
    std::string source_tag;
    FlawKind flaw = FlawKind::none;
};

struct ProblemBank {
    Vocab vocab;
    std::vector<Problem> problems;
    std::set<std::string> holdout_ids;

    const Problem* find(const std::string& id) const;
};

// Default token layout: ids 0..9 are the digits, then sep, then eos.
Vocab default_vocab(int size = 12);

constexpr const char* kSepMarker = " SEP ";

// Plain text of a token sequence (digits verbatim, sep as kSepMarker, eos dropped).
std::string decode_text(const Vocab& vocab, std::span<const TokenId> tokens);

// Decoded response with the answer segment (after the last sep) rendered in
// boxed form, the shape the answer extractor expects.
std::string decode_response_text(const Vocab& vocab, std::span<const TokenId> tokens);

// Digits of the answer segment only (after the last sep, before eos); nullopt
// when the response never emitted the separator.
std::optional<std::string> answer_span_digits(const Vocab& vocab, std::span<const TokenId> tokens);

struct BankSpec {
    std::vector<std::string> families;  // mod_sum | copy_k | const_digit | affine_code
    int count = 0;
    std::uint64_t seed = 0;
    // difficulty knobs
    int prompt_len_min = 2;
    int prompt_len_max = 6;
    int mod_base = 10;            // mod_sum answers live in [0, mod_base)
    int copy_k_max = 3;           // copy_k picks k in [1, copy_k_max]
    double hard_fraction = 0.0;   // fraction of mod_sum prompts longer than the feature window
    double holdout_fraction = 0.0;
    int vocab_size = 12;
};

BankSpec bank_spec_from_json_file(const std::string& path);

ProblemBank generate_bank(const BankSpec& spec);

// Marks a rate-fraction of problems with statement flaws (ground truth kept in
// Problem::flaw); golds are left untouched.
ProblemBank inject_flaws(const ProblemBank& bank, double rate, std::uint64_t seed);

void save_bank_file(const ProblemBank& bank, const std::string& path);
ProblemBank load_bank_file(const std::string& path);

}  // namespace deskrl
