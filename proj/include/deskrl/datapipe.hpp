#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "deskrl/policy.hpp"
#include "deskrl/taskbank.hpp"

namespace deskrl {

struct DifficultyRecord {
    std::string problem_id;
    int n_correct = 0;
    int n_total = 0;

    double fraction() const { return n_total > 0 ? static_cast<double>(n_correct) / n_total : 0.0; }
};

struct DifficultyOptions {
    int n_math = 16;
    int n_code = 8;
    double tau = 1.0;
    int T = 8;
    std::uint64_t seed = 0;
    int workers = 0;
};

// Seeded rollouts per problem scored by the verifier; the correct fraction is
// the model-aware difficulty proxy. Deterministic given the seed.
std::vector<DifficultyRecord> estimate_difficulty(const PolicyParams& params, const ProblemBank& bank,
                                                  const DifficultyOptions& opts);

// Retains exactly the problems with 0 < n_correct < N.
ProblemBank filter_by_difficulty(const std::vector<DifficultyRecord>& records, const ProblemBank& bank);

struct DifficultySummary {
    int all_incorrect = 0;  // 0/N
    int all_correct = 0;    // N/N
    int remaining = 0;
};

DifficultySummary summarize_difficulty(const std::vector<DifficultyRecord>& records);

// Merges exact-normalized duplicates and pairs with token n-gram Jaccard
// similarity >= threshold; the lexicographically smallest id survives.
ProblemBank dedup(const ProblemBank& bank, int ngram = 5, double jaccard_threshold = 0.9, int workers = 0);

// Removes bank problems matching any holdout problem under the dedup rule.
ProblemBank decontaminate(const ProblemBank& bank, const ProblemBank& holdout, int ngram = 5,
                          double jaccard_threshold = 0.9);

// Jaccard similarity of token n-gram sets; 0 when either side has none.
double ngram_jaccard(std::span<const TokenId> a, std::span<const TokenId> b, int ngram);

struct VoteRecord {
    std::string problem_id;
    std::vector<bool> votes;
};

// Keep iff at least `threshold` positive votes.
std::set<std::string> aggregate_votes(const std::vector<VoteRecord>& votes, int threshold);

// Pluggable judge interface: one binary quality vote per call.
using Judge = std::function<bool(const Problem&, Rng&)>;

// Deterministic heuristic judge reading the bank's flaw labels, wrapped in
// seeded label noise with the given flip probability.
Judge make_flaw_label_judge(double flip_prob);

// Runs each judge `evals_per_judge` times per problem.
std::vector<VoteRecord> collect_votes(const ProblemBank& bank, const std::vector<Judge>& judges,
                                      int evals_per_judge, std::uint64_t seed);

}  // namespace deskrl
