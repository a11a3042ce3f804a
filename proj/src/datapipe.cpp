#include "deskrl/datapipe.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "deskrl/rollout.hpp"

namespace deskrl {

std::vector<DifficultyRecord> estimate_difficulty(const PolicyParams& params, const ProblemBank& bank,
                                                  const DifficultyOptions& opts) {
    if (opts.n_math < 1 || opts.n_code < 1) throw std::invalid_argument("rollout counts must be positive");
    std::vector<DifficultyRecord> records(bank.problems.size());
    std::vector<long long> offsets(bank.problems.size() + 1, 0);
    for (std::size_t p = 0; p < bank.problems.size(); ++p) {
        const int n = bank.problems[p].kind == ProblemKind::math_like ? opts.n_math : opts.n_code;
        offsets[p + 1] = offsets[p] + n;
    }
    const long long total = offsets.back();
    std::vector<int> hits(static_cast<std::size_t>(total), 0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(opts.workers > 0 ? opts.workers : omp_get_max_threads())
#endif
    for (long long slot = 0; slot < total; ++slot) {
        const std::size_t p = static_cast<std::size_t>(
            std::upper_bound(offsets.begin(), offsets.end(), slot) - offsets.begin() - 1);
        const long long i = slot - offsets[p];
        const Response r = sample_response(params, bank.problems[p], bank.vocab, opts.tau, opts.T,
                                           mix_seed(mix_seed(opts.seed, p), static_cast<std::uint64_t>(i)));
        hits[static_cast<std::size_t>(slot)] = r.reward;
    }
    for (std::size_t p = 0; p < bank.problems.size(); ++p) {
        records[p].problem_id = bank.problems[p].id;
        records[p].n_total = static_cast<int>(offsets[p + 1] - offsets[p]);
        int c = 0;
        for (long long s = offsets[p]; s < offsets[p + 1]; ++s) c += hits[static_cast<std::size_t>(s)];
        records[p].n_correct = c;
    }
    return records;
}

ProblemBank filter_by_difficulty(const std::vector<DifficultyRecord>& records, const ProblemBank& bank) {
    std::set<std::string> keep;
    for (const auto& r : records) {
        if (r.n_correct > 0 && r.n_correct < r.n_total) keep.insert(r.problem_id);
    }
    ProblemBank out;
    out.vocab = bank.vocab;
    for (const auto& p : bank.problems) {
        if (keep.count(p.id)) out.problems.push_back(p);
    }
    for (const auto& id : bank.holdout_ids)
        if (keep.count(id)) out.holdout_ids.insert(id);
    return out;
}

DifficultySummary summarize_difficulty(const std::vector<DifficultyRecord>& records) {
    DifficultySummary s;
    for (const auto& r : records) {
        if (r.n_correct == 0) ++s.all_incorrect;
        else if (r.n_correct == r.n_total) ++s.all_correct;
        else ++s.remaining;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Dedup / decontamination
// ---------------------------------------------------------------------------

namespace {

std::string normalized_text(const Vocab& vocab, const Problem& p) {
    std::string t = decode_text(vocab, p.prompt);
    std::string out;
    for (char c : t) {
        if (std::isspace(static_cast<unsigned char>(c))) continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::set<std::string> ngram_set(std::span<const TokenId> tokens, int n) {
    std::set<std::string> out;
    if (static_cast<int>(tokens.size()) < n) return out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        std::string key;
        for (int k = 0; k < n; ++k) key += std::to_string(tokens[i + static_cast<std::size_t>(k)]) + ",";
        out.insert(std::move(key));
    }
    return out;
}

struct DisjointSet {
    std::vector<std::size_t> parent;
    explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

}  // namespace

double ngram_jaccard(std::span<const TokenId> a, std::span<const TokenId> b, int ngram) {
    const auto sa = ngram_set(a, ngram);
    const auto sb = ngram_set(b, ngram);
    if (sa.empty() || sb.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& g : sa) inter += sb.count(g);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

ProblemBank dedup(const ProblemBank& bank, int ngram, double jaccard_threshold, int workers) {
    if (!(jaccard_threshold > 0.0) || jaccard_threshold > 1.0)
        throw std::invalid_argument("jaccard threshold must lie in (0, 1]");
    const std::size_t n = bank.problems.size();
    std::vector<std::string> norm(n);
    std::vector<std::set<std::string>> grams(n);
    for (std::size_t i = 0; i < n; ++i) {
        norm[i] = normalized_text(bank.vocab, bank.problems[i]);
        grams[i] = ngram_set(bank.problems[i].prompt, ngram);
    }

    // pairwise scan; merge edges gathered per pair slot so the result is
    // independent of the worker count
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    std::vector<char> merge(pairs.size(), 0);
    const long long np = static_cast<long long>(pairs.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(workers > 0 ? workers : omp_get_max_threads())
#endif
    for (long long k = 0; k < np; ++k) {
        const auto [i, j] = pairs[static_cast<std::size_t>(k)];
        bool same = norm[i] == norm[j];
        if (!same && !grams[i].empty() && !grams[j].empty()) {
            std::size_t inter = 0;
            for (const auto& g : grams[i]) inter += grams[j].count(g);
            const std::size_t uni = grams[i].size() + grams[j].size() - inter;
            same = static_cast<double>(inter) / static_cast<double>(uni) >= jaccard_threshold;
        }
        merge[static_cast<std::size_t>(k)] = same ? 1 : 0;
    }

    DisjointSet ds(n);
    for (std::size_t k = 0; k < pairs.size(); ++k)
        if (merge[k]) ds.unite(pairs[k].first, pairs[k].second);

    // survivor per component: lexicographically smallest id
    std::map<std::size_t, std::size_t> survivor;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t root = ds.find(i);
        auto it = survivor.find(root);
        if (it == survivor.end() || bank.problems[i].id < bank.problems[it->second].id) survivor[root] = i;
    }
    std::set<std::size_t> kept;
    for (const auto& [root, idx] : survivor) kept.insert(idx);

    ProblemBank out;
    out.vocab = bank.vocab;
    for (std::size_t i = 0; i < n; ++i)
        if (kept.count(i)) out.problems.push_back(bank.problems[i]);
    for (const auto& id : bank.holdout_ids)
        if (out.find(id)) out.holdout_ids.insert(id);
    return out;
}

ProblemBank decontaminate(const ProblemBank& bank, const ProblemBank& holdout, int ngram,
                          double jaccard_threshold) {
    ProblemBank out;
    out.vocab = bank.vocab;
    for (const auto& p : bank.problems) {
        const std::string pn = normalized_text(bank.vocab, p);
        bool contaminated = false;
        for (const auto& h : holdout.problems) {
            if (pn == normalized_text(holdout.vocab, h) ||
                ngram_jaccard(p.prompt, h.prompt, ngram) >= jaccard_threshold) {
                contaminated = true;
                break;
            }
        }
        if (!contaminated) out.problems.push_back(p);
    }
    for (const auto& id : bank.holdout_ids)
        if (out.find(id)) out.holdout_ids.insert(id);
    return out;
}

// ---------------------------------------------------------------------------
// Vote-based quality filtering
// ---------------------------------------------------------------------------

std::set<std::string> aggregate_votes(const std::vector<VoteRecord>& votes, int threshold) {
    std::set<std::string> kept;
    for (const auto& v : votes) {
        if (threshold > static_cast<int>(v.votes.size()))
            throw std::invalid_argument("vote threshold exceeds the vote count");
        int positive = 0;
        for (bool b : v.votes) positive += b ? 1 : 0;
        if (positive >= threshold) kept.insert(v.problem_id);
    }
    return kept;
}

Judge make_flaw_label_judge(double flip_prob) {
    return [flip_prob](const Problem& p, Rng& rng) {
        const bool clean = p.flaw == FlawKind::none;
        const bool flip = rng.next_double() < flip_prob;
        return flip ? !clean : clean;
    };
}

std::vector<VoteRecord> collect_votes(const ProblemBank& bank, const std::vector<Judge>& judges,
                                      int evals_per_judge, std::uint64_t seed) {
    std::vector<VoteRecord> out;
    out.reserve(bank.problems.size());
    for (std::size_t p = 0; p < bank.problems.size(); ++p) {
        VoteRecord rec;
        rec.problem_id = bank.problems[p].id;
        for (std::size_t j = 0; j < judges.size(); ++j) {
            for (int e = 0; e < evals_per_judge; ++e) {
                Rng rng(mix_seed(mix_seed(seed, p, j), static_cast<std::uint64_t>(e)));
                rec.votes.push_back(judges[j](bank.problems[p], rng));
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace deskrl
