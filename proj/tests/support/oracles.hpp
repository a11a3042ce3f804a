// Test-only oracles, independent of the library paths they check.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "deskrl/policy.hpp"
#include "deskrl/taskbank.hpp"

namespace deskrl::oracle {

// Central finite differences of a scalar function of theta, step 1e-5.
inline Matrix finite_diff(const PolicyParams& params, const std::function<double(const PolicyParams&)>& f,
                          double step = 1e-5) {
    Matrix g(params.theta.rows, params.theta.cols);
    PolicyParams work = params;
    for (std::size_t i = 0; i < work.theta.data.size(); ++i) {
        const double saved = work.theta.data[i];
        work.theta.data[i] = saved + step;
        const double up = f(work);
        work.theta.data[i] = saved - step;
        const double down = f(work);
        work.theta.data[i] = saved;
        g.data[i] = (up - down) / (2.0 * step);
    }
    return g;
}

inline double rel_err(const Matrix& a, const Matrix& b) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        diff += d * d;
        ref += b.data[i] * b.data[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-300);
}

// Exhaustive enumeration of every response the policy can emit within the
// context length T: eos-terminated sequences shorter than T plus the
// truncated length-T sequences. Probabilities are products of token_dist
// entries only.
struct EnumeratedResponse {
    TokenSeq tokens;
    double prob = 0.0;
    bool truncated = false;
};

inline void enumerate_rec(const PolicyParams& params, std::span<const TokenId> prompt, double tau, int T,
                          TokenSeq& prefix, double prob, std::vector<EnumeratedResponse>& out) {
    if (static_cast<int>(prefix.size()) == T) {
        out.push_back({prefix, prob, true});
        return;
    }
    std::vector<double> dist;
    token_dist(params, StateContext{prompt, prefix}, tau, dist);
    for (TokenId t = 0; t < params.vocab.size; ++t) {
        prefix.push_back(t);
        if (t == params.vocab.eos) {
            out.push_back({prefix, prob * dist[static_cast<std::size_t>(t)], false});
        } else {
            enumerate_rec(params, prompt, tau, T, prefix, prob * dist[static_cast<std::size_t>(t)], out);
        }
        prefix.pop_back();
    }
}

inline std::vector<EnumeratedResponse> enumerate_responses(const PolicyParams& params,
                                                           std::span<const TokenId> prompt, double tau,
                                                           int T) {
    std::vector<EnumeratedResponse> out;
    TokenSeq prefix;
    enumerate_rec(params, prompt, tau, T, prefix, 1.0, out);
    return out;
}

// Exact expected reward of one prompt by full enumeration.
inline double exact_success_probability(const PolicyParams& params, std::span<const TokenId> prompt,
                                        double tau, int T,
                                        const std::function<int(const TokenSeq&, bool)>& reward_fn) {
    double j = 0.0;
    for (const auto& r : enumerate_responses(params, prompt, tau, T)) {
        j += r.prob * reward_fn(r.tokens, r.truncated);
    }
    return j;
}

// Hand-built near-deterministic policy that solves every copy-last problem:
// after a digit it emits the separator, after the separator it repeats the
// digit two slots back, then stops. Needs a feature window of at least 2.
inline PolicyParams make_copy_last_solver(const Vocab& vocab, double strength = 20.0) {
    PolicyParams p = make_uniform_policy(vocab, FeatureSpec{3});
    const int V = vocab.size;
    for (TokenId d = 0; d <= 9 && d < V; ++d) {
        p.theta.at(0 * V + d, vocab.sep) = 4.0 * strength;  // digit just emitted -> separator
        p.theta.at(1 * V + d, d) = 2.0 * strength;          // digit one slot back -> copy it
    }
    p.theta.at(1 * V + vocab.sep, vocab.eos) = 8.0 * strength;  // answer emitted -> stop
    return p;
}

}  // namespace deskrl::oracle
