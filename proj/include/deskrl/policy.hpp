#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "deskrl/common.hpp"

namespace deskrl {

// Token alphabet. eos ends a response, sep separates reasoning from answer.
struct Vocab {
    int size = 0;
    TokenId eos = -1;
    TokenId sep = -1;

    bool valid() const { return size > 0 && eos != sep && eos >= 0 && sep >= 0 && eos < size && sep < size; }
};

// Fixed feature map: concatenated one-hots of the last `window` context tokens
// (slots left empty for short contexts) plus a constant bias feature.
struct FeatureSpec {
    int window = 3;

    int feature_dim(const Vocab& vocab) const { return window * vocab.size + 1; }
};

// Linear-softmax autoregressive policy, theta[feature_dim x vocab.size].
struct PolicyParams {
    Vocab vocab;
    FeatureSpec feat;
    Matrix theta;

    PolicyParams() = default;
    PolicyParams(Vocab v, FeatureSpec f) : vocab(v), feat(f), theta(f.feature_dim(v), v.size) {}
};

PolicyParams make_uniform_policy(Vocab vocab, FeatureSpec feat = {});
PolicyParams make_gaussian_policy(Vocab vocab, FeatureSpec feat, double scale, std::uint64_t seed);

// Prefix context when generating the next token: the prompt followed by the
// tokens generated so far.
struct StateContext {
    std::span<const TokenId> prompt;
    std::span<const TokenId> prefix;
};

// Row indices of theta active for a state: one row per filled window slot,
// plus the bias row (always last). Slot w holds the w-th most recent token.
void active_rows(const PolicyParams& params, const StateContext& state, std::vector<int>& out);

void logits(const PolicyParams& params, const StateContext& state, std::vector<double>& out);

// softmax(logits / tau); throws std::invalid_argument unless tau > 0.
void token_dist(const PolicyParams& params, const StateContext& state, double tau, std::vector<double>& out);

double log_prob(const PolicyParams& params, const StateContext& state, TokenId token, double tau);

// Shannon entropy of token_dist, in nats; 0 <= H <= ln(vocab.size).
double entropy(const PolicyParams& params, const StateContext& state, double tau);

double entropy_of_dist(std::span<const double> p);

// d log pi(token|state) / d theta = (1/tau) * phi(state) (x) (e_token - p).
void grad_log_prob(const PolicyParams& params, const StateContext& state, TokenId token, double tau, Matrix& out);

// d H(pi(.|state)) / d theta; zero in every coordinate at the uniform policy.
void grad_entropy(const PolicyParams& params, const StateContext& state, double tau, Matrix& out);

// Sparse accumulation helpers used by the loss kernels: add
// scale * grad_log_prob (resp. grad_entropy) into acc without materializing
// the full matrix. `probs` must be token_dist at the same tau.
void accumulate_grad_log_prob(const PolicyParams& params, std::span<const int> rows,
                              std::span<const double> probs, TokenId token, double tau,
                              double scale, Matrix& acc);
void accumulate_grad_entropy(const PolicyParams& params, std::span<const int> rows,
                             std::span<const double> probs, double tau, double scale, Matrix& acc);

// Versioned text checkpoint format: header lines then row-major values with
// round-trip-exact formatting.
void save_params(const PolicyParams& params, std::ostream& os);
PolicyParams load_params(std::istream& is);
void save_params_file(const PolicyParams& params, const std::string& path);
PolicyParams load_params_file(const std::string& path);

std::string snapshot_id(const PolicyParams& params);

}  // namespace deskrl
