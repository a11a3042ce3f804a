#pragma once

#include <string>
#include <vector>

#include "deskrl/policy.hpp"
#include "deskrl/taskbank.hpp"

namespace deskrl {

// One sampled trajectory. tokens include the eos when one was emitted;
// truncated responses hit the context length T without eos and score 0.
struct Response {
    TokenSeq tokens;
    std::vector<double> behavior_logps;
    bool truncated = false;
    int reward = 0;

    std::size_t length() const { return tokens.size(); }
};

struct Group {
    std::string problem_id;
    TokenSeq prompt;
    std::vector<Response> responses;
    std::vector<double> advantages;  // one scalar per response, set by credit
    bool zero_advantage = false;

    std::size_t size() const { return responses.size(); }
};

struct RolloutBatch {
    std::vector<Group> groups;
    std::string policy_snapshot_id;
    double tau = 1.0;
    int T = 0;
    double t_rollout_seconds = 0.0;
    double t_other_seconds = 0.0;
};

// Autoregressive sampling at temperature tau; stops at eos or after T tokens
// (then truncated). Behavior log-probs are recorded at sampling time and the
// reward is filled through the verifier.
Response sample_response(const PolicyParams& params, const Problem& problem, const Vocab& vocab,
                         double tau, int T, std::uint64_t seed);

// M responses with per-index derived seeds; advantages left unset.
Group sample_group(const PolicyParams& params, const Problem& problem, const Vocab& vocab, int M,
                   double tau, int T, std::uint64_t seed);

// One group per prompt. Deterministic given seed for any worker count: the
// per-response seed stream is split by (batch seed, prompt index, response
// index) and every response is written to its own slot.
RolloutBatch sample_batch(const PolicyParams& params, const std::vector<const Problem*>& problems,
                          const Vocab& vocab, int gs, double tau, int T, std::uint64_t seed,
                          int workers = 0);

// Mean over all generated tokens of the policy entropy at the sampling
// temperature on each token's prefix state.
double buffer_entropy(const RolloutBatch& batch, const PolicyParams& params, int workers = 0);

// Plain-loop reference implementation kept for testing the kernel above.
double buffer_entropy_serial(const RolloutBatch& batch, const PolicyParams& params);

void dump_batch(const RolloutBatch& batch, std::ostream& os);

}  // namespace deskrl
