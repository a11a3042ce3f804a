#include "deskrl/rollout.hpp"

#include <chrono>
#include <ostream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "deskrl/verifier.hpp"

namespace deskrl {

namespace {

TokenId sample_from_dist(std::span<const double> dist, double u) {
    double cdf = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        cdf += dist[i];
        if (u < cdf) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(dist.size() - 1);
}

Response generate_response(const PolicyParams& params, const Problem& problem, double tau, int T,
                           std::uint64_t seed) {
    if (T < 1) throw std::invalid_argument("context length must be at least 1");
    Rng rng(seed);
    Response r;
    r.tokens.reserve(static_cast<std::size_t>(T));
    std::vector<double> dist;
    r.truncated = true;
    for (int t = 0; t < T; ++t) {
        const StateContext state{problem.prompt, r.tokens};
        token_dist(params, state, tau, dist);
        const TokenId tok = sample_from_dist(dist, rng.next_double());
        r.behavior_logps.push_back(log_prob(params, state, tok, tau));
        r.tokens.push_back(tok);
        if (tok == params.vocab.eos) {
            r.truncated = false;
            break;
        }
    }
    return r;
}

}  // namespace

Response sample_response(const PolicyParams& params, const Problem& problem, const Vocab& vocab,
                         double tau, int T, std::uint64_t seed) {
    Response r = generate_response(params, problem, tau, T, seed);
    r.reward = reward(problem, vocab, r.tokens, r.truncated);
    return r;
}

Group sample_group(const PolicyParams& params, const Problem& problem, const Vocab& vocab, int M,
                   double tau, int T, std::uint64_t seed) {
    if (M < 2) throw std::invalid_argument("group size must be at least 2");
    Group g;
    g.problem_id = problem.id;
    g.prompt = problem.prompt;
    g.responses.resize(static_cast<std::size_t>(M));
    for (int j = 0; j < M; ++j)
        g.responses[static_cast<std::size_t>(j)] =
            sample_response(params, problem, vocab, tau, T, mix_seed(seed, static_cast<std::uint64_t>(j)));
    return g;
}

RolloutBatch sample_batch(const PolicyParams& params, const std::vector<const Problem*>& problems,
                          const Vocab& vocab, int gs, double tau, int T, std::uint64_t seed,
                          int workers) {
    if (problems.empty()) throw std::invalid_argument("empty prompt list");
    if (gs < 2) throw std::invalid_argument("group size must be at least 2");
    const auto t0 = std::chrono::steady_clock::now();

    RolloutBatch batch;
    batch.policy_snapshot_id = snapshot_id(params);
    batch.tau = tau;
    batch.T = T;
    batch.groups.resize(problems.size());
    for (std::size_t i = 0; i < problems.size(); ++i) {
        batch.groups[i].problem_id = problems[i]->id;
        batch.groups[i].prompt = problems[i]->prompt;
        batch.groups[i].responses.resize(static_cast<std::size_t>(gs));
    }

    const long long total = static_cast<long long>(problems.size()) * gs;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(workers > 0 ? workers : omp_get_max_threads())
#endif
    for (long long slot = 0; slot < total; ++slot) {
        const std::size_t i = static_cast<std::size_t>(slot / gs);
        const std::size_t j = static_cast<std::size_t>(slot % gs);
        const std::uint64_t rseed = mix_seed(mix_seed(seed, i), j);
        batch.groups[i].responses[j] = generate_response(params, *problems[i], tau, T, rseed);
    }
    const auto t1 = std::chrono::steady_clock::now();

    // reward scoring, tracked separately from generation time
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(workers > 0 ? workers : omp_get_max_threads())
#endif
    for (long long slot = 0; slot < total; ++slot) {
        const std::size_t i = static_cast<std::size_t>(slot / gs);
        const std::size_t j = static_cast<std::size_t>(slot % gs);
        Response& r = batch.groups[i].responses[j];
        r.reward = reward(*problems[i], vocab, r.tokens, r.truncated);
    }
    const auto t2 = std::chrono::steady_clock::now();

    batch.t_rollout_seconds = std::chrono::duration<double>(t1 - t0).count();
    batch.t_other_seconds = std::chrono::duration<double>(t2 - t1).count();
    return batch;
}

double buffer_entropy_serial(const RolloutBatch& batch, const PolicyParams& params) {
    double total = 0.0;
    long long tokens = 0;
    for (const auto& g : batch.groups) {
        for (const auto& r : g.responses) {
            for (std::size_t t = 0; t < r.tokens.size(); ++t) {
                const StateContext state{g.prompt, std::span<const TokenId>(r.tokens.data(), t)};
                total += entropy(params, state, batch.tau);
                ++tokens;
            }
        }
    }
    if (tokens == 0) throw std::invalid_argument("empty batch has no buffer entropy");
    return total / static_cast<double>(tokens);
}

double buffer_entropy(const RolloutBatch& batch, const PolicyParams& params, int workers) {
    // per-response partial sums, combined in index order
    std::vector<double> partial;
    std::vector<long long> counts;
    std::vector<const Group*> owner;
    std::vector<const Response*> resp;
    for (const auto& g : batch.groups) {
        for (const auto& r : g.responses) {
            owner.push_back(&g);
            resp.push_back(&r);
        }
    }
    partial.assign(resp.size(), 0.0);
    counts.assign(resp.size(), 0);
    const long long n = static_cast<long long>(resp.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(workers > 0 ? workers : omp_get_max_threads())
#endif
    for (long long k = 0; k < n; ++k) {
        const Group& g = *owner[static_cast<std::size_t>(k)];
        const Response& r = *resp[static_cast<std::size_t>(k)];
        double s = 0.0;
        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
            const StateContext state{g.prompt, std::span<const TokenId>(r.tokens.data(), t)};
            s += entropy(params, state, batch.tau);
        }
        partial[static_cast<std::size_t>(k)] = s;
        counts[static_cast<std::size_t>(k)] = static_cast<long long>(r.tokens.size());
    }
    long long tokens = 0;
    for (long long c : counts) tokens += c;
    if (tokens == 0) throw std::invalid_argument("empty batch has no buffer entropy");
    return pairwise_sum(partial) / static_cast<double>(tokens);
}

void dump_batch(const RolloutBatch& batch, std::ostream& os) {
    using nlohmann::json;
    json header;
    header["batch"] = {{"snapshot", batch.policy_snapshot_id},
                       {"tau", batch.tau},
                       {"T", batch.T},
                       {"groups", batch.groups.size()}};
    os << header.dump() << "\n";
    for (const auto& g : batch.groups) {
        json j;
        j["problem_id"] = g.problem_id;
        j["prompt"] = g.prompt;
        json rs = json::array();
        for (const auto& r : g.responses) {
            rs.push_back({{"tokens", r.tokens},
                          {"logps", r.behavior_logps},
                          {"truncated", r.truncated},
                          {"reward", r.reward}});
        }
        j["responses"] = rs;
        if (!g.advantages.empty()) j["advantages"] = g.advantages;
        os << j.dump() << "\n";
    }
}

}  // namespace deskrl
