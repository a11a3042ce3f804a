#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "deskrl/rollout.hpp"
#include "deskrl/verifier.hpp"
#include "support/oracles.hpp"

using namespace deskrl;

namespace {

ProblemBank small_bank() {
    BankSpec spec;
    spec.families = {"mod-sum", "copy-last"};
    spec.count = 8;
    spec.seed = 21;
    spec.prompt_len_min = 2;
    spec.prompt_len_max = 3;
    return generate_bank(spec);
}

std::string batch_dump(const RolloutBatch& b) {
    std::ostringstream ss;
    dump_batch(b, ss);
    return ss.str();
}

}  // namespace

TEST_CASE("a policy forced one-hot on eos emits a single token") {
    const ProblemBank bank = small_bank();
    PolicyParams p = make_uniform_policy(bank.vocab);
    p.theta.at(p.feat.window * bank.vocab.size, bank.vocab.eos) = 60.0;  // bias slams eos
    const Response r = sample_response(p, bank.problems[0], bank.vocab, 1.0, 8, 3);
    CHECK(r.tokens.size() == 1);
    CHECK(r.tokens[0] == bank.vocab.eos);
    CHECK(!r.truncated);
    CHECK(r.behavior_logps.size() == 1);
}

TEST_CASE("same seed gives identical responses and groups") {
    const ProblemBank bank = small_bank();
    const PolicyParams p = make_gaussian_policy(bank.vocab, FeatureSpec{3}, 0.2, 9);
    const Response a = sample_response(p, bank.problems[1], bank.vocab, 1.0, 8, 77);
    const Response b = sample_response(p, bank.problems[1], bank.vocab, 1.0, 8, 77);
    CHECK(a.tokens == b.tokens);
    CHECK(a.behavior_logps == b.behavior_logps);
    CHECK(a.reward == b.reward);

    const Group g1 = sample_group(p, bank.problems[2], bank.vocab, 4, 1.0, 8, 5);
    const Group g2 = sample_group(p, bank.problems[2], bank.vocab, 4, 1.0, 8, 5);
    REQUIRE(g1.responses.size() == 4);
    for (std::size_t j = 0; j < 4; ++j) CHECK(g1.responses[j].tokens == g2.responses[j].tokens);
    CHECK_THROWS_AS(sample_group(p, bank.problems[2], bank.vocab, 1, 1.0, 8, 5), std::invalid_argument);
}

TEST_CASE("truncation frequency at T=1 matches the exact eos probability") {
    const ProblemBank bank = small_bank();
    const PolicyParams p = make_gaussian_policy(bank.vocab, FeatureSpec{3}, 0.4, 123);
    const Problem& prob = bank.problems[0];
    std::vector<double> dist;
    token_dist(p, StateContext{prob.prompt, {}}, 1.0, dist);
    const double p_eos = dist[static_cast<std::size_t>(bank.vocab.eos)];
    int truncated = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        if (sample_response(p, prob, bank.vocab, 1.0, 1, static_cast<std::uint64_t>(i)).truncated)
            ++truncated;
    }
    CHECK(std::fabs(static_cast<double>(truncated) / n - (1.0 - p_eos)) < 0.02);
}

TEST_CASE("behavior log-probs equal log_prob recomputed from the snapshot") {
    const ProblemBank bank = small_bank();
    const PolicyParams p = make_gaussian_policy(bank.vocab, FeatureSpec{3}, 0.5, 31);
    const Group g = sample_group(p, bank.problems[3], bank.vocab, 6, 0.8, 10, 99);
    for (const auto& r : g.responses) {
        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
            const StateContext s{g.prompt, std::span<const TokenId>(r.tokens.data(), t)};
            CHECK(std::fabs(r.behavior_logps[t] - log_prob(p, s, r.tokens[t], 0.8)) < 1e-12);
        }
    }
}

TEST_CASE("truncated responses always carry zero reward") {
    const ProblemBank bank = small_bank();
    const PolicyParams p = make_uniform_policy(bank.vocab);
    std::vector<const Problem*> prompts;
    for (const auto& pr : bank.problems) prompts.push_back(&pr);
    const RolloutBatch batch = sample_batch(p, prompts, bank.vocab, 8, 1.0, 4, 2025);
    int seen_truncated = 0;
    for (const auto& g : batch.groups) {
        for (const auto& r : g.responses) {
            CHECK(r.truncated == (r.tokens.size() == 4 && r.tokens.back() != bank.vocab.eos));
            if (r.truncated) {
                ++seen_truncated;
                CHECK(r.reward == 0);
            }
        }
    }
    CHECK(seen_truncated > 0);  // T=4 under a uniform policy truncates often
}

TEST_CASE("sample_batch is bit-identical across worker counts") {
    const ProblemBank bank = small_bank();
    const PolicyParams p = make_gaussian_policy(bank.vocab, FeatureSpec{3}, 0.3, 8);
    std::vector<const Problem*> prompts;
    for (const auto& pr : bank.problems) prompts.push_back(&pr);
    const RolloutBatch w1 = sample_batch(p, prompts, bank.vocab, 6, 1.0, 8, 4242, 1);
    const RolloutBatch w2 = sample_batch(p, prompts, bank.vocab, 6, 1.0, 8, 4242, 2);
    const RolloutBatch w8 = sample_batch(p, prompts, bank.vocab, 6, 1.0, 8, 4242, 8);
    CHECK(batch_dump(w1) == batch_dump(w2));
    CHECK(batch_dump(w1) == batch_dump(w8));
    CHECK(w1.groups.size() == prompts.size());
    CHECK_THROWS_AS(sample_batch(p, {}, bank.vocab, 6, 1.0, 8, 1), std::invalid_argument);
}

TEST_CASE("buffer entropy: uniform policy yields ln V exactly") {
    const ProblemBank bank = small_bank();
    const PolicyParams p = make_uniform_policy(bank.vocab);
    std::vector<const Problem*> prompts{&bank.problems[0], &bank.problems[1]};
    const RolloutBatch batch = sample_batch(p, prompts, bank.vocab, 4, 1.0, 6, 7);
    CHECK(buffer_entropy(batch, p) == doctest::Approx(std::log(12.0)).epsilon(1e-12));
}

TEST_CASE("buffer entropy: near-deterministic policy is near zero") {
    const ProblemBank bank = small_bank();
    PolicyParams p = make_uniform_policy(bank.vocab);
    p.theta.at(p.feat.window * bank.vocab.size, bank.vocab.eos) = 40.0;
    std::vector<const Problem*> prompts{&bank.problems[0]};
    const RolloutBatch batch = sample_batch(p, prompts, bank.vocab, 4, 1.0, 6, 7);
    CHECK(buffer_entropy(batch, p) < 0.01);
}

TEST_CASE("buffer entropy kernel agrees with the serial reference recomputation") {
    const ProblemBank bank = small_bank();
    const PolicyParams p = make_gaussian_policy(bank.vocab, FeatureSpec{3}, 0.6, 17);
    std::vector<const Problem*> prompts;
    for (const auto& pr : bank.problems) prompts.push_back(&pr);
    const RolloutBatch batch = sample_batch(p, prompts, bank.vocab, 6, 0.9, 8, 99);
    const double serial = buffer_entropy_serial(batch, p);
    for (int workers : {1, 2, 8}) {
        CHECK(std::fabs(buffer_entropy(batch, p, workers) - serial) < 1e-12);
    }
    RolloutBatch empty;
    CHECK_THROWS_AS(buffer_entropy(empty, p), std::invalid_argument);
}
