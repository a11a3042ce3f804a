// Serial vs OpenMP comparison for the data-parallel kernels: batch rollout,
// loss evaluation, buffer entropy and the dedup pair scan.

#include <benchmark/benchmark.h>

#include "deskrl/credit.hpp"
#include "deskrl/datapipe.hpp"
#include "deskrl/losses.hpp"
#include "deskrl/rollout.hpp"
#include "deskrl/taskbank.hpp"

using namespace deskrl;

namespace {

struct Fixture {
    ProblemBank bank;
    PolicyParams params;
    std::vector<const Problem*> prompts;
    RolloutBatch batch;
    FilteredBatch filtered;

    Fixture() {
        BankSpec spec;
        spec.families = {"mod-sum", "copy-last"};
        spec.count = 64;
        spec.seed = 17;
        bank = generate_bank(spec);
        params = make_gaussian_policy(bank.vocab, FeatureSpec{3}, 0.3, 11);
        for (const auto& p : bank.problems) prompts.push_back(&p);
        batch = sample_batch(params, prompts, bank.vocab, 16, 1.0, 12, 5, 1);
        for (auto& g : batch.groups) apply_mask(g, MaskStrategy::no_adv_mask);
        filtered = reject_zero_advantage(batch);
        if (filtered.retained.empty()) {
            // keep the loss benchmarks meaningful even if rewards degenerate
            for (auto& g : batch.groups) {
                g.advantages.assign(g.responses.size(), 1.0);
                g.zero_advantage = false;
            }
            filtered = reject_zero_advantage(batch);
        }
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

void BM_sample_batch(benchmark::State& state) {
    auto& f = fixture();
    const int workers = static_cast<int>(state.range(0));
    for (auto _ : state) {
        RolloutBatch b = sample_batch(f.params, f.prompts, f.bank.vocab, 16, 1.0, 12, 5, workers);
        benchmark::DoNotOptimize(b.groups.size());
    }
}

void BM_magic_loss(benchmark::State& state) {
    auto& f = fixture();
    const int workers = static_cast<int>(state.range(0));
    LossConfig cfg;
    cfg.kind = LossKind::magic;
    for (auto _ : state) {
        LossReport r = magic_loss(f.filtered, f.params, cfg, nullptr, workers);
        benchmark::DoNotOptimize(r.value);
    }
}

void BM_buffer_entropy(benchmark::State& state) {
    auto& f = fixture();
    const int workers = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(buffer_entropy(f.batch, f.params, workers));
    }
}

void BM_buffer_entropy_serial_reference(benchmark::State& state) {
    auto& f = fixture();
    for (auto _ : state) {
        benchmark::DoNotOptimize(buffer_entropy_serial(f.batch, f.params));
    }
}

void BM_dedup_scan(benchmark::State& state) {
    auto& f = fixture();
    const int workers = static_cast<int>(state.range(0));
    for (auto _ : state) {
        ProblemBank out = dedup(f.bank, 5, 0.9, workers);
        benchmark::DoNotOptimize(out.problems.size());
    }
}

}  // namespace

BENCHMARK(BM_sample_batch)->Arg(1)->Arg(2)->Arg(8);
BENCHMARK(BM_magic_loss)->Arg(1)->Arg(2)->Arg(8);
BENCHMARK(BM_buffer_entropy)->Arg(1)->Arg(2)->Arg(8);
BENCHMARK(BM_buffer_entropy_serial_reference);
BENCHMARK(BM_dedup_scan)->Arg(1)->Arg(2)->Arg(8);

BENCHMARK_MAIN();
