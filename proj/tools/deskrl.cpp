// deskrl: desk-scale experiment harness for group-relative policy optimization
// on synthetic verifiable tasks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deskrl/datapipe.hpp"
#include "deskrl/presets.hpp"
#include "deskrl/sandbox.hpp"
#include "deskrl/verifier.hpp"

namespace fs = std::filesystem;
using namespace deskrl;

namespace {

std::uint64_t default_seed() {
    if (const char* env = std::getenv("DESKRL_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return 1;
}

std::vector<const Problem*> problem_ptrs(const ProblemBank& bank) {
    std::vector<const Problem*> out;
    out.reserve(bank.problems.size());
    for (const auto& p : bank.problems) out.push_back(&p);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deskrl: a desk-scale lab for group-relative policy optimization on verifiable tasks"};
    app.require_subcommand(1);
    std::uint64_t seed = default_seed();
    app.add_option("--seed", seed, "run seed (env DESKRL_SEED supplies the default)");

    // --- train ---------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "run the multi-stage training loop");
    std::string train_config, train_bank, train_out = "runs/train";
    int train_workers = 0;
    train_cmd->add_option("--config", train_config, "trainer config JSON");
    train_cmd->add_option("--bank", train_bank, "problem bank file")->required();
    train_cmd->add_option("--out", train_out, "output directory");
    train_cmd->add_option("--workers", train_workers, "worker threads (0 = all)");

    // --- ablate --------------------------------------------------------
    auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation preset");
    std::string ablate_preset, ablate_bank, ablate_out = "runs/ablate", ablate_config;
    ablate_cmd->add_option("preset", ablate_preset, "preset name")->required();
    ablate_cmd->add_option("--bank", ablate_bank, "problem bank file")->required();
    ablate_cmd->add_option("--config", ablate_config, "base trainer config JSON");
    ablate_cmd->add_option("--out", ablate_out, "output directory");

    // --- evaluate ------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("evaluate", "avg@n evaluation of a checkpoint");
    std::string eval_ckpt, eval_bank;
    int eval_n = 8, eval_T = 8;
    double eval_tau = 1.0;
    bool eval_holdout_only = false;
    eval_cmd->add_option("--ckpt", eval_ckpt, "policy checkpoint")->required();
    eval_cmd->add_option("--bank", eval_bank, "problem bank file")->required();
    eval_cmd->add_option("--n", eval_n, "rollouts per problem");
    eval_cmd->add_option("--tau", eval_tau, "sampling temperature");
    eval_cmd->add_option("--T", eval_T, "context length");
    eval_cmd->add_flag("--holdout-only", eval_holdout_only, "restrict to the bank's holdout ids");

    // --- difficulty ----------------------------------------------------
    auto* diff_cmd = app.add_subcommand("difficulty", "model-aware difficulty estimation and filtering");
    std::string diff_bank, diff_ckpt, diff_out;
    int diff_n = 16, diff_n_code = 8, diff_T = 8;
    double diff_tau = 1.0;
    diff_cmd->add_option("--bank", diff_bank, "problem bank file")->required();
    diff_cmd->add_option("--ckpt", diff_ckpt, "policy checkpoint (default: uniform policy)");
    diff_cmd->add_option("--n", diff_n, "rollouts per math problem");
    diff_cmd->add_option("--n-code", diff_n_code, "rollouts per code problem");
    diff_cmd->add_option("--tau", diff_tau, "sampling temperature");
    diff_cmd->add_option("--T", diff_T, "context length");
    diff_cmd->add_option("--out", diff_out, "write the filtered bank here");

    // --- dedup ---------------------------------------------------------
    auto* dedup_cmd = app.add_subcommand("dedup", "near-duplicate removal inside a bank");
    std::string dedup_bank, dedup_out;
    int dedup_ngram = 5;
    double dedup_threshold = 0.9;
    dedup_cmd->add_option("--bank", dedup_bank, "problem bank file")->required();
    dedup_cmd->add_option("--ngram", dedup_ngram, "token n-gram size");
    dedup_cmd->add_option("--threshold", dedup_threshold, "jaccard merge threshold");
    dedup_cmd->add_option("--out", dedup_out, "write the deduplicated bank here");

    // --- decontaminate ---------------------------------------------------
    auto* decon_cmd = app.add_subcommand("decontaminate", "remove bank problems near a holdout set");
    std::string decon_bank, decon_holdout, decon_out;
    int decon_ngram = 5;
    double decon_threshold = 0.9;
    decon_cmd->add_option("--bank", decon_bank, "problem bank file")->required();
    decon_cmd->add_option("--holdout", decon_holdout, "holdout bank file")->required();
    decon_cmd->add_option("--ngram", decon_ngram, "token n-gram size");
    decon_cmd->add_option("--threshold", decon_threshold, "jaccard threshold");
    decon_cmd->add_option("--out", decon_out, "write the cleaned bank here");

    // --- verify ----------------------------------------------------------
    auto* verify_cmd = app.add_subcommand("verify", "check a candidate answer against a gold expression");
    std::string verify_gold, verify_candidate;
    verify_cmd->add_option("--gold", verify_gold, "gold expression")->required();
    verify_cmd->add_option("--candidate", verify_candidate, "candidate text or expression")->required();

    // --- sandbox-run -----------------------------------------------------
    auto* sbx_cmd = app.add_subcommand("sandbox-run", "run a mini-language program against test cases");
    std::string sbx_program, sbx_tests;
    long long sbx_budget = kDefaultStepBudget;
    int sbx_workers = 0;
    sbx_cmd->add_option("--program", sbx_program, "program file")->required();
    sbx_cmd->add_option("--tests", sbx_tests, "JSONL test file with input/expected fields")->required();
    sbx_cmd->add_option("--budget", sbx_budget, "reduction step budget");
    sbx_cmd->add_option("--workers", sbx_workers, "worker threads (0 = all)");

    // --- taskbank --------------------------------------------------------
    auto* taskbank_cmd = app.add_subcommand("taskbank", "problem bank tools");
    auto* gen_cmd = taskbank_cmd->add_subcommand("generate", "generate a bank from a spec file");
    std::string gen_spec, gen_out;
    double gen_flaw_rate = 0.0;
    gen_cmd->add_option("--spec", gen_spec, "bank spec JSON")->required();
    gen_cmd->add_option("--out", gen_out, "output bank file")->required();
    gen_cmd->add_option("--flaw-rate", gen_flaw_rate, "inject statement flaws at this rate");

    // --- report ----------------------------------------------------------
    auto* report_cmd = app.add_subcommand("report", "merge run logs into CSV and a comparison table");
    std::vector<std::string> report_dirs;
    std::string report_csv = "report.csv";
    double report_threshold = 0.3;
    report_cmd->add_option("dirs", report_dirs, "run directories containing run.jsonl")->required();
    report_cmd->add_option("--out", report_csv, "merged CSV path");
    report_cmd->add_option("--entropy-threshold", report_threshold, "steps-to-entropy-below threshold");

    // --- rollout ---------------------------------------------------------
    auto* rollout_cmd = app.add_subcommand("rollout", "rollout inspection tools");
    auto* dump_cmd = rollout_cmd->add_subcommand("dump", "sample a batch and dump it as JSONL");
    std::string dump_bank, dump_ckpt;
    int dump_gs = 4, dump_T = 8, dump_count = 4;
    double dump_tau = 1.0;
    dump_cmd->add_option("--bank", dump_bank, "problem bank file")->required();
    dump_cmd->add_option("--ckpt", dump_ckpt, "policy checkpoint (default: uniform policy)");
    dump_cmd->add_option("--gs", dump_gs, "group size");
    dump_cmd->add_option("--T", dump_T, "context length");
    dump_cmd->add_option("--tau", dump_tau, "sampling temperature");
    dump_cmd->add_option("--prompts", dump_count, "number of prompts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage errors exit 2
    }

    try {
        if (*train_cmd) {
            TrainerConfig cfg =
                train_config.empty() ? default_base_config() : trainer_config_from_json_file(train_config);
            cfg.seed = seed;
            cfg.workers = train_workers;
            cfg.out_dir = train_out;
            const ProblemBank bank = load_bank_file(train_bank);
            fs::create_directories(train_out);
            Trainer trainer(cfg, bank);
            std::vector<RunLogRecord> records = trainer.run_stages();
            write_run_log(records, train_out + "/run.jsonl");
            write_timings(records, train_out + "/timings.jsonl");
            write_run_csv(records, train_out + "/run.csv");
            save_params_file(trainer.params(), train_out + "/final.txt");
            std::cout << "trained " << records.size() << " steps; final accuracy "
                      << (records.empty() ? 0.0 : records.back().train_accuracy) << "; logs in "
                      << train_out << "\n";
        } else if (*ablate_cmd) {
            TrainerConfig base =
                ablate_config.empty() ? default_base_config() : trainer_config_from_json_file(ablate_config);
            const ProblemBank bank = load_bank_file(ablate_bank);
            AblationPreset preset = make_preset(ablate_preset, base);
            run_preset(preset, bank, ablate_out, &std::cout);
            std::cout << "preset " << preset.name << " complete; outputs in " << ablate_out << "\n";
        } else if (*eval_cmd) {
            const ProblemBank bank = load_bank_file(eval_bank);
            const PolicyParams params = load_params_file(eval_ckpt);
            std::vector<const Problem*> problems;
            for (const auto& p : bank.problems) {
                if (!eval_holdout_only || bank.holdout_ids.count(p.id)) problems.push_back(&p);
            }
            const AvgAtNResult res =
                evaluate_avg_at_n(params, problems, bank.vocab, eval_n, eval_tau, eval_T, seed);
            for (std::size_t i = 0; i < problems.size(); ++i)
                std::cout << problems[i]->id << " " << res.per_problem[i] << "\n";
            std::cout << "avg@" << eval_n << " " << res.mean << "\n";
        } else if (*diff_cmd) {
            const ProblemBank bank = load_bank_file(diff_bank);
            const PolicyParams params = diff_ckpt.empty() ? make_uniform_policy(bank.vocab)
                                                          : load_params_file(diff_ckpt);
            DifficultyOptions opts;
            opts.n_math = diff_n;
            opts.n_code = diff_n_code;
            opts.tau = diff_tau;
            opts.T = diff_T;
            opts.seed = seed;
            const auto records = estimate_difficulty(params, bank, opts);
            for (const auto& r : records)
                std::cout << r.problem_id << " " << r.n_correct << "/" << r.n_total << "\n";
            const DifficultySummary s = summarize_difficulty(records);
            const double n = static_cast<double>(records.size());
            std::cout << "0/N correct: " << 100.0 * s.all_incorrect / n << "%  N/N correct: "
                      << 100.0 * s.all_correct / n << "%  remaining: " << 100.0 * s.remaining / n
                      << "%\n";
            if (!diff_out.empty()) {
                save_bank_file(filter_by_difficulty(records, bank), diff_out);
                std::cout << "filtered bank written to " << diff_out << "\n";
            }
        } else if (*dedup_cmd) {
            const ProblemBank bank = load_bank_file(dedup_bank);
            const ProblemBank cleaned = dedup(bank, dedup_ngram, dedup_threshold);
            std::cout << bank.problems.size() - cleaned.problems.size() << " duplicates merged, "
                      << cleaned.problems.size() << " problems kept\n";
            if (!dedup_out.empty()) save_bank_file(cleaned, dedup_out);
        } else if (*decon_cmd) {
            const ProblemBank bank = load_bank_file(decon_bank);
            const ProblemBank holdout = load_bank_file(decon_holdout);
            const ProblemBank cleaned = decontaminate(bank, holdout, decon_ngram, decon_threshold);
            std::cout << bank.problems.size() - cleaned.problems.size() << " contaminated problems removed, "
                      << cleaned.problems.size() << " kept\n";
            if (!decon_out.empty()) save_bank_file(cleaned, decon_out);
        } else if (*verify_cmd) {
            const VerifyResult res = verify_answer(verify_candidate, verify_gold);
            std::cout << (res.correct ? "correct" : "incorrect") << " (" << to_string(res.reason) << ")\n";
            return res.correct ? 0 : 1;
        } else if (*sbx_cmd) {
            std::ifstream pf(sbx_program);
            if (!pf) throw std::invalid_argument("cannot open program file: " + sbx_program);
            std::string program((std::istreambuf_iterator<char>(pf)), std::istreambuf_iterator<char>());
            while (!program.empty() && (program.back() == '\n' || program.back() == '\r')) program.pop_back();
            std::ifstream tf(sbx_tests);
            if (!tf) throw std::invalid_argument("cannot open tests file: " + sbx_tests);
            std::vector<CodeTestCase> tests;
            std::string line;
            while (std::getline(tf, line)) {
                if (line.empty()) continue;
                const auto j = nlohmann::json::parse(line);
                tests.push_back({j.at("input").get<long long>(), j.at("expected").get<long long>()});
            }
            const SandboxOutcome out = sandbox_run(program, tests, sbx_budget, sbx_workers);
            std::cout << (out.passed ? "passed" : "failed") << " (" << to_string(out.detail) << ")\n";
            return out.passed ? 0 : 1;
        } else if (*gen_cmd) {
            BankSpec spec = bank_spec_from_json_file(gen_spec);
            ProblemBank bank = generate_bank(spec);
            if (gen_flaw_rate > 0.0) bank = inject_flaws(bank, gen_flaw_rate, mix_seed(spec.seed, 0xf1a3ULL));
            save_bank_file(bank, gen_out);
            std::cout << "bank with " << bank.problems.size() << " problems written to " << gen_out << "\n";
        } else if (*report_cmd) {
            report(report_dirs, report_csv, report_threshold, std::cout);
            std::cout << "merged CSV written to " << report_csv << "\n";
        } else if (*dump_cmd) {
            const ProblemBank bank = load_bank_file(dump_bank);
            const PolicyParams params = dump_ckpt.empty() ? make_uniform_policy(bank.vocab)
                                                          : load_params_file(dump_ckpt);
            std::vector<const Problem*> problems = problem_ptrs(bank);
            if (static_cast<int>(problems.size()) > dump_count) problems.resize(static_cast<std::size_t>(dump_count));
            const RolloutBatch batch =
                sample_batch(params, problems, bank.vocab, dump_gs, dump_tau, dump_T, seed);
            dump_batch(batch, std::cout);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
