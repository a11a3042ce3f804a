#include "deskrl/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "deskrl/verifier.hpp"

namespace deskrl {

using nlohmann::json;

void StageConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("stage steps must be nonnegative");
    if (T < 1) throw std::invalid_argument("context length must be at least 1");
    if (D_R < 1 || D_T < 1 || gs < 2 || N_reuse < 1) throw std::invalid_argument("invalid batch shape");
    if (D_R % D_T != 0) throw std::invalid_argument("mini-batch size must divide the rollout batch size");
    if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
    loss.validate();
}

Trainer::Trainer(TrainerConfig config, const ProblemBank& bank)
    : config_(std::move(config)),
      bank_(bank),
      shuffle_rng_(mix_seed(config_.seed, 0x5affULL)) {
    if (config_.stages.empty()) throw std::invalid_argument("no stages configured");
    for (const auto& s : config_.stages) s.validate();
    if (bank_.problems.empty()) throw std::invalid_argument("empty problem bank");

    FeatureSpec feat{config_.feature_window};
    if (config_.init_params) {
        params_ = *config_.init_params;
        if (params_.vocab.size != bank_.vocab.size)
            throw std::invalid_argument("warm-start parameters disagree with the bank vocabulary");
    } else if (config_.gaussian_init) {
        params_ = make_gaussian_policy(bank_.vocab, feat, config_.init_scale, mix_seed(config_.seed, 0x171aULL));
    } else {
        params_ = make_uniform_policy(bank_.vocab, feat);
    }
    ref_params_ = params_;  // the reference policy is the pre-training model
    controller_ = config_.controller;

    pool_.resize(bank_.problems.size());
    for (std::size_t i = 0; i < pool_.size(); ++i) pool_[i] = i;
    begin_stage(0);
}

const StageConfig& Trainer::current_stage() const { return config_.stages[stage_index_]; }

std::vector<std::size_t> apply_online_filter(
    const std::vector<std::size_t>& pool, const ProblemBank& bank,
    const std::map<std::string, std::pair<long long, long long>>& stage_stats) {
    std::vector<std::size_t> next_pool;
    for (std::size_t idx : pool) {
        const auto it = stage_stats.find(bank.problems[idx].id);
        const bool fully_solved =
            it != stage_stats.end() && it->second.second > 0 && it->second.first == it->second.second;
        if (!fully_solved) next_pool.push_back(idx);
    }
    return next_pool;
}

void Trainer::begin_stage(std::size_t stage_index) {
    stage_index_ = stage_index;
    step_in_stage_ = 0;
    if (stage_index > 0) {
        // online filtering: drop prompts the actor fully solved last stage
        pool_ = apply_online_filter(pool_, bank_, stage_stats_);
    }
    stage_stats_.clear();
    if (pool_.empty())
        throw std::runtime_error("eligible prompt pool is empty after online filtering at stage " +
                                 std::to_string(stage_index));
    order_ = pool_;
    shuffle_in_place(order_, shuffle_rng_);
    cursor_ = 0;
}

std::vector<const Problem*> Trainer::draw_prompts(int count) {
    const int want = std::min<int>(count, static_cast<int>(pool_.size()));
    std::vector<const Problem*> out;
    out.reserve(static_cast<std::size_t>(want));
    for (int i = 0; i < want; ++i) {
        if (cursor_ >= order_.size()) {
            shuffle_in_place(order_, shuffle_rng_);
            cursor_ = 0;
        }
        out.push_back(&bank_.problems[order_[cursor_]]);
        ++cursor_;
    }
    return out;
}

RunLogRecord Trainer::train_step() {
    const StageConfig& stage = config_.stages[stage_index_];
    RunLogRecord rec;
    rec.step = global_step_;
    rec.stage = static_cast<int>(stage_index_);

    // 1-2. sample D_R prompts without replacement, roll out one group each
    const std::vector<const Problem*> prompts = draw_prompts(stage.D_R);
    const std::uint64_t step_seed = mix_seed(config_.seed, static_cast<std::uint64_t>(global_step_));
    RolloutBatch batch =
        sample_batch(params_, prompts, bank_.vocab, stage.gs, stage.tau, stage.T, step_seed, config_.workers);
    rec.t_rollout = batch.t_rollout_seconds;

    const auto t_other_0 = std::chrono::steady_clock::now();

    // batch statistics and per-prompt correctness for online filtering
    long long n_total = 0, n_trunc = 0;
    long long reward_sum = 0, reward_sum_nontrunc = 0;
    for (const auto& g : batch.groups) {
        auto& st = stage_stats_[g.problem_id];
        for (const auto& r : g.responses) {
            ++n_total;
            reward_sum += r.reward;
            if (r.truncated) {
                ++n_trunc;
            } else {
                reward_sum_nontrunc += r.reward;
            }
            st.first += r.reward;
            ++st.second;
        }
    }
    rec.train_accuracy = static_cast<double>(reward_sum) / static_cast<double>(n_total);
    rec.truncation_ratio = static_cast<double>(n_trunc) / static_cast<double>(n_total);
    rec.accuracy_nontruncated =
        n_total == n_trunc ? 0.0
                           : static_cast<double>(reward_sum_nontrunc) / static_cast<double>(n_total - n_trunc);

    // controller input: entropy of the fresh rollout buffer
    rec.buffer_entropy = buffer_entropy(batch, params_, config_.workers);
    if (stage.controller_enabled) {
        auto [alpha, next] = step_controller(controller_, rec.buffer_entropy);
        rec.alpha = alpha;
        controller_ = next;
    } else {
        rec.alpha = stage.fixed_entropy_alpha;
    }
    rec.c = controller_.c;

    // divergence to the reference, measured on the full buffer at theta_k
    rec.kl_value = mean_k3_to_reference(batch, params_, ref_params_, config_.workers);

    // 3. advantages and rejection sampling
    for (auto& g : batch.groups) apply_mask(g, stage.mask);
    FilteredBatch filtered = reject_zero_advantage(batch);
    rec.dropped_zero_advantage = filtered.dropped_zero_advantage;
    rec.retained_groups = static_cast<int>(filtered.retained.size());

    const auto t_other_1 = std::chrono::steady_clock::now();
    rec.t_other = batch.t_other_seconds + std::chrono::duration<double>(t_other_1 - t_other_0).count();

    if (filtered.retained.empty()) {
        // zero-advantage-only batch: skip the update, parameters unchanged
        rec.skipped = true;
        finish_step(rec);
        return rec;
    }

    // 4. split retained prompts into D_R/D_T mini-batches, N_reuse passes
    const auto t_train_0 = std::chrono::steady_clock::now();
    const int n_mb = stage.D_R / stage.D_T;
    const std::size_t R = filtered.retained.size();
    std::vector<FilteredBatch> minibatches(static_cast<std::size_t>(n_mb));
    for (int m = 0; m < n_mb; ++m) {
        auto& mb = minibatches[static_cast<std::size_t>(m)];
        mb.tau = filtered.tau;
        mb.policy_snapshot_id = filtered.policy_snapshot_id;
        const std::size_t lo = R * static_cast<std::size_t>(m) / static_cast<std::size_t>(n_mb);
        const std::size_t hi = R * static_cast<std::size_t>(m + 1) / static_cast<std::size_t>(n_mb);
        for (std::size_t i = lo; i < hi; ++i) {
            mb.retained.push_back(filtered.retained[i]);
            for (const auto& r : filtered.retained[i].responses)
                mb.token_total += static_cast<long long>(r.tokens.size());
        }
    }

    LossConfig loss_cfg = stage.loss;
    loss_cfg.entropy_alpha = rec.alpha;

    double clip_sum = 0.0, ratio_sum = 0.0;
    int n_reports = 0;
    for (int pass = 0; pass < stage.N_reuse; ++pass) {
        for (int m = 0; m < n_mb; ++m) {
            const FilteredBatch& mb = minibatches[static_cast<std::size_t>(m)];
            if (mb.retained.empty()) {
                // fewer retained prompts than mini-batches; the scheduled SGD
                // step still runs, with the empty-set gradient of zero
                Matrix zero(params_.theta.rows, params_.theta.cols);
                params_ = sgd_step(params_, zero, stage.lr);
                ++rec.n_sgd_performed;
                continue;
            }
            LossReport report;
            switch (loss_cfg.kind) {
                case LossKind::pg:
                    report = pg_loss(mb, params_, config_.workers);
                    break;
                case LossKind::ppo:
                    report = ppo_loss(mb, params_, loss_cfg, config_.workers);
                    break;
                case LossKind::grpo:
                    report = grpo_loss(mb, params_, ref_params_, loss_cfg, config_.workers);
                    break;
                case LossKind::magic:
                    report = magic_loss(mb, params_, loss_cfg,
                                        loss_cfg.kl_beta > 0.0 ? &ref_params_ : nullptr, config_.workers);
                    break;
            }
            params_ = sgd_step(params_, report.grad, stage.lr);
            ++rec.n_sgd_performed;
            clip_sum += report.clip_fraction;
            ratio_sum += report.mean_ratio;
            ++n_reports;
        }
    }
    if (n_reports > 0) {
        rec.clip_fraction = clip_sum / n_reports;
        rec.mean_ratio = ratio_sum / n_reports;
    }
    const auto t_train_1 = std::chrono::steady_clock::now();
    rec.t_train = std::chrono::duration<double>(t_train_1 - t_train_0).count();

    finish_step(rec);
    return rec;
}

void Trainer::finish_step(const RunLogRecord&) {
    if (config_.checkpoint_every > 0 && !config_.out_dir.empty() &&
        (global_step_ + 1) % config_.checkpoint_every == 0) {
        std::filesystem::create_directories(config_.out_dir);
        save_params_file(params_, config_.out_dir + "/ckpt-" + std::to_string(global_step_ + 1) + ".txt");
    }
    ++global_step_;
    ++step_in_stage_;
}

std::vector<RunLogRecord> Trainer::run_stages(const std::function<void(const RunLogRecord&)>& on_step) {
    std::vector<RunLogRecord> records;
    for (std::size_t s = 0; s < config_.stages.size(); ++s) {
        if (s != stage_index_) begin_stage(s);
        const int steps = config_.stages[s].steps;
        for (int i = 0; i < steps; ++i) {
            RunLogRecord rec = train_step();
            if (on_step) on_step(rec);
            records.push_back(rec);
        }
    }
    return records;
}

AvgAtNResult evaluate_avg_at_n(const PolicyParams& params, const std::vector<const Problem*>& problems,
                               const Vocab& vocab, int n, double tau, int T, std::uint64_t seed,
                               int workers) {
    if (n < 1) throw std::invalid_argument("avg@n needs n >= 1");
    AvgAtNResult out;
    out.per_problem.assign(problems.size(), 0.0);
    const long long total = static_cast<long long>(problems.size()) * n;
    std::vector<int> hits(static_cast<std::size_t>(total), 0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(workers > 0 ? workers : omp_get_max_threads())
#endif
    for (long long slot = 0; slot < total; ++slot) {
        const std::size_t p = static_cast<std::size_t>(slot / n);
        const std::size_t i = static_cast<std::size_t>(slot % n);
        const Response r =
            sample_response(params, *problems[p], vocab, tau, T, mix_seed(mix_seed(seed, p), i));
        hits[static_cast<std::size_t>(slot)] = r.reward;
    }
    double grand = 0.0;
    for (std::size_t p = 0; p < problems.size(); ++p) {
        long long s = 0;
        for (int i = 0; i < n; ++i) s += hits[p * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
        out.per_problem[p] = static_cast<double>(s) / static_cast<double>(n);
        grand += out.per_problem[p];
    }
    out.mean = problems.empty() ? 0.0 : grand / static_cast<double>(problems.size());
    return out;
}

// ---------------------------------------------------------------------------
// Run log IO
// ---------------------------------------------------------------------------

namespace {

json record_to_json(const RunLogRecord& r) {
    json j;
    j["step"] = r.step;
    j["stage"] = r.stage;
    j["train_accuracy"] = r.train_accuracy;
    j["accuracy_nontruncated"] = r.accuracy_nontruncated;
    j["truncation_ratio"] = r.truncation_ratio;
    j["buffer_entropy"] = r.buffer_entropy;
    j["alpha"] = r.alpha;
    j["c"] = r.c;
    j["clip_fraction"] = r.clip_fraction;
    j["kl_value"] = r.kl_value;
    j["mean_ratio"] = r.mean_ratio;
    j["dropped_zero_advantage"] = r.dropped_zero_advantage;
    j["retained_groups"] = r.retained_groups;
    j["n_sgd_performed"] = r.n_sgd_performed;
    j["skipped"] = r.skipped;
    return j;
}

}  // namespace

void write_run_log(const std::vector<RunLogRecord>& records, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    for (const auto& r : records) f << record_to_json(r).dump() << "\n";
}

void write_timings(const std::vector<RunLogRecord>& records, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    for (const auto& r : records) {
        json j;
        j["step"] = r.step;
        j["t_R"] = r.t_rollout;
        j["t_T"] = r.t_train;
        j["t_O"] = r.t_other;
        j["t_total"] = r.t_rollout + r.t_train + r.t_other;
        f << j.dump() << "\n";
    }
}

std::vector<RunLogRecord> load_run_log(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<RunLogRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        RunLogRecord r;
        r.step = j.at("step").get<int>();
        r.stage = j.at("stage").get<int>();
        r.train_accuracy = j.at("train_accuracy").get<double>();
        r.accuracy_nontruncated = j.at("accuracy_nontruncated").get<double>();
        r.truncation_ratio = j.at("truncation_ratio").get<double>();
        r.buffer_entropy = j.at("buffer_entropy").get<double>();
        r.alpha = j.at("alpha").get<double>();
        r.c = j.at("c").get<double>();
        r.clip_fraction = j.at("clip_fraction").get<double>();
        r.kl_value = j.at("kl_value").get<double>();
        r.mean_ratio = j.at("mean_ratio").get<double>();
        r.dropped_zero_advantage = j.at("dropped_zero_advantage").get<int>();
        r.retained_groups = j.at("retained_groups").get<int>();
        r.n_sgd_performed = j.at("n_sgd_performed").get<int>();
        r.skipped = j.at("skipped").get<bool>();
        out.push_back(r);
    }
    return out;
}

}  // namespace deskrl
