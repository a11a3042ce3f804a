#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deskrl/credit.hpp"
#include "deskrl/entctl.hpp"
#include "deskrl/losses.hpp"
#include "deskrl/rollout.hpp"
#include "deskrl/taskbank.hpp"

namespace deskrl {

struct StageConfig {
    int steps = 300;
    int T = 8;             // context length
    int D_R = 64;          // rollout batch size (prompts per step)
    int D_T = 64;          // mini-batch size (prompts per SGD step)
    int gs = 16;           // group size
    int N_reuse = 1;       // buffer traversal count
    double tau = 1.0;
    double lr = 0.05;
    LossConfig loss;
    bool controller_enabled = true;
    double fixed_entropy_alpha = 0.0;  // constant alpha when the controller is off
    MaskStrategy mask = MaskStrategy::no_adv_mask;

    int n_sgd() const { return (D_R / D_T) * N_reuse; }
    void validate() const;
};

struct TrainerConfig {
    std::vector<StageConfig> stages;
    ControllerState controller;  // initial state (c starts at 0)
    std::uint64_t seed = 1;
    bool gaussian_init = false;
    double init_scale = 0.1;
    int feature_window = 3;
    std::optional<PolicyParams> init_params;  // warm start; overrides the init knobs
    int checkpoint_every = 0;  // 0 disables checkpoint files
    std::string out_dir;       // checkpoints land here when enabled
    int workers = 0;
};

struct RunLogRecord {
    int step = 0;
    int stage = 0;
    double train_accuracy = 0.0;         // mean reward over every response in the batch
    double accuracy_nontruncated = 0.0;  // mean reward over non-truncated responses
    double truncation_ratio = 0.0;
    double buffer_entropy = 0.0;  // e_k at the sampling temperature
    double alpha = 0.0;           // alpha_k used by this step's loss
    double c = 0.0;               // controller coefficient after the step
    double clip_fraction = 0.0;   // mean over this step's loss evaluations
    double kl_value = 0.0;        // mean k3 to the reference on the fresh buffer
    double mean_ratio = 0.0;
    int dropped_zero_advantage = 0;
    int retained_groups = 0;
    int n_sgd_performed = 0;
    bool skipped = false;
    double t_rollout = 0.0;  // wall times; informational only, kept out of the
    double t_train = 0.0;    // deterministic run log
    double t_other = 0.0;
};

class Trainer {
public:
    Trainer(TrainerConfig config, const ProblemBank& bank);

    // One full pipeline step: rollout, credit, rejection, mini-batch
    // decomposition with N_reuse passes, one controller step, one log record.
    RunLogRecord train_step();

    // Executes the stage schedule; at each stage boundary prompts solved at a
    // correctness rate of 1 in the previous stage leave the eligible pool.
    std::vector<RunLogRecord> run_stages(const std::function<void(const RunLogRecord&)>& on_step = {});

    const PolicyParams& params() const { return params_; }
    const PolicyParams& ref_params() const { return ref_params_; }
    const ControllerState& controller() const { return controller_; }
    int global_step() const { return global_step_; }
    std::size_t eligible_pool_size() const { return pool_.size(); }
    const StageConfig& current_stage() const;

private:
    void begin_stage(std::size_t stage_index);
    void finish_step(const RunLogRecord& rec);
    std::vector<const Problem*> draw_prompts(int count);

    TrainerConfig config_;
    ProblemBank bank_;
    PolicyParams params_;
    PolicyParams ref_params_;  // stage-0 initial parameters
    ControllerState controller_;
    std::size_t stage_index_ = 0;
    int step_in_stage_ = 0;
    int global_step_ = 0;
    std::vector<std::size_t> pool_;  // eligible problem indices
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    Rng shuffle_rng_;
    // per-stage correctness stats for online filtering
    std::map<std::string, std::pair<long long, long long>> stage_stats_;  // id -> (correct, total)
};

// Online filtering rule applied at stage boundaries: a prompt leaves the pool
// exactly when every response it received over the previous stage was correct
// (correctness rate 1 over at least one encounter).
std::vector<std::size_t> apply_online_filter(
    const std::vector<std::size_t>& pool, const ProblemBank& bank,
    const std::map<std::string, std::pair<long long, long long>>& stage_stats);

// avg@n: mean over n independent rollouts per problem of the verifier score.
struct AvgAtNResult {
    std::vector<double> per_problem;
    double mean = 0.0;
};

AvgAtNResult evaluate_avg_at_n(const PolicyParams& params, const std::vector<const Problem*>& problems,
                               const Vocab& vocab, int n, double tau, int T, std::uint64_t seed,
                               int workers = 0);

// Deterministic fields only; wall times go in the separate timing writer.
void write_run_log(const std::vector<RunLogRecord>& records, const std::string& path);
void write_timings(const std::vector<RunLogRecord>& records, const std::string& path);
std::vector<RunLogRecord> load_run_log(const std::string& path);

}  // namespace deskrl
