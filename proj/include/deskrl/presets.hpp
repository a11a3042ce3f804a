#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "deskrl/trainer.hpp"

namespace deskrl {

// One fully materialized configuration of an ablation study (seed unset; the
// runner stamps each listed seed in turn).
struct ArmSpec {
    std::string name;
    TrainerConfig config;
};

struct AblationPreset {
    std::string name;
    std::vector<ArmSpec> arms;
    std::vector<std::uint64_t> seeds;
};

std::vector<std::string> preset_names();

// Materializes a named preset on top of the base configuration. Throws
// std::invalid_argument for unknown names.
AblationPreset make_preset(const std::string& name, const TrainerConfig& base);

// Desk-scale defaults of the single-stage baseline configuration.
TrainerConfig default_base_config();

TrainerConfig trainer_config_from_json_file(const std::string& path);
void write_trainer_config(const TrainerConfig& config, const std::string& path);

// Runs every arm for every seed, each fully deterministic: writes
// <out_dir>/<arm>/seed-<s>/run.jsonl (+ timings.jsonl), a per-arm trajectory
// CSV and an across-seed summary with end-of-run means and standard errors.
void run_preset(const AblationPreset& preset, const ProblemBank& bank, const std::string& out_dir,
                std::ostream* progress = nullptr);

// Per-step CSV with the columns (step, entropy, accuracy, truncation_ratio,
// clip_fraction, alpha, c).
void write_run_csv(const std::vector<RunLogRecord>& records, const std::string& path);

struct RunComparisonRow {
    std::string run;
    double final_accuracy = 0.0;
    long long steps_to_entropy_below = -1;  // -1 when never below the threshold
    double mean_clip_fraction = 0.0;
};

// Merges run logs from the given directories (each holding run.jsonl) into one
// CSV plus a comparison table. Missing or corrupt logs raise with the file
// name in the message.
std::vector<RunComparisonRow> report(const std::vector<std::string>& run_dirs, const std::string& out_csv,
                                     double entropy_threshold, std::ostream& table);

}  // namespace deskrl
