#include "deskrl/presets.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace deskrl {

namespace fs = std::filesystem;
using nlohmann::json;

TrainerConfig default_base_config() {
    TrainerConfig cfg;
    StageConfig stage;
    stage.steps = 300;
    stage.T = 8;
    stage.D_R = 64;
    stage.D_T = 64;
    stage.gs = 16;
    stage.N_reuse = 1;
    stage.tau = 1.0;
    stage.lr = 0.05;
    stage.loss.kind = LossKind::magic;
    stage.loss.eps_low = 0.2;
    stage.loss.eps_high = 0.2;
    stage.loss.kl_beta = 0.0;
    stage.controller_enabled = false;
    stage.mask = MaskStrategy::no_adv_mask;
    cfg.stages.push_back(stage);
    cfg.controller = ControllerState{};
    cfg.seed = 1;
    return cfg;
}

std::vector<std::string> preset_names() {
    return {"nsgd_grid",       "onpolicy_vs_offpolicy", "temperature_06_vs_10",
            "entropy_coeff_grid", "adaptive_entropy_onoff", "clip_higher_grid",
            "kl_onoff",        "mask_strategies",        "batch_size_grid",
            "group_size_grid", "multistage_vs_scratch"};
}

namespace {

StageConfig& stage0(TrainerConfig& cfg) { return cfg.stages.front(); }

void set_quadruple(TrainerConfig& cfg, int d_r, int d_t, int n_reuse) {
    stage0(cfg).D_R = d_r;
    stage0(cfg).D_T = d_t;
    stage0(cfg).N_reuse = n_reuse;
}

ArmSpec arm(std::string name, TrainerConfig cfg) { return {std::move(name), std::move(cfg)}; }

}  // namespace

AblationPreset make_preset(const std::string& name, const TrainerConfig& base) {
    AblationPreset preset;
    preset.name = name;
    preset.seeds = {1, 2, 3, 4, 5};

    if (name == "nsgd_grid") {
        // quadruples (N_SGD, D_R, D_T, N_reuse)
        const int quads[][3] = {{64, 64, 1}, {64, 32, 1}, {64, 64, 2}, {64, 16, 1}, {64, 64, 4}};
        for (const auto& q : quads) {
            TrainerConfig cfg = base;
            set_quadruple(cfg, q[0], q[1], q[2]);
            const int nsgd = (q[0] / q[1]) * q[2];
            preset.arms.push_back(arm("nsgd" + std::to_string(nsgd) + "-" + std::to_string(q[0]) + "-" +
                                          std::to_string(q[1]) + "-" + std::to_string(q[2]),
                                      cfg));
        }
    } else if (name == "onpolicy_vs_offpolicy") {
        const int quads[][3] = {{64, 32, 1}, {64, 16, 1}, {32, 32, 1}, {16, 16, 1}};
        for (const auto& q : quads) {
            TrainerConfig cfg = base;
            set_quadruple(cfg, q[0], q[1], q[2]);
            const int nsgd = (q[0] / q[1]) * q[2];
            const char* tag = nsgd == 1 ? "on" : "off";
            preset.arms.push_back(arm(std::string(tag) + "-policy-" + std::to_string(q[0]) + "-" +
                                          std::to_string(q[1]),
                                      cfg));
        }
    } else if (name == "temperature_06_vs_10") {
        for (double tau : {0.6, 1.0}) {
            TrainerConfig cfg = base;
            cfg.gaussian_init = true;  // non-uniform logits so temperature shapes initial entropy
            stage0(cfg).tau = tau;
            stage0(cfg).D_T = stage0(cfg).D_R / 2;
            stage0(cfg).controller_enabled = true;
            std::ostringstream n;
            n << "tau-" << std::fixed << std::setprecision(1) << tau;
            preset.arms.push_back(arm(n.str(), cfg));
        }
    } else if (name == "entropy_coeff_grid") {
        for (double alpha : {1e-4, 5e-4, 1e-3, 5e-3, 1e-2}) {
            TrainerConfig cfg = base;
            stage0(cfg).D_T = stage0(cfg).D_R / 2;
            stage0(cfg).controller_enabled = false;
            stage0(cfg).fixed_entropy_alpha = alpha;
            std::ostringstream n;
            n << "alpha-" << std::scientific << std::setprecision(0) << alpha;
            preset.arms.push_back(arm(n.str(), cfg));
        }
    } else if (name == "adaptive_entropy_onoff") {
        for (bool on : {true, false}) {
            TrainerConfig cfg = base;
            set_quadruple(cfg, 64, 16, 1);  // the fast-collapsing N_SGD = 4 configuration
            stage0(cfg).controller_enabled = on;
            cfg.controller.tgt_ent = 0.2;
            preset.arms.push_back(arm(on ? "controller-on" : "controller-off", cfg));
        }
    } else if (name == "clip_higher_grid") {
        for (double hi : {0.20, 0.25, 0.265, 0.28}) {
            TrainerConfig cfg = base;
            set_quadruple(cfg, 64, 16, 1);
            stage0(cfg).loss.eps_low = 0.2;
            stage0(cfg).loss.eps_high = hi;
            std::ostringstream n;
            n << "clip-high-" << std::setprecision(3) << hi;
            preset.arms.push_back(arm(n.str(), cfg));
        }
    } else if (name == "kl_onoff") {
        for (double beta : {1e-3, 0.0}) {
            TrainerConfig cfg = base;
            set_quadruple(cfg, 64, 32, 1);
            stage0(cfg).controller_enabled = true;
            stage0(cfg).loss.kl_beta = beta;
            preset.arms.push_back(arm(beta > 0.0 ? "kl-on" : "kl-off", cfg));
        }
    } else if (name == "mask_strategies") {
        for (MaskStrategy m :
             {MaskStrategy::no_adv_mask, MaskStrategy::adv_mask_before, MaskStrategy::adv_mask_after}) {
            TrainerConfig cfg = base;
            stage0(cfg).D_T = stage0(cfg).D_R / 2;
            stage0(cfg).controller_enabled = true;
            stage0(cfg).mask = m;
            preset.arms.push_back(arm(to_string(m), cfg));
        }
    } else if (name == "batch_size_grid") {
        for (int dr : {16, 32, 64}) {
            TrainerConfig cfg = base;
            set_quadruple(cfg, dr, dr, 1);
            preset.arms.push_back(arm("dr-" + std::to_string(dr), cfg));
        }
    } else if (name == "group_size_grid") {
        for (int gs : {4, 8, 16}) {
            TrainerConfig cfg = base;
            stage0(cfg).gs = gs;
            preset.arms.push_back(arm("gs-" + std::to_string(gs), cfg));
        }
    } else if (name == "multistage_vs_scratch") {
        {
            TrainerConfig cfg = base;
            StageConfig s1 = stage0(cfg);
            s1.T = 16;
            s1.steps = stage0(cfg).steps / 2;
            StageConfig s2 = s1;
            s2.T = 32;
            s2.steps = stage0(cfg).steps - s1.steps;
            cfg.stages = {s1, s2};
            preset.arms.push_back(arm("multi-stage", cfg));
        }
        {
            TrainerConfig cfg = base;
            stage0(cfg).T = 32;
            preset.arms.push_back(arm("from-scratch", cfg));
        }
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    return preset;
}

// ---------------------------------------------------------------------------
// Config file IO
// ---------------------------------------------------------------------------

namespace {

StageConfig stage_from_json(const json& j) {
    StageConfig s;
    s.steps = j.value("steps", s.steps);
    s.T = j.value("T", s.T);
    s.D_R = j.value("D_R", s.D_R);
    s.D_T = j.value("D_T", s.D_T);
    s.gs = j.value("gs", s.gs);
    s.N_reuse = j.value("N_reuse", s.N_reuse);
    s.tau = j.value("tau", s.tau);
    s.lr = j.value("lr", s.lr);
    s.controller_enabled = j.value("controller_enabled", s.controller_enabled);
    s.fixed_entropy_alpha = j.value("fixed_entropy_alpha", s.fixed_entropy_alpha);
    if (j.contains("mask")) s.mask = mask_strategy_from(j.at("mask").get<std::string>());
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        if (l.contains("kind")) s.loss.kind = loss_kind_from(l.at("kind").get<std::string>());
        s.loss.eps_low = l.value("eps_low", s.loss.eps_low);
        s.loss.eps_high = l.value("eps_high", s.loss.eps_high);
        s.loss.kl_beta = l.value("kl_beta", s.loss.kl_beta);
        s.loss.length_normalize = s.loss.kind == LossKind::grpo;
    }
    return s;
}

json stage_to_json(const StageConfig& s) {
    json j;
    j["steps"] = s.steps;
    j["T"] = s.T;
    j["D_R"] = s.D_R;
    j["D_T"] = s.D_T;
    j["gs"] = s.gs;
    j["N_reuse"] = s.N_reuse;
    j["tau"] = s.tau;
    j["lr"] = s.lr;
    j["controller_enabled"] = s.controller_enabled;
    j["fixed_entropy_alpha"] = s.fixed_entropy_alpha;
    j["mask"] = to_string(s.mask);
    j["loss"] = {{"kind", to_string(s.loss.kind)},
                 {"eps_low", s.loss.eps_low},
                 {"eps_high", s.loss.eps_high},
                 {"kl_beta", s.loss.kl_beta}};
    return j;
}

}  // namespace

TrainerConfig trainer_config_from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    json j;
    f >> j;
    TrainerConfig cfg = default_base_config();
    cfg.stages.clear();
    if (j.contains("stages")) {
        for (const auto& s : j.at("stages")) cfg.stages.push_back(stage_from_json(s));
    }
    if (cfg.stages.empty()) cfg.stages.push_back(default_base_config().stages.front());
    cfg.seed = j.value("seed", cfg.seed);
    cfg.gaussian_init = j.value("gaussian_init", cfg.gaussian_init);
    cfg.init_scale = j.value("init_scale", cfg.init_scale);
    cfg.feature_window = j.value("feature_window", cfg.feature_window);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.workers = j.value("workers", cfg.workers);
    if (j.contains("controller")) {
        const auto& c = j.at("controller");
        cfg.controller.tgt_ent = c.value("tgt_ent", cfg.controller.tgt_ent);
        cfg.controller.delta = c.value("delta", cfg.controller.delta);
        cfg.controller.c_max = c.value("c_max", cfg.controller.c_max);
    }
    return cfg;
}

void write_trainer_config(const TrainerConfig& cfg, const std::string& path) {
    json j;
    j["seed"] = cfg.seed;
    j["gaussian_init"] = cfg.gaussian_init;
    j["init_scale"] = cfg.init_scale;
    j["feature_window"] = cfg.feature_window;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["workers"] = cfg.workers;
    j["controller"] = {{"tgt_ent", cfg.controller.tgt_ent},
                       {"delta", cfg.controller.delta},
                       {"c_max", cfg.controller.c_max}};
    j["stages"] = json::array();
    for (const auto& s : cfg.stages) j["stages"].push_back(stage_to_json(s));
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Preset runner
// ---------------------------------------------------------------------------

void write_run_csv(const std::vector<RunLogRecord>& records, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "step,entropy,accuracy,truncation_ratio,clip_fraction,alpha,c\n";
    for (const auto& r : records) {
        f << r.step << "," << r.buffer_entropy << "," << r.train_accuracy << "," << r.truncation_ratio
          << "," << r.clip_fraction << "," << r.alpha << "," << r.c << "\n";
    }
}

void run_preset(const AblationPreset& preset, const ProblemBank& bank, const std::string& out_dir,
                std::ostream* progress) {
    if (preset.arms.size() < 2 || preset.seeds.size() < 3)
        throw std::invalid_argument("a preset needs at least two arms and three seeds");
    fs::create_directories(out_dir);

    struct ArmResult {
        std::string name;
        std::vector<std::vector<RunLogRecord>> per_seed;
    };
    std::vector<ArmResult> results;

    for (const auto& a : preset.arms) {
        ArmResult res;
        res.name = a.name;
        for (std::uint64_t seed : preset.seeds) {
            TrainerConfig cfg = a.config;
            cfg.seed = seed;
            const fs::path dir = fs::path(out_dir) / a.name / ("seed-" + std::to_string(seed));
            fs::create_directories(dir);
            Trainer trainer(cfg, bank);
            std::vector<RunLogRecord> records = trainer.run_stages();
            write_run_log(records, (dir / "run.jsonl").string());
            write_timings(records, (dir / "timings.jsonl").string());
            write_run_csv(records, (dir / "run.csv").string());
            if (progress)
                (*progress) << preset.name << " " << a.name << " seed " << seed << ": "
                            << records.size() << " steps, final accuracy "
                            << (records.empty() ? 0.0 : records.back().train_accuracy) << "\n";
            res.per_seed.push_back(std::move(records));
        }
        results.push_back(std::move(res));
    }

    // per-arm across-seed trajectories
    for (const auto& res : results) {
        std::ofstream f((fs::path(out_dir) / res.name / "trajectory.csv").string());
        f << "step,mean_entropy,mean_accuracy,mean_truncation_ratio\n";
        std::size_t steps = res.per_seed.front().size();
        for (const auto& s : res.per_seed) steps = std::min(steps, s.size());
        for (std::size_t t = 0; t < steps; ++t) {
            double e = 0.0, acc = 0.0, tr = 0.0;
            for (const auto& s : res.per_seed) {
                e += s[t].buffer_entropy;
                acc += s[t].train_accuracy;
                tr += s[t].truncation_ratio;
            }
            const double n = static_cast<double>(res.per_seed.size());
            f << t << "," << e / n << "," << acc / n << "," << tr / n << "\n";
        }
    }

    // end-of-run comparison with across-seed standard errors
    std::ofstream sum((fs::path(out_dir) / "summary.txt").string());
    sum << "preset: " << preset.name << "\n";
    sum << std::left << std::setw(28) << "arm" << std::setw(26) << "final_accuracy" << std::setw(26)
        << "final_entropy" << "\n";
    for (const auto& res : results) {
        std::vector<double> accs, ents;
        for (const auto& s : res.per_seed) {
            if (s.empty()) continue;
            accs.push_back(s.back().train_accuracy);
            ents.push_back(s.back().buffer_entropy);
        }
        auto mean_se = [](const std::vector<double>& v) {
            double m = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - m) * (x - m);
            var /= static_cast<double>(v.size());
            const double se = std::sqrt(var / static_cast<double>(v.size()));
            return std::pair<double, double>{m, se};
        };
        const auto [am, ase] = mean_se(accs);
        const auto [em, ese] = mean_se(ents);
        std::ostringstream a, e;
        a << std::fixed << std::setprecision(4) << am << " +/- " << ase;
        e << std::fixed << std::setprecision(4) << em << " +/- " << ese;
        sum << std::left << std::setw(28) << res.name << std::setw(26) << a.str() << std::setw(26)
            << e.str() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

std::vector<RunComparisonRow> report(const std::vector<std::string>& run_dirs, const std::string& out_csv,
                                     double entropy_threshold, std::ostream& table) {
    std::vector<RunComparisonRow> rows;
    std::ofstream csv(out_csv);
    if (!csv) throw std::runtime_error("cannot open for write: " + out_csv);
    csv << "run,step,entropy,accuracy,truncation_ratio,clip_fraction,alpha,c\n";
    for (const auto& dir : run_dirs) {
        const std::string log_path = (fs::path(dir) / "run.jsonl").string();
        std::vector<RunLogRecord> records;
        try {
            records = load_run_log(log_path);
        } catch (const std::exception& e) {
            throw std::runtime_error("run log unreadable: " + log_path + " (" + e.what() + ")");
        }
        if (records.empty()) throw std::runtime_error("run log is empty: " + log_path);
        RunComparisonRow row;
        row.run = fs::path(dir).filename().string();
        if (row.run.empty()) row.run = dir;
        double clip_sum = 0.0;
        for (const auto& r : records) {
            csv << row.run << "," << r.step << "," << r.buffer_entropy << "," << r.train_accuracy << ","
                << r.truncation_ratio << "," << r.clip_fraction << "," << r.alpha << "," << r.c << "\n";
            clip_sum += r.clip_fraction;
            if (row.steps_to_entropy_below < 0 && r.buffer_entropy < entropy_threshold)
                row.steps_to_entropy_below = r.step;
        }
        row.final_accuracy = records.back().train_accuracy;
        row.mean_clip_fraction = clip_sum / static_cast<double>(records.size());
        rows.push_back(row);
    }
    table << std::left << std::setw(32) << "run" << std::setw(18) << "final_accuracy" << std::setw(26)
          << "steps_to_entropy_below" << std::setw(20) << "mean_clip_fraction" << "\n";
    for (const auto& r : rows) {
        table << std::left << std::setw(32) << r.run << std::setw(18) << r.final_accuracy << std::setw(26)
              << r.steps_to_entropy_below << std::setw(20) << r.mean_clip_fraction << "\n";
    }
    return rows;
}

}  // namespace deskrl
