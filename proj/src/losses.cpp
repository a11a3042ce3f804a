#include "deskrl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace deskrl {

const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::pg: return "pg";
        case LossKind::ppo: return "ppo";
        case LossKind::grpo: return "grpo";
        case LossKind::magic: return "magic";
    }
    return "?";
}

LossKind loss_kind_from(const std::string& name) {
    if (name == "pg") return LossKind::pg;
    if (name == "ppo") return LossKind::ppo;
    if (name == "grpo") return LossKind::grpo;
    if (name == "magic") return LossKind::magic;
    throw std::invalid_argument("unknown loss kind: " + name);
}

void LossConfig::validate() const {
    if (eps_low < 0.0 || eps_low >= 1.0 || eps_high < 0.0 || eps_high >= 1.0)
        throw std::invalid_argument("clip ratios must lie in [0, 1)");
    if (kl_beta < 0.0) throw std::invalid_argument("kl_beta must be nonnegative");
    if (entropy_alpha < 0.0) throw std::invalid_argument("entropy_alpha must be nonnegative");
    if (kind == LossKind::magic && length_normalize)
        throw std::invalid_argument("the token-level loss removes length normalization");
    if (kind == LossKind::grpo && !length_normalize)
        throw std::invalid_argument("grpo keeps the 1/|y| length normalization");
}

double ratio(const PolicyParams& params, double behavior_logp, const StateContext& state, TokenId token,
             double tau) {
    return std::exp(log_prob(params, state, token, tau) - behavior_logp);
}

double clipped_term(double rho, double advantage, double eps_low, double eps_high) {
    const double clipped = std::clamp(rho, 1.0 - eps_low, 1.0 + eps_high);
    return std::min(rho * advantage, clipped * advantage);
}

double k3_term(double ref_logp, double theta_logp) {
    const double log_r = ref_logp - theta_logp;
    return std::exp(log_r) - log_r - 1.0;
}

namespace {

struct TokenStats {
    double value = 0.0;      // contribution to the (negated) loss value
    double ratio_sum = 0.0;
    double k3_sum = 0.0;
    double entropy_sum = 0.0;
    long long clipped = 0;
    long long tokens = 0;
};

// Unified evaluation: loss = -sum_t w_t * [branch_t + alpha * H_t] + sum_t w_t * beta * k3_t.
// Per-response partials are computed in parallel and folded in index order, so
// the result is bit-identical for any worker count.
LossReport eval_loss(const FilteredBatch& batch, const PolicyParams& params, const LossConfig& config,
                     const PolicyParams* ref_params, bool clip, int workers) {
    if (batch.retained.empty()) throw std::invalid_argument("loss over an empty batch");
    if (config.kl_beta > 0.0 && ref_params == nullptr)
        throw std::invalid_argument("kl_beta > 0 requires reference parameters");

    const double tau = batch.tau;
    const std::size_t n_groups = batch.retained.size();

    struct Slot {
        const Group* group;
        const Response* response;
        double weight;  // per-token weight for this response
    };
    std::vector<Slot> slots;
    for (const auto& g : batch.retained) {
        if (g.advantages.size() != g.responses.size())
            throw std::invalid_argument("batch has unset advantages");
        for (const auto& r : g.responses) {
            double w = 0.0;
            switch (config.kind) {
                case LossKind::pg:
                case LossKind::ppo:
                    w = 1.0 / (static_cast<double>(n_groups) * static_cast<double>(g.responses.size()));
                    break;
                case LossKind::grpo:
                    w = 1.0 / (static_cast<double>(n_groups) * static_cast<double>(g.responses.size()) *
                               static_cast<double>(r.tokens.size()));
                    break;
                case LossKind::magic:
                    w = 1.0 / static_cast<double>(batch.token_total);
                    break;
            }
            slots.push_back({&g, &r, w});
        }
    }

    const long long n_slots = static_cast<long long>(slots.size());
    std::vector<TokenStats> stats(slots.size());
    std::vector<Matrix> grads(slots.size());

    const bool want_entropy = true;  // entropy is cheap here and always reported
    const bool want_k3 = ref_params != nullptr;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(workers > 0 ? workers : omp_get_max_threads())
#endif
    for (long long si = 0; si < n_slots; ++si) {
        const Slot& slot = slots[static_cast<std::size_t>(si)];
        const Group& g = *slot.group;
        const Response& r = *slot.response;
        const double A = g.advantages[static_cast<std::size_t>(slot.response - g.responses.data())];
        const double w = slot.weight;

        TokenStats ts;
        Matrix grad(params.theta.rows, params.theta.cols);
        std::vector<double> dist_tau, dist_1;
        std::vector<int> rows;

        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
            const StateContext state{g.prompt, std::span<const TokenId>(r.tokens.data(), t)};
            const TokenId token = r.tokens[t];
            token_dist(params, state, tau, dist_tau);
            active_rows(params, state, rows);

            // same code path as the sampler, so on-policy ratios are exactly 1
            const double lp_tau = log_prob(params, state, token, tau);
            const double rho = std::exp(lp_tau - r.behavior_logps[t]);

            double branch;
            bool clipped_active = false;
            if (clip) {
                const double clipped = std::clamp(rho, 1.0 - config.eps_low, 1.0 + config.eps_high);
                const double unclipped_term = rho * A;
                const double clipped_term_v = clipped * A;
                if (clipped_term_v < unclipped_term) {
                    branch = clipped_term_v;
                    clipped_active = true;  // saturated: zero policy gradient
                } else {
                    branch = unclipped_term;
                }
            } else {
                branch = rho * A;
            }
            ts.value -= w * branch;
            if (!clipped_active) {
                accumulate_grad_log_prob(params, rows, dist_tau, token, tau, -w * A * rho, grad);
            }

            if (tau == 1.0) {
                dist_1 = dist_tau;
            } else {
                token_dist(params, state, 1.0, dist_1);
            }

            if (want_entropy) {
                const double h = entropy_of_dist(dist_1);
                ts.entropy_sum += h;
                if (config.entropy_alpha > 0.0) {
                    ts.value -= w * config.entropy_alpha * h;
                    accumulate_grad_entropy(params, rows, dist_1, 1.0, -w * config.entropy_alpha, grad);
                }
            }

            if (want_k3) {
                // divergence between the policies themselves, tau = 1
                const double lp_theta_1 = tau == 1.0 ? lp_tau : log_prob(params, state, token, 1.0);
                const double lp_ref_1 = log_prob(*ref_params, state, token, 1.0);
                const double k3 = k3_term(lp_ref_1, lp_theta_1);
                ts.k3_sum += k3;
                if (config.kl_beta > 0.0) {
                    ts.value += w * config.kl_beta * k3;
                    const double one_minus_r = 1.0 - std::exp(lp_ref_1 - lp_theta_1);
                    accumulate_grad_log_prob(params, rows, dist_1, token, 1.0,
                                             w * config.kl_beta * one_minus_r, grad);
                }
            }

            ts.ratio_sum += rho;
            if (clipped_active) ++ts.clipped;
            ++ts.tokens;
        }
        stats[static_cast<std::size_t>(si)] = ts;
        grads[static_cast<std::size_t>(si)] = std::move(grad);
    }

    LossReport report;
    report.grad = Matrix(params.theta.rows, params.theta.cols);
    std::vector<double> values(slots.size()), ratios(slots.size()), k3s(slots.size()), ents(slots.size());
    long long clipped = 0, tokens = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        values[i] = stats[i].value;
        ratios[i] = stats[i].ratio_sum;
        k3s[i] = stats[i].k3_sum;
        ents[i] = stats[i].entropy_sum;
        clipped += stats[i].clipped;
        tokens += stats[i].tokens;
        report.grad.add_scaled(grads[i], 1.0);
    }
    report.value = pairwise_sum(values);
    report.token_count = tokens;
    if (tokens > 0) {
        report.clip_fraction = static_cast<double>(clipped) / static_cast<double>(tokens);
        report.mean_ratio = pairwise_sum(ratios) / static_cast<double>(tokens);
        report.kl_value = want_k3 ? pairwise_sum(k3s) / static_cast<double>(tokens) : 0.0;
        report.entropy_value = pairwise_sum(ents) / static_cast<double>(tokens);
    }
    return report;
}

}  // namespace

LossReport pg_loss(const FilteredBatch& batch, const PolicyParams& params, int workers) {
    LossConfig config;
    config.kind = LossKind::pg;
    return eval_loss(batch, params, config, nullptr, /*clip=*/false, workers);
}

LossReport ppo_loss(const FilteredBatch& batch, const PolicyParams& params, const LossConfig& config,
                    int workers) {
    LossConfig c = config;
    c.kind = LossKind::ppo;
    c.validate();
    return eval_loss(batch, params, c, nullptr, /*clip=*/true, workers);
}

LossReport grpo_loss(const FilteredBatch& batch, const PolicyParams& params, const PolicyParams& ref_params,
                     const LossConfig& config, int workers) {
    LossConfig c = config;
    c.kind = LossKind::grpo;
    c.length_normalize = true;
    c.validate();
    return eval_loss(batch, params, c, &ref_params, /*clip=*/true, workers);
}

LossReport magic_loss(const FilteredBatch& batch, const PolicyParams& params, const LossConfig& config,
                      const PolicyParams* ref_params, int workers) {
    LossConfig c = config;
    c.kind = LossKind::magic;
    c.length_normalize = false;
    c.validate();
    return eval_loss(batch, params, c, ref_params, /*clip=*/true, workers);
}

PolicyParams sgd_step(const PolicyParams& params, const Matrix& grad, double lr) {
    if (grad.rows != params.theta.rows || grad.cols != params.theta.cols)
        throw std::invalid_argument("gradient shape mismatch");
    if (!grad.all_finite()) throw std::runtime_error("poisoned step: non-finite gradient");
    PolicyParams next = params;
    next.theta.add_scaled(grad, -lr);
    return next;
}

double mean_k3_to_reference(const RolloutBatch& batch, const PolicyParams& params,
                            const PolicyParams& ref_params, int workers) {
    std::vector<const Group*> owner;
    std::vector<const Response*> resp;
    for (const auto& g : batch.groups)
        for (const auto& r : g.responses) {
            owner.push_back(&g);
            resp.push_back(&r);
        }
    const long long n = static_cast<long long>(resp.size());
    std::vector<double> partial(resp.size(), 0.0);
    long long tokens = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(workers > 0 ? workers : omp_get_max_threads())
#endif
    for (long long k = 0; k < n; ++k) {
        const Group& g = *owner[static_cast<std::size_t>(k)];
        const Response& r = *resp[static_cast<std::size_t>(k)];
        double s = 0.0;
        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
            const StateContext state{g.prompt, std::span<const TokenId>(r.tokens.data(), t)};
            s += k3_term(log_prob(ref_params, state, r.tokens[t], 1.0),
                         log_prob(params, state, r.tokens[t], 1.0));
        }
        partial[static_cast<std::size_t>(k)] = s;
    }
    for (const auto* r : resp) tokens += static_cast<long long>(r->tokens.size());
    if (tokens == 0) return 0.0;
    return pairwise_sum(partial) / static_cast<double>(tokens);
}

}  // namespace deskrl
