#pragma once

#include <optional>
#include <string>

#include "deskrl/credit.hpp"
#include "deskrl/policy.hpp"

namespace deskrl {

enum class LossKind { pg, ppo, grpo, magic };

const char* to_string(LossKind k);
LossKind loss_kind_from(const std::string& name);

struct LossConfig {
    LossKind kind = LossKind::magic;
    double eps_low = 0.2;
    double eps_high = 0.2;
    double kl_beta = 0.0;
    double entropy_alpha = 0.0;       // alpha_k, supplied per step by the controller
    bool length_normalize = false;    // true for grpo, false for magic

    void validate() const;
};

struct LossReport {
    double value = 0.0;
    Matrix grad;
    double clip_fraction = 0.0;  // fraction of tokens on the clipped branch
    double mean_ratio = 0.0;
    double kl_value = 0.0;       // mean k3 term per token
    double entropy_value = 0.0;  // mean policy entropy per token (tau = 1)
    long long token_count = 0;
};

// rho = pi_theta(a|s) / pi_k(a|s), both at the sampling temperature.
double ratio(const PolicyParams& params, double behavior_logp, const StateContext& state, TokenId token,
             double tau);

// min(rho * A, clip(rho, 1 - eps_low, 1 + eps_high) * A)
double clipped_term(double rho, double advantage, double eps_low, double eps_high);

// k3 estimator r - ln r - 1 with r = pi_ref / pi_theta; nonnegative, zero iff
// the two log-probs agree.
double k3_term(double ref_logp, double theta_logp);

// Vanilla policy-gradient surrogate: response-mean over groups of the token
// sum of rho * A. No clipping, KL or entropy terms.
LossReport pg_loss(const FilteredBatch& batch, const PolicyParams& params, int workers = 0);

// PPO: same aggregation as pg_loss with the clipped min.
LossReport ppo_loss(const FilteredBatch& batch, const PolicyParams& params, const LossConfig& config,
                    int workers = 0);

// GRPO: per-response 1/|y| weighting, group mean 1/M, batch mean over groups,
// clipped min minus beta * k3 against the reference policy.
LossReport grpo_loss(const FilteredBatch& batch, const PolicyParams& params, const PolicyParams& ref_params,
                     const LossConfig& config, int workers = 0);

// Token-level loss without length normalization: -(1/T_k) of the clipped min
// plus alpha_k * entropy, over all tokens of the retained groups. kl_beta > 0
// adds the (beta/T_k) k3 sum of the KL-regularized variant and requires
// ref_params. The k3 value is measured and reported even when beta is 0 if a
// reference is supplied.
LossReport magic_loss(const FilteredBatch& batch, const PolicyParams& params, const LossConfig& config,
                      const PolicyParams* ref_params = nullptr, int workers = 0);

// Plain gradient descent with constant step size; pure, returns new params.
// Throws on non-finite gradients (poisoned step).
PolicyParams sgd_step(const PolicyParams& params, const Matrix& grad, double lr);

// Mean k3 between params and ref over every token of the batch buffer,
// independent of rejection filtering; the per-step divergence measurement.
double mean_k3_to_reference(const RolloutBatch& batch, const PolicyParams& params,
                            const PolicyParams& ref_params, int workers = 0);

}  // namespace deskrl
