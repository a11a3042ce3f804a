#include "deskrl/credit.hpp"

#include <cmath>
#include <stdexcept>

namespace deskrl {

const char* to_string(MaskStrategy m) {
    switch (m) {
        case MaskStrategy::no_adv_mask: return "no_adv_mask";
        case MaskStrategy::adv_mask_before: return "adv_mask_before";
        case MaskStrategy::adv_mask_after: return "adv_mask_after";
    }
    return "?";
}

MaskStrategy mask_strategy_from(const std::string& name) {
    if (name == "no_adv_mask") return MaskStrategy::no_adv_mask;
    if (name == "adv_mask_before") return MaskStrategy::adv_mask_before;
    if (name == "adv_mask_after") return MaskStrategy::adv_mask_after;
    throw std::invalid_argument("unknown mask strategy: " + name);
}

std::vector<double> grpo_advantages(const std::vector<int>& rewards) {
    const std::size_t m = rewards.size();
    if (m < 2) throw std::invalid_argument("group needs at least two rewards");
    double mean = 0.0;
    for (int r : rewards) mean += r;
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (int r : rewards) {
        const double d = static_cast<double>(r) - mean;
        var += d * d;
    }
    var /= static_cast<double>(m);  // population std, no Bessel correction
    std::vector<double> adv(m, 0.0);
    if (var == 0.0) return adv;  // zero-advantage group, no epsilon
    const double sd = std::sqrt(var);
    for (std::size_t j = 0; j < m; ++j) adv[j] = (static_cast<double>(rewards[j]) - mean) / sd;
    return adv;
}

namespace {

bool all_zero(const std::vector<double>& v) {
    for (double x : v)
        if (x != 0.0) return false;
    return true;
}

}  // namespace

void apply_mask(Group& group, MaskStrategy strategy) {
    const std::size_t m = group.responses.size();
    std::vector<int> rewards(m);
    for (std::size_t j = 0; j < m; ++j) rewards[j] = group.responses[j].reward;

    switch (strategy) {
        case MaskStrategy::no_adv_mask:
            group.advantages = grpo_advantages(rewards);
            break;
        case MaskStrategy::adv_mask_after: {
            group.advantages = grpo_advantages(rewards);
            for (std::size_t j = 0; j < m; ++j)
                if (group.responses[j].truncated) group.advantages[j] = 0.0;
            break;
        }
        case MaskStrategy::adv_mask_before: {
            std::vector<int> subset;
            std::vector<std::size_t> subset_idx;
            for (std::size_t j = 0; j < m; ++j) {
                if (!group.responses[j].truncated) {
                    subset.push_back(rewards[j]);
                    subset_idx.push_back(j);
                }
            }
            group.advantages.assign(m, 0.0);
            // subset statistics are undefined below two responses; the whole
            // group is then treated as zero-advantage
            if (subset.size() >= 2) {
                const std::vector<double> sub_adv = grpo_advantages(subset);
                for (std::size_t k = 0; k < subset_idx.size(); ++k)
                    group.advantages[subset_idx[k]] = sub_adv[k];
            }
            break;
        }
    }
    group.zero_advantage = all_zero(group.advantages);
}

namespace {

FilteredBatch filter_groups(const std::vector<Group>& groups, double tau, const std::string& snapshot) {
    FilteredBatch out;
    out.tau = tau;
    out.policy_snapshot_id = snapshot;
    for (const auto& g : groups) {
        if (g.advantages.size() != g.responses.size())
            throw std::invalid_argument("group advantages are unset; run apply_mask first");
        bool any_nonzero = false;
        for (double a : g.advantages)
            if (a != 0.0) any_nonzero = true;
        if (!any_nonzero) {
            ++out.dropped_zero_advantage;
            continue;
        }
        out.retained.push_back(g);
        for (const auto& r : g.responses) out.token_total += static_cast<long long>(r.tokens.size());
    }
    return out;
}

}  // namespace

FilteredBatch reject_zero_advantage(const RolloutBatch& batch) {
    return filter_groups(batch.groups, batch.tau, batch.policy_snapshot_id);
}

FilteredBatch reject_zero_advantage(const FilteredBatch& batch) {
    FilteredBatch out = filter_groups(batch.retained, batch.tau, batch.policy_snapshot_id);
    return out;
}

}  // namespace deskrl
