#pragma once

#include <vector>

#include "deskrl/rollout.hpp"

namespace deskrl {

enum class MaskStrategy { no_adv_mask, adv_mask_before, adv_mask_after };

const char* to_string(MaskStrategy m);
MaskStrategy mask_strategy_from(const std::string& name);

// Group-normalized advantages (r_j - mean) / std with the population std.
// All-equal rewards yield all-zero advantages; the caller flags the group.
// Throws std::invalid_argument for fewer than two rewards.
std::vector<double> grpo_advantages(const std::vector<int>& rewards);

// Fills group.advantages according to the mask strategy:
//   no_adv_mask     - normalize over all M responses
//   adv_mask_before - normalize over the non-truncated subset, truncated get 0
//   adv_mask_after  - normalize over all M, then truncated are overwritten to 0
// adv_mask_before with fewer than two non-truncated responses marks the whole
// group zero-advantage.
void apply_mask(Group& group, MaskStrategy strategy);

struct FilteredBatch {
    std::vector<Group> retained;
    int dropped_zero_advantage = 0;
    long long token_total = 0;  // sum of |y| over retained responses
    double tau = 1.0;
    std::string policy_snapshot_id;
};

// Rejection sampling: keeps exactly the groups with some nonzero advantage.
FilteredBatch reject_zero_advantage(const RolloutBatch& batch);
FilteredBatch reject_zero_advantage(const FilteredBatch& batch);

}  // namespace deskrl
