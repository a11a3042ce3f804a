#pragma once

#include <utility>

namespace deskrl {

// Adaptive entropy controller state. c starts at 0 and moves by +/- delta per
// step, clamped to [0, c_max].
struct ControllerState {
    double c = 0.0;
    double tgt_ent = 0.2;
    double delta = 0.005;
    double c_max = 0.1;
};

// One controller step for measured buffer entropy e_k. The returned alpha_k
// uses the pre-update coefficient: alpha_k = c_k * 1{e_k <= tgt_ent}; then
// c moves toward counteracting the gap (up when e_k < tgt_ent, down when
// e_k > tgt_ent, unchanged at the tie).
std::pair<double, ControllerState> step_controller(const ControllerState& state, double e_k);

}  // namespace deskrl
