#include "deskrl/entctl.hpp"

#include <algorithm>
#include <stdexcept>

namespace deskrl {

std::pair<double, ControllerState> step_controller(const ControllerState& state, double e_k) {
    if (e_k < 0.0) throw std::invalid_argument("entropy measurement must be nonnegative");
    const double alpha = e_k <= state.tgt_ent ? state.c : 0.0;
    ControllerState next = state;
    if (e_k < state.tgt_ent) {
        next.c = state.c + state.delta;
    } else if (e_k > state.tgt_ent) {
        next.c = state.c - state.delta;
    }
    next.c = std::clamp(next.c, 0.0, state.c_max);
    return {alpha, next};
}

}  // namespace deskrl
