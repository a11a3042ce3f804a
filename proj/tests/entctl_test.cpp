#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deskrl/entctl.hpp"
#include "deskrl/common.hpp"

using namespace deskrl;

TEST_CASE("controller: paper defaults, direct evaluation of the update law") {
    ControllerState s;  // tgt 0.2, delta 0.005, c 0
    CHECK(s.tgt_ent == 0.2);
    CHECK(s.delta == 0.005);
    CHECK(s.c == 0.0);

    // e below target: alpha uses the pre-update c, then c rises
    auto [alpha, next] = step_controller(s, 0.1);
    CHECK(alpha == 0.0);
    CHECK(next.c == doctest::Approx(0.005).epsilon(1e-15));
}

TEST_CASE("controller: indicator off above target while c decays") {
    ControllerState s;
    s.c = 0.02;
    auto [alpha, next] = step_controller(s, 0.25);
    CHECK(alpha == 0.0);  // e > tgt switches the entropy loss off
    CHECK(next.c == doctest::Approx(0.015).epsilon(1e-15));
}

TEST_CASE("controller: alpha equals pre-update c below the target") {
    ControllerState s;
    s.c = 0.02;
    auto [alpha, next] = step_controller(s, 0.15);
    CHECK(alpha == doctest::Approx(0.02).epsilon(1e-15));
    CHECK(next.c == doctest::Approx(0.025).epsilon(1e-15));
}

TEST_CASE("controller: c clamps to [0, c_max]") {
    ControllerState s;
    s.c = 0.003;
    auto [alpha, next] = step_controller(s, 0.25);
    (void)alpha;
    CHECK(next.c == 0.0);  // clamps at zero, not -0.002

    ControllerState hi;
    hi.c = hi.c_max;
    auto [alpha2, next2] = step_controller(hi, 0.05);
    CHECK(alpha2 == doctest::Approx(hi.c_max));
    CHECK(next2.c == hi.c_max);
}

TEST_CASE("controller: exact tie leaves c unchanged") {
    ControllerState s;
    s.c = 0.01;
    auto [alpha, next] = step_controller(s, s.tgt_ent);
    CHECK(alpha == doctest::Approx(0.01));  // indicator uses <=
    CHECK(next.c == doctest::Approx(0.01));
}

TEST_CASE("controller: alpha is zero whenever e exceeds the target") {
    ControllerState s;
    s.c = 0.07;
    for (double e : {0.21, 0.5, 1.0, 2.0}) {
        auto [alpha, next] = step_controller(s, e);
        CHECK(alpha == 0.0);
        s = next;
    }
    CHECK_THROWS_AS(step_controller(s, -0.1), std::invalid_argument);
}

TEST_CASE("controller: c never leaves [0, c_max] under random drive") {
    ControllerState s;
    Rng rng(17);
    for (int i = 0; i < 2000; ++i) {
        auto [alpha, next] = step_controller(s, 0.4 * rng.next_double());
        CHECK(next.c >= 0.0);
        CHECK(next.c <= s.c_max);
        CHECK(alpha <= s.c_max);
        s = next;
    }
}
