#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "evtr/geometry.hpp"

using namespace evtr;

TEST_CASE("wrap_angle maps into (-pi, pi]", "[geometry]") {
    CHECK(wrap_angle(0.0) == 0.0);
    CHECK(wrap_angle(kPi) == Catch::Approx(kPi));
    CHECK(wrap_angle(-kPi) == Catch::Approx(kPi));          // boundary folds up
    CHECK(wrap_angle(3.0 * kPi) == Catch::Approx(kPi));
    CHECK(wrap_angle(kPi + 0.25) == Catch::Approx(-kPi + 0.25));
    CHECK(wrap_angle(-kPi - 0.25) == Catch::Approx(kPi - 0.25));

    std::mt19937_64 eng(42);
    std::uniform_real_distribution<double> dist(-50.0, 50.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = dist(eng);
        const double w = wrap_angle(a);
        CHECK(w > -kPi);
        CHECK(w <= kPi);
        // same direction on the unit circle
        CHECK(std::sin(w) == Catch::Approx(std::sin(a)).margin(1e-9));
        CHECK(std::cos(w) == Catch::Approx(std::cos(a)).margin(1e-9));
    }
}

TEST_CASE("degree conversions round-trip", "[geometry]") {
    CHECK(deg_to_rad(180.0) == Catch::Approx(kPi));
    CHECK(rad_to_deg(kPi / 2.0) == Catch::Approx(90.0));
    for (double d : {-720.0, -36.5, 0.0, 15.0, 359.9})
        CHECK(rad_to_deg(deg_to_rad(d)) == Catch::Approx(d).margin(1e-12));
}

TEST_CASE("compose applies b in a's frame", "[geometry]") {
    // facing +y, one step "forward" in the local frame lands at +y globally
    const Pose2D a{1.0, 2.0, kPi / 2.0};
    const Pose2D b{1.0, 0.0, 0.0};
    const Pose2D c = compose(a, b);
    CHECK(c.x == Catch::Approx(1.0).margin(1e-12));
    CHECK(c.y == Catch::Approx(3.0));
    CHECK(c.theta == Catch::Approx(kPi / 2.0));
}

TEST_CASE("inverse undoes compose", "[geometry]") {
    std::mt19937_64 eng(7);
    std::uniform_real_distribution<double> pos(-10.0, 10.0);
    std::uniform_real_distribution<double> ang(-3.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        const Pose2D a{pos(eng), pos(eng), ang(eng)};
        const Pose2D id = compose(a, inverse(a));
        CHECK(id.x == Catch::Approx(0.0).margin(1e-9));
        CHECK(id.y == Catch::Approx(0.0).margin(1e-9));
        CHECK(wrap_angle(id.theta) == Catch::Approx(0.0).margin(1e-9));
    }
}

TEST_CASE("relative transform recomposes to the target", "[geometry]") {
    std::mt19937_64 eng(11);
    std::uniform_real_distribution<double> pos(-10.0, 10.0);
    std::uniform_real_distribution<double> ang(-3.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        const Pose2D a{pos(eng), pos(eng), ang(eng)};
        const Pose2D b{pos(eng), pos(eng), ang(eng)};
        const Pose2D t = relative(a, b);
        const Pose2D back = compose(a, t);
        CHECK(back.x == Catch::Approx(b.x).margin(1e-9));
        CHECK(back.y == Catch::Approx(b.y).margin(1e-9));
        CHECK(wrap_angle(back.theta - b.theta) == Catch::Approx(0.0).margin(1e-9));
    }
}

TEST_CASE("relative of identical poses is identity", "[geometry]") {
    const Pose2D a{3.5, -2.0, 0.7};
    const Pose2D t = relative(a, a);
    CHECK(t.x == Catch::Approx(0.0).margin(1e-12));
    CHECK(t.y == Catch::Approx(0.0).margin(1e-12));
    CHECK(t.theta == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("rotate_transform turns the translation and the heading", "[geometry]") {
    const Pose2D t{1.0, 0.0, 0.2};
    const Pose2D r = rotate_transform(t, kPi / 2.0);
    CHECK(r.x == Catch::Approx(0.0).margin(1e-12));
    CHECK(r.y == Catch::Approx(1.0));
    CHECK(r.theta == Catch::Approx(0.2 + kPi / 2.0));

    // rotation preserves length
    CHECK(translation_norm(r) == Catch::Approx(translation_norm(t)));

    // zero rotation is the identity
    const Pose2D same = rotate_transform(t, 0.0);
    CHECK(same.x == t.x);
    CHECK(same.y == t.y);
    CHECK(same.theta == Catch::Approx(t.theta));
}

TEST_CASE("translation_norm is the planar distance", "[geometry]") {
    CHECK(translation_norm(Pose2D{3.0, 4.0, 9.9}) == Catch::Approx(5.0));
    CHECK(translation_norm(Pose2D{0.0, 0.0, 1.0}) == 0.0);
}
