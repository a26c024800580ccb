// SPDX-License-Identifier: Apache-2.0
#include "svfit/optim.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "svfit/errors.hpp"
#include "test_support.hpp"

using namespace svfit::optim;

namespace {

std::vector<ParamSlot> one_slot(std::vector<double>& value, const std::vector<double>& grad,
                                bool decay = true) {
    return {{std::span<double>(value), std::span<const double>(grad), decay}};
}

} // namespace

TEST_CASE("schedule_lr ramp and decay anchors") {
    const double lr = 0.4;
    CHECK(schedule_lr(6, 100, 0.06, lr) == doctest::Approx(lr).epsilon(1e-15));
    CHECK(schedule_lr(100, 100, 0.06, lr) == 0.0);
    CHECK(schedule_lr(3, 100, 0.06, lr) == doctest::Approx(0.5 * lr).epsilon(1e-15));
    CHECK(schedule_lr(0, 100, 0.06, lr) == 0.0);
    // no warmup: starts at the peak and decays
    CHECK(schedule_lr(0, 100, 0.0, lr) == doctest::Approx(lr).epsilon(1e-15));
    CHECK(schedule_lr(50, 100, 0.0, lr) == doctest::Approx(0.5 * lr).epsilon(1e-15));
}

TEST_CASE("schedule_lr is piecewise linear, non-negative, single-peaked") {
    for (const double ratio : {0.0, 0.06, 0.3, 0.9}) {
        const std::size_t total = 40;
        std::vector<double> lrs;
        for (std::size_t s = 0; s <= total; ++s) lrs.push_back(schedule_lr(s, total, ratio, 1.0));
        double peak = 0.0;
        std::size_t peak_at = 0;
        for (std::size_t s = 0; s <= total; ++s) {
            CHECK(lrs[s] >= 0.0);
            if (lrs[s] > peak) {
                peak = lrs[s];
                peak_at = s;
            }
        }
        CHECK(peak == doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t s = 1; s <= peak_at; ++s) CHECK(lrs[s] >= lrs[s - 1]);
        for (std::size_t s = peak_at + 1; s <= total; ++s) CHECK(lrs[s] <= lrs[s - 1]);
    }
}

TEST_CASE("schedule_lr validates inputs") {
    CHECK_THROWS_AS(schedule_lr(0, 10, -0.1, 1.0), svfit::InvalidRatio);
    CHECK_THROWS_AS(schedule_lr(0, 10, 1.0, 1.0), svfit::InvalidRatio);
    CHECK_THROWS_AS(schedule_lr(11, 10, 0.1, 1.0), svfit::InvalidInput);
}

TEST_CASE("zero gradient and zero decay leave buffers unchanged") {
    for (Kind kind : {Kind::adamw, Kind::sgd_momentum}) {
        Optimizer opt(kind, {});
        std::vector<double> value = {1.5, -2.0, 0.25};
        const std::vector<double> before = value;
        const std::vector<double> grad = {0.0, 0.0, 0.0};
        auto slots = one_slot(value, grad);
        opt.step(0.1, slots);
        opt.step(0.1, slots);
        CHECK(value == before);
    }
}

TEST_CASE("adamw first step is a bias-corrected sign step") {
    Hyper hp;
    hp.weight_decay = 0.0;
    Optimizer opt(Kind::adamw, hp);
    std::vector<double> value = {1.0};
    const std::vector<double> grad = {1.0};
    auto slots = one_slot(value, grad);
    opt.step(0.1, slots);
    CHECK(std::abs(value[0] - 0.9) < 1e-6);
}

TEST_CASE("sgd_momentum matches a hand-unrolled recurrence") {
    Hyper hp;
    hp.momentum = 0.9;
    hp.weight_decay = 0.0;
    Optimizer opt(Kind::sgd_momentum, hp);
    std::vector<double> value = {1.0, -2.0};
    const std::vector<double> g1 = {0.5, 1.0};
    const std::vector<double> g2 = {-0.25, 2.0};
    const double lr = 0.1;

    // v1 = g1; p1 = p0 - lr*v1; v2 = 0.9*v1 + g2; p2 = p1 - lr*v2
    const double p0_expect = 1.0 - lr * 0.5 - lr * (0.9 * 0.5 + -0.25);
    const double p1_expect = -2.0 - lr * 1.0 - lr * (0.9 * 1.0 + 2.0);

    auto slots = one_slot(value, g1);
    opt.step(lr, slots);
    slots = one_slot(value, g2);
    opt.step(lr, slots);
    CHECK(value[0] == doctest::Approx(p0_expect).epsilon(1e-15));
    CHECK(value[1] == doctest::Approx(p1_expect).epsilon(1e-15));
    CHECK(opt.step_count() == 2);
}

TEST_CASE("decoupled weight decay shrinks parameters even at zero gradient") {
    Hyper hp;
    hp.weight_decay = 0.1;
    Optimizer opt(Kind::adamw, hp);
    std::vector<double> value = {2.0};
    const std::vector<double> grad = {0.0};
    auto slots = one_slot(value, grad);
    opt.step(0.5, slots);
    CHECK(value[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0).epsilon(1e-12));

    // decay-exempt slot stays put
    Optimizer opt2(Kind::adamw, hp);
    std::vector<double> value2 = {2.0};
    auto slots2 = one_slot(value2, grad, /*decay=*/false);
    opt2.step(0.5, slots2);
    CHECK(value2[0] == 2.0);
}

TEST_CASE("global-norm clipping caps the applied gradient") {
    Hyper hp;
    hp.clip_norm = 1.0;
    hp.momentum = 0.0;
    Optimizer plain(Kind::sgd_momentum, Hyper{.momentum = 0.0});
    Optimizer clipped(Kind::sgd_momentum, hp);

    std::vector<double> a = {0.0}, b = {0.0};
    const std::vector<double> grad = {30.0, 40.0}; // norm 50 over two slots
    std::vector<double> a2 = {0.0}, b2 = {0.0};
    std::vector<ParamSlot> slots_plain = {
        {std::span<double>(a), std::span<const double>(grad.data(), 1), true},
        {std::span<double>(b), std::span<const double>(grad.data() + 1, 1), true}};
    std::vector<ParamSlot> slots_clip = {
        {std::span<double>(a2), std::span<const double>(grad.data(), 1), true},
        {std::span<double>(b2), std::span<const double>(grad.data() + 1, 1), true}};
    plain.step(1.0, slots_plain);
    clipped.step(1.0, slots_clip);
    CHECK(a[0] == doctest::Approx(-30.0));
    CHECK(a2[0] == doctest::Approx(-30.0 / 50.0).epsilon(1e-12));
    CHECK(b2[0] == doctest::Approx(-40.0 / 50.0).epsilon(1e-12));
}

TEST_CASE("optimizer rejects layout changes and non-finite gradients") {
    Optimizer opt(Kind::adamw, {});
    std::vector<double> value = {1.0, 2.0};
    const std::vector<double> grad = {0.1, 0.2};
    auto slots = one_slot(value, grad);
    opt.step(0.1, slots);

    std::vector<double> shorter = {1.0};
    const std::vector<double> g_short = {0.1};
    auto bad = one_slot(shorter, g_short);
    CHECK_THROWS_AS(opt.step(0.1, bad), svfit::DimensionMismatch);

    const std::vector<double> g_nan = {std::nan(""), 0.0};
    std::vector<ParamSlot> nan_slots = {{std::span<double>(value), std::span<const double>(g_nan), true}};
    CHECK_THROWS_AS(opt.step(0.1, nan_slots), svfit::NonFiniteGradient);
}

TEST_CASE("updates are bitwise reproducible") {
    for (Kind kind : {Kind::adamw, Kind::sgd_momentum}) {
        std::vector<double> v1 = {0.3, -0.7, 1.1};
        std::vector<double> v2 = v1;
        Optimizer o1(kind, {.lr_base = 0.01, .weight_decay = 0.05});
        Optimizer o2(kind, {.lr_base = 0.01, .weight_decay = 0.05});
        for (int s = 0; s < 20; ++s) {
            const std::vector<double> grad = {0.1 * s, -0.2, 0.05 * s};
            auto s1 = one_slot(v1, grad);
            auto s2 = one_slot(v2, grad);
            o1.step(0.01, s1);
            o2.step(0.01, s2);
        }
        CHECK(v1 == v2);
    }
}
