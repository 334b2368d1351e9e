#include "duet/encoder.hpp"
#include "duet/error.hpp"
#include "duet/numerics.hpp"
#include "duet/optim.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using duet::Index;
using duet::Mat;
using duet::Vec;

namespace {

bool bit_equal(const Vec& a, const Vec& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) ==
               0;
}

}  // namespace

TEST_CASE("schedule hits the recipe endpoints exactly") {
    duet::ScheduleConfig cfg;
    cfg.steps_per_epoch = 10;
    cfg.validate();
    // Last warmup step reaches the peak exactly.
    CHECK(std::abs(duet::lr_at(9, cfg) - 2e-5) <= 1e-12 * 2e-5);
    // Final step lands on lr_final because cos(pi) is exactly -1.
    CHECK(std::abs(duet::lr_at(199, cfg) - 1e-7) <= 1e-12 * 1e-7);
}

TEST_CASE("cosine midpoint without warmup") {
    duet::ScheduleConfig cfg;
    cfg.lr_peak = 1e-3;
    cfg.lr_final = 1e-5;
    cfg.epochs = 5;
    cfg.warmup_epochs = 0;
    cfg.steps_per_epoch = 5;
    // 25 steps, progress = step / 24; step 12 is the exact midpoint.
    const double mid = 0.5 * (cfg.lr_peak + cfg.lr_final);
    CHECK(duet::lr_at(12, cfg) == doctest::Approx(mid).epsilon(1e-12));
    CHECK(duet::lr_at(0, cfg) == doctest::Approx(cfg.lr_peak).epsilon(1e-12));
    CHECK(duet::lr_at(24, cfg) == doctest::Approx(cfg.lr_final).epsilon(1e-12));
}

TEST_CASE("warmup ramps linearly and decay is monotone") {
    duet::ScheduleConfig cfg;
    cfg.lr_peak = 1e-3;
    cfg.lr_final = 1e-6;
    cfg.epochs = 4;
    cfg.warmup_epochs = 1;
    cfg.steps_per_epoch = 8;

    for (Index s = 0; s < cfg.warmup_steps(); ++s) {
        const double expected = cfg.lr_peak * double(s + 1) / double(cfg.warmup_steps());
        CHECK(duet::lr_at(s, cfg) == doctest::Approx(expected).epsilon(1e-12));
    }
    double prev = duet::lr_at(cfg.warmup_steps(), cfg);
    CHECK(prev == doctest::Approx(cfg.lr_peak).epsilon(1e-12));
    for (Index s = cfg.warmup_steps() + 1; s < cfg.total_steps(); ++s) {
        const double lr = duet::lr_at(s, cfg);
        CHECK(lr <= prev);
        CHECK(lr >= cfg.lr_final - 1e-18);
        prev = lr;
    }
}

TEST_CASE("schedule validation") {
    duet::ScheduleConfig cfg;
    cfg.steps_per_epoch = 10;

    duet::ScheduleConfig bad = cfg;
    bad.lr_peak = 0.0;
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);
    bad = cfg;
    bad.lr_final = 2.0 * bad.lr_peak;
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);
    bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);
    bad = cfg;
    bad.warmup_epochs = bad.epochs;
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);
    bad = cfg;
    bad.steps_per_epoch = 0;
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);

    CHECK_THROWS_AS(duet::lr_at(-1, cfg), duet::ConfigError);
    CHECK_THROWS_AS(duet::lr_at(cfg.total_steps(), cfg), duet::ConfigError);
}

TEST_CASE("adam leaves parameters unchanged on zero gradients") {
    duet::Rng rng(3);
    Vec params(6);
    for (Index i = 0; i < params.size(); ++i) params(i) = rng.normal();
    const Vec before = params;
    duet::AdamState state = duet::AdamState::for_size(params.size());
    duet::adam_step(params, Vec::Zero(6), state, 1e-3);
    CHECK(bit_equal(params, before));
    CHECK(state.step == 1);
}

TEST_CASE("first adam step moves each coordinate by about lr") {
    duet::Rng rng(5);
    Vec params = Vec::Zero(8);
    Vec grads(8);
    for (Index i = 0; i < grads.size(); ++i) {
        const double mag = 0.1 + 0.9 * rng.uniform();
        grads(i) = (rng.uniform() < 0.5 ? -1.0 : 1.0) * mag;
    }
    duet::AdamState state = duet::AdamState::for_size(params.size());
    const double lr = 1e-3;
    duet::adam_step(params, grads, state, lr);
    for (Index i = 0; i < params.size(); ++i) {
        // After bias correction the first update is -lr * g / (|g| + eps).
        const double expected = -lr * grads(i) / (std::abs(grads(i)) + state.eps);
        CHECK(std::abs(params(i) - expected) / lr < 1e-9);
    }
}

TEST_CASE("adam minimizes a quadratic") {
    Vec x(4);
    x << 1.0, -2.0, 0.5, 3.0;
    duet::AdamState state = duet::AdamState::for_size(x.size());
    for (int s = 0; s < 500; ++s) {
        const Vec g = 2.0 * x;
        duet::adam_step(x, g, state, 0.05);
    }
    CHECK(x.norm() < 1e-3);
    CHECK(state.step == 500);
}

TEST_CASE("adam input validation") {
    Vec params = Vec::Zero(4);
    duet::AdamState state = duet::AdamState::for_size(4);
    CHECK_THROWS_AS(duet::adam_step(params, Vec::Zero(5), state, 1e-3), duet::ShapeError);
    Vec bad = Vec::Zero(4);
    bad(2) = std::nan("");
    CHECK_THROWS_AS(duet::adam_step(params, bad, state, 1e-3), duet::NumericError);
}

TEST_CASE("the dual-encoder overload matches the flat path bit for bit") {
    const std::vector<Index> dims{5, 6, 3};
    duet::DualEncoderParams params{duet::init_params(dims, 11), duet::init_params(dims, 12)};
    duet::DualEncoderParams mirror = params;

    duet::Rng rng(13);
    const Index batch = 4;
    Mat feats(batch, dims.front()), upstream(batch, dims.back());
    for (Index i = 0; i < feats.size(); ++i) feats.data()[i] = rng.normal();
    for (Index i = 0; i < upstream.size(); ++i) upstream.data()[i] = rng.normal();
    const duet::DualEncoderGrads grads{duet::forward_backward(params.audio, feats, upstream),
                                       duet::forward_backward(params.caption, feats, upstream)};

    const Index n = duet::param_count(params);
    duet::AdamState s1 = duet::AdamState::for_size(n);
    duet::AdamState s2 = duet::AdamState::for_size(n);

    duet::adam_step(params, grads, s1, 3e-4);

    Vec flat_params = duet::to_vector(mirror);
    const Vec flat_grads = duet::to_vector(mirror, grads);
    duet::adam_step(flat_params, flat_grads, s2, 3e-4);
    duet::from_vector(flat_params, mirror);

    CHECK(duet::bit_equal(params, mirror));
    CHECK(bit_equal(s1.m, s2.m));
    CHECK(bit_equal(s1.v, s2.v));
}
