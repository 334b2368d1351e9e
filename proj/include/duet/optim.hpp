#pragma once

#include "duet/encoder.hpp"
#include "duet/types.hpp"

namespace duet {

// Warmup plus cosine decay, defined per step. The defaults are the training
// recipe: 20 epochs with one warmup epoch, decaying 2e-5 -> 1e-7.
struct ScheduleConfig {
    double lr_peak = 2e-5;
    double lr_final = 1e-7;
    Index epochs = 20;
    Index warmup_epochs = 1;
    Index steps_per_epoch = 0;

    Index total_steps() const { return epochs * steps_per_epoch; }
    Index warmup_steps() const { return warmup_epochs * steps_per_epoch; }
    void validate() const;
};

// Learning rate at a 0-based global step. Linear ramp 0 -> lr_peak across
// the warmup steps, then lr_final + (lr_peak - lr_final) * (1 + cos(pi *
// progress)) / 2 with progress spanning [0, 1] over the remaining steps.
double lr_at(Index step, const ScheduleConfig& cfg);

// Bias-corrected Adam over the flat parameter vector.
struct AdamState {
    Index step = 0;
    Vec m;
    Vec v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_size(Index n);
};

// One Adam update of a raw vector; updates are elementwise, so the result
// does not depend on any tensor iteration order.
void adam_step(Vec& params, const Vec& grads, AdamState& state, double lr);

// One Adam update of both encoder heads.
void adam_step(DualEncoderParams& params, const DualEncoderGrads& grads, AdamState& state,
               double lr);

}  // namespace duet
