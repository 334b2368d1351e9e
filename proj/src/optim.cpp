#include "duet/optim.hpp"

#include "duet/error.hpp"

#include <cmath>
#include <string>

namespace duet {

void ScheduleConfig::validate() const {
    if (!(lr_final > 0.0) || !(lr_peak >= lr_final)) {
        throw ConfigError("ScheduleConfig: need lr_peak >= lr_final > 0");
    }
    if (epochs < 1 || steps_per_epoch < 1) {
        throw ConfigError("ScheduleConfig: epochs and steps_per_epoch must be positive");
    }
    if (warmup_epochs < 0 || warmup_epochs >= epochs) {
        throw ConfigError("ScheduleConfig: warmup_epochs must lie in [0, epochs)");
    }
}

double lr_at(Index step, const ScheduleConfig& cfg) {
    cfg.validate();
    const Index total = cfg.total_steps();
    if (step < 0 || step >= total) {
        throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(total) + ")");
    }
    const Index warmup = cfg.warmup_steps();
    if (step < warmup) {
        return cfg.lr_peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const Index span = total - 1 - warmup;
    const double progress =
        span > 0 ? static_cast<double>(step - warmup) / static_cast<double>(span) : 1.0;
    return cfg.lr_final + 0.5 * (cfg.lr_peak - cfg.lr_final) * (1.0 + std::cos(M_PI * progress));
}

AdamState AdamState::for_size(Index n) {
    AdamState s;
    s.m = Vec::Zero(n);
    s.v = Vec::Zero(n);
    return s;
}

void adam_step(Vec& params, const Vec& grads, AdamState& state, double lr) {
    if (!(lr > 0.0)) throw ConfigError("adam_step: lr must be positive");
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size()) {
        throw ShapeError("adam_step: parameter/gradient/state sizes differ");
    }
    if (!grads.allFinite()) throw NumericError("adam_step: non-finite gradient");

    state.step += 1;
    const double t = static_cast<double>(state.step);
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    params.array() -=
        lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + state.eps);
}

void adam_step(DualEncoderParams& params, const DualEncoderGrads& grads, AdamState& state,
               double lr) {
    Vec theta = to_vector(params);
    const Vec g = to_vector(params, grads);
    adam_step(theta, g, state, lr);
    from_vector(theta, params);
}

}  // namespace duet
