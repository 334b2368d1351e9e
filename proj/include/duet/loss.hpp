#pragma once

#include "duet/correspondence.hpp"
#include "duet/types.hpp"

namespace duet {

// Mean over queries of -sum(p .* log_q). Queries index the non-stochastic
// axis: columns for OverAudios, rows for OverCaptions. log_q must be the
// log of a distribution stochastic along the same orientation as p, and it
// must come from log-sum-exp, never from log(softmax(...)).
double cross_entropy_mean(const CorrespondenceDistribution& p, const Mat& log_q,
                          Orientation log_q_orientation);

// H(p_a, q_a) + H(p_c, q_c) where q is the temperature-scaled softmax of the
// agreements in each direction. Every objective below goes through here, so
// hard and soft targets share one code path.
double correspondence_loss(const CorrespondenceDistribution& p_a,
                           const CorrespondenceDistribution& p_c, const AgreementMatrix& c,
                           const LossConfig& cfg);

// Contrastive objective with hard identity targets; c must be square.
double supervised_loss(const AgreementMatrix& c, const LossConfig& cfg);

// Targets estimated from the (ensembled) teacher agreements.
double distillation_loss(const AgreementMatrix& c_student,
                         const AgreementMatrix& c_teacher_ensembled, const LossConfig& cfg);

// lambda * supervised + (1 - lambda) * distillation. The endpoints
// short-circuit to the exact single-objective code path.
double combined_loss(const AgreementMatrix& c_student,
                     const AgreementMatrix& c_teacher_ensembled, const LossConfig& cfg);

// Gradient of correspondence_loss w.r.t. the agreement values, assuming the
// targets are stochastic along their query axis (identity and softmax targets
// always are): (q - p) / (N_queries * tau) per direction, summed over both
// directions. When targets equal predictions bitwise the result is exactly
// zero.
Mat loss_gradient_wrt_agreements(const CorrespondenceDistribution& p_a,
                                 const CorrespondenceDistribution& p_c,
                                 const AgreementMatrix& c, const LossConfig& cfg);

}  // namespace duet
