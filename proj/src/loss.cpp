#include "duet/loss.hpp"

#include "duet/error.hpp"
#include "duet/numerics.hpp"

#include <string>

namespace duet {

double cross_entropy_mean(const CorrespondenceDistribution& p, const Mat& log_q,
                          Orientation log_q_orientation) {
    if (p.values.rows() != log_q.rows() || p.values.cols() != log_q.cols()) {
        throw ShapeError("cross_entropy_mean: p and log_q shapes differ");
    }
    if (p.orientation != log_q_orientation) {
        throw ContractError("cross_entropy_mean: orientation mismatch between p and log_q");
    }
    const Index num_queries =
        p.orientation == Orientation::OverAudios ? p.values.cols() : p.values.rows();
    return -(p.values.cwiseProduct(log_q)).sum() / static_cast<double>(num_queries);
}

double correspondence_loss(const CorrespondenceDistribution& p_a,
                           const CorrespondenceDistribution& p_c, const AgreementMatrix& c,
                           const LossConfig& cfg) {
    cfg.validate();
    const double h_a =
        cross_entropy_mean(p_a, log_softmax_columns(c.values, cfg.tau), Orientation::OverAudios);
    const double h_c =
        cross_entropy_mean(p_c, log_softmax_rows(c.values, cfg.tau), Orientation::OverCaptions);
    return h_a + h_c;
}

namespace {

void require_square(const AgreementMatrix& c, const char* who) {
    if (c.values.rows() != c.values.cols()) {
        throw ShapeError(std::string(who) + ": agreement matrix must be square, got " +
                         std::to_string(c.values.rows()) + "x" +
                         std::to_string(c.values.cols()));
    }
}

}  // namespace

double supervised_loss(const AgreementMatrix& c, const LossConfig& cfg) {
    require_square(c, "supervised_loss");
    const auto [p_a, p_c] = identity_targets(c.values.rows());
    return correspondence_loss(p_a, p_c, c, cfg);
}

double distillation_loss(const AgreementMatrix& c_student,
                         const AgreementMatrix& c_teacher_ensembled, const LossConfig& cfg) {
    require_square(c_student, "distillation_loss");
    if (c_student.values.rows() != c_teacher_ensembled.values.rows() ||
        c_student.values.cols() != c_teacher_ensembled.values.cols()) {
        throw ShapeError("distillation_loss: student and teacher shapes differ");
    }
    const auto [p_a, p_c] = soft_targets(c_teacher_ensembled, cfg.tau);
    return correspondence_loss(p_a, p_c, c_student, cfg);
}

double combined_loss(const AgreementMatrix& c_student,
                     const AgreementMatrix& c_teacher_ensembled, const LossConfig& cfg) {
    cfg.validate();
    if (cfg.lambda == 1.0) return supervised_loss(c_student, cfg);
    if (cfg.lambda == 0.0) return distillation_loss(c_student, c_teacher_ensembled, cfg);
    return cfg.lambda * supervised_loss(c_student, cfg) +
           (1.0 - cfg.lambda) * distillation_loss(c_student, c_teacher_ensembled, cfg);
}

Mat loss_gradient_wrt_agreements(const CorrespondenceDistribution& p_a,
                                 const CorrespondenceDistribution& p_c,
                                 const AgreementMatrix& c, const LossConfig& cfg) {
    cfg.validate();
    if (p_a.values.rows() != c.values.rows() || p_a.values.cols() != c.values.cols() ||
        p_c.values.rows() != c.values.rows() || p_c.values.cols() != c.values.cols()) {
        throw ShapeError("loss_gradient_wrt_agreements: target shape does not match agreements");
    }
    if (p_a.orientation != Orientation::OverAudios ||
        p_c.orientation != Orientation::OverCaptions) {
        throw ContractError("loss_gradient_wrt_agreements: unexpected target orientations");
    }
    const Index n_a = c.values.rows();
    const Index n_c = c.values.cols();

    // d/dC of -(1/Nq) sum p log q through the temperature-scaled softmax is
    // (q - p) / (Nq * tau) per direction for normalized targets. Writing it
    // as the plain difference (no colsum(p) mass factor, which is 1 only up
    // to rounding) makes the gradient exactly zero when p == q bitwise, so
    // self-distillation from the teacher's own parameters is a no-op that
    // Adam cannot amplify.
    const Mat q_a = stable_softmax_columns(c.values, cfg.tau);
    const Mat q_c = stable_softmax_rows(c.values, cfg.tau);

    Mat grad = (q_a - p_a.values) / (static_cast<double>(n_c) * cfg.tau);
    grad += (q_c - p_c.values) / (static_cast<double>(n_a) * cfg.tau);
    return grad;
}

}  // namespace duet
