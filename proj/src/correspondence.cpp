#include "duet/correspondence.hpp"

#include "duet/error.hpp"
#include "duet/numerics.hpp"

#include <cmath>
#include <string>

namespace duet {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("LossConfig: tau must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("LossConfig: lambda must lie in [0, 1]");
    }
}

namespace {

void check_unit_rows(const Mat& emb, const char* name) {
    for (Index i = 0; i < emb.rows(); ++i) {
        if (std::abs(emb.row(i).norm() - 1.0) > 1e-6) {
            throw ContractError(std::string("agreement_matrix: ") + name + " row " +
                                std::to_string(i) + " is not unit-norm");
        }
    }
}

}  // namespace

AgreementMatrix agreement_matrix(const Mat& emb_a, const Mat& emb_c) {
    if (emb_a.cols() != emb_c.cols()) {
        throw ShapeError("agreement_matrix: embedding dimensions differ (" +
                         std::to_string(emb_a.cols()) + " vs " + std::to_string(emb_c.cols()) +
                         ")");
    }
    check_unit_rows(emb_a, "audio");
    check_unit_rows(emb_c, "caption");
    return AgreementMatrix{emb_a * emb_c.transpose()};
}

DistributionPair distributions_from_agreements(const AgreementMatrix& c, double tau) {
    return {CorrespondenceDistribution{stable_softmax_columns(c.values, tau),
                                       Orientation::OverAudios},
            CorrespondenceDistribution{stable_softmax_rows(c.values, tau),
                                       Orientation::OverCaptions}};
}

DistributionPair identity_targets(Index n) {
    if (n < 1) throw ConfigError("identity_targets: n must be >= 1");
    Mat eye = Mat::Identity(n, n);
    return {CorrespondenceDistribution{eye, Orientation::OverAudios},
            CorrespondenceDistribution{eye, Orientation::OverCaptions}};
}

AgreementMatrix ensemble_agreements(const std::vector<AgreementMatrix>& members) {
    if (members.empty()) throw ConfigError("ensemble_agreements: empty member list");
    const Index rows = members.front().values.rows();
    const Index cols = members.front().values.cols();
    if (members.size() == 1) return members.front();
    Mat sum = Mat::Zero(rows, cols);
    for (std::size_t m = 0; m < members.size(); ++m) {
        if (members[m].values.rows() != rows || members[m].values.cols() != cols) {
            throw ShapeError("ensemble_agreements: member " + std::to_string(m) +
                             " has mismatched shape");
        }
        sum += members[m].values;
    }
    return AgreementMatrix{sum / static_cast<double>(members.size())};
}

DistributionPair soft_targets(const AgreementMatrix& ensembled, double tau) {
    return distributions_from_agreements(ensembled, tau);
}

}  // namespace duet
