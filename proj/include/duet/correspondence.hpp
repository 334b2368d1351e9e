#pragma once

#include "duet/types.hpp"

#include <utility>
#include <vector>

namespace duet {

// Pairwise cosine agreements between N_a audio embeddings (rows) and N_c
// caption embeddings (columns). Entries lie in [-1, 1] up to rounding.
struct AgreementMatrix {
    Mat values;

    Index num_audios() const { return values.rows(); }
    Index num_captions() const { return values.cols(); }
};

// Which axis of a correspondence matrix is stochastic.
//   OverAudios:   each column is a distribution over audios given a caption.
//   OverCaptions: each row is a distribution over captions given an audio.
enum class Orientation { OverAudios, OverCaptions };

struct CorrespondenceDistribution {
    Mat values;
    Orientation orientation;
};

using DistributionPair = std::pair<CorrespondenceDistribution, CorrespondenceDistribution>;

// Softmax temperature and the mixing weight of the combined objective.
struct LossConfig {
    double tau = 0.05;
    double lambda = 0.0;

    void validate() const;
};

// values[i][j] = dot(emb_a row i, emb_c row j). Inputs must have unit rows
// (checked to 1e-6), so this equals the cosine agreement.
AgreementMatrix agreement_matrix(const Mat& emb_a, const Mat& emb_c);

// (q over audios, q over captions): temperature-scaled softmax of the
// agreements along each axis.
DistributionPair distributions_from_agreements(const AgreementMatrix& c, double tau);

// Hard targets: the n x n identity in both orientations.
DistributionPair identity_targets(Index n);

// Entrywise mean of the members' agreement values.
AgreementMatrix ensemble_agreements(const std::vector<AgreementMatrix>& members);

// Estimated correspondence targets from ensembled agreements; shares the
// softmax code path with distributions_from_agreements.
DistributionPair soft_targets(const AgreementMatrix& ensembled, double tau);

}  // namespace duet
