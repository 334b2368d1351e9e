#pragma once

#include "duet/correspondence.hpp"
#include "duet/dataset.hpp"
#include "duet/encoder.hpp"
#include "duet/types.hpp"

#include <vector>

namespace duet {

// Text→audio retrieval quality. All values are fractions in [0, 1].
struct RetrievalMetrics {
    double map_at_10 = 0.0;
    double r_at_1 = 0.0;
    double r_at_5 = 0.0;
    double r_at_10 = 0.0;
    Index num_queries = 0;
};

// Candidate indices sorted by descending score; ties broken by ascending
// candidate index so rankings are reproducible.
std::vector<Index> rank_candidates(const Vec& scores);

// (1/min(|relevant|, k)) * sum over the top k ranks of [hit] * hits_so_far/rank.
// With a single relevant item this is 1/rank if rank <= k, else 0.
double average_precision_at_k(const std::vector<Index>& ranking,
                              const std::vector<Index>& relevant, Index k);

// |top-k of ranking ∩ relevant| / |relevant|.
double recall_at_k(const std::vector<Index>& ranking, const std::vector<Index>& relevant,
                   Index k);

// Aggregates over one score matrix: row q holds query q's scores against all
// candidates, relevant_of[q] lists its relevant candidate indices.
RetrievalMetrics compute_retrieval_metrics(const Mat& scores,
                                           const std::vector<std::vector<Index>>& relevant_of);

// Embeds all audios of the split (manifest order) and all their captions
// (ascending caption index); every caption is one query and its own audio is
// the single relevant candidate.
RetrievalMetrics evaluate_retrieval(const DualEncoderParams& params, const Dataset& data,
                                    SplitName split);

// Full agreement matrix of a split: rows = split audios in manifest order,
// cols = captions of split audios in ascending caption order.
AgreementMatrix split_agreement_matrix(const DualEncoderParams& params, const Dataset& data,
                                       SplitName split);

}  // namespace duet
