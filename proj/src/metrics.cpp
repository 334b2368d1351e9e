#include "duet/metrics.hpp"

#include "duet/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

namespace duet {

namespace {

// Split audios in manifest order paired with their captions ascending.
struct SplitView {
    std::vector<Index> audios;
    std::vector<Index> captions;
    std::vector<Index> audio_pos_of_caption;  // position of the caption's audio in audios
};

SplitView split_view(const Dataset& data, SplitName split) {
    SplitView view;
    view.audios = data.split(split);
    if (view.audios.empty()) {
        throw DataError(std::string("split ") + split_name_str(split) + " is empty");
    }
    std::vector<Index> pos(static_cast<std::size_t>(data.num_audios()), -1);
    for (std::size_t i = 0; i < view.audios.size(); ++i) {
        pos[static_cast<std::size_t>(view.audios[i])] = static_cast<Index>(i);
    }
    for (Index c = 0; c < data.num_captions(); ++c) {
        const Index owner = data.manifest.caption_to_audio[static_cast<std::size_t>(c)];
        const Index p = pos[static_cast<std::size_t>(owner)];
        if (p < 0) continue;
        view.captions.push_back(c);
        view.audio_pos_of_caption.push_back(p);
    }
    return view;
}

Mat gather_rows(const Mat& m, const std::vector<Index>& rows) {
    Mat out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Index>(i)) = m.row(rows[i]);
    }
    return out;
}

}  // namespace

std::vector<Index> rank_candidates(const Vec& scores) {
    if (scores.size() == 0) throw DataError("rank_candidates: no candidates");
    if (!scores.allFinite()) throw DataError("rank_candidates: non-finite score");
    std::vector<Index> order(static_cast<std::size_t>(scores.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    return order;
}

double average_precision_at_k(const std::vector<Index>& ranking,
                              const std::vector<Index>& relevant, Index k) {
    if (relevant.empty()) throw DataError("average_precision_at_k: empty relevant set");
    if (k < 1) throw ConfigError("average_precision_at_k: k must be positive");
    const std::unordered_set<Index> rel(relevant.begin(), relevant.end());
    const Index depth = std::min<Index>(k, static_cast<Index>(ranking.size()));
    double sum = 0.0;
    Index hits = 0;
    for (Index r = 0; r < depth; ++r) {
        if (rel.count(ranking[static_cast<std::size_t>(r)])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(std::min<Index>(static_cast<Index>(rel.size()), k));
}

double recall_at_k(const std::vector<Index>& ranking, const std::vector<Index>& relevant,
                   Index k) {
    if (relevant.empty()) throw DataError("recall_at_k: empty relevant set");
    if (k < 1) throw ConfigError("recall_at_k: k must be positive");
    const std::unordered_set<Index> rel(relevant.begin(), relevant.end());
    const Index depth = std::min<Index>(k, static_cast<Index>(ranking.size()));
    Index hits = 0;
    for (Index r = 0; r < depth; ++r) {
        if (rel.count(ranking[static_cast<std::size_t>(r)])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(rel.size());
}

RetrievalMetrics compute_retrieval_metrics(const Mat& scores,
                                           const std::vector<std::vector<Index>>& relevant_of) {
    if (static_cast<std::size_t>(scores.rows()) != relevant_of.size()) {
        throw ShapeError("compute_retrieval_metrics: one relevant set per query row required");
    }
    if (scores.rows() == 0) throw DataError("compute_retrieval_metrics: no queries");

    RetrievalMetrics m;
    m.num_queries = scores.rows();
    for (Index q = 0; q < scores.rows(); ++q) {
        const Vec row = scores.row(q).transpose();
        const std::vector<Index> ranking = rank_candidates(row);
        const std::vector<Index>& relevant = relevant_of[static_cast<std::size_t>(q)];
        m.map_at_10 += average_precision_at_k(ranking, relevant, 10);
        m.r_at_1 += recall_at_k(ranking, relevant, 1);
        m.r_at_5 += recall_at_k(ranking, relevant, 5);
        m.r_at_10 += recall_at_k(ranking, relevant, 10);
    }
    const double n = static_cast<double>(m.num_queries);
    m.map_at_10 /= n;
    m.r_at_1 /= n;
    m.r_at_5 /= n;
    m.r_at_10 /= n;
    return m;
}

RetrievalMetrics evaluate_retrieval(const DualEncoderParams& params, const Dataset& data,
                                    SplitName split) {
    const SplitView view = split_view(data, split);
    const Mat audio_emb = forward(params.audio, gather_rows(data.audio_features, view.audios));
    const Mat caption_emb =
        forward(params.caption, gather_rows(data.caption_features, view.captions));
    const Mat scores = caption_emb * audio_emb.transpose();

    std::vector<std::vector<Index>> relevant_of(view.captions.size());
    for (std::size_t q = 0; q < view.captions.size(); ++q) {
        relevant_of[q] = {view.audio_pos_of_caption[q]};
    }
    return compute_retrieval_metrics(scores, relevant_of);
}

AgreementMatrix split_agreement_matrix(const DualEncoderParams& params, const Dataset& data,
                                       SplitName split) {
    const SplitView view = split_view(data, split);
    const Mat audio_emb = forward(params.audio, gather_rows(data.audio_features, view.audios));
    const Mat caption_emb =
        forward(params.caption, gather_rows(data.caption_features, view.captions));
    return agreement_matrix(audio_emb, caption_emb);
}

}  // namespace duet
