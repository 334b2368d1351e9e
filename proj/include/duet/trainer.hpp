#pragma once

#include "duet/correspondence.hpp"
#include "duet/dataset.hpp"
#include "duet/encoder.hpp"
#include "duet/loss.hpp"
#include "duet/optim.hpp"
#include "duet/serialize.hpp"
#include "duet/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace duet {

struct TrainConfig {
    int stage = 1;
    Index batch_size = 64;
    ScheduleConfig schedule;  // steps_per_epoch is derived from the train split
    LossConfig loss;
    std::uint64_t seed = 0;
    std::vector<Index> hidden_dims = {256};
    Index embedding_dim = 64;
    std::vector<std::string> teacher_checkpoint_paths;  // stage 2, M >= 1

    void validate() const;
};

// One training batch; captions[i] is the caption sampled for audios[i], and
// audios are pairwise distinct.
struct Batch {
    std::vector<Index> audios;
    std::vector<Index> captions;

    Index size() const { return static_cast<Index>(audios.size()); }
};

// One caption drawn uniformly per split audio (generator seeded with
// seed ^ epoch_index), pairs shuffled, then chunked; a final batch shorter
// than batch_size is kept only if it still has >= 2 pairs.
std::vector<Batch> make_epoch_batches(const DatasetManifest& manifest, SplitName split,
                                      Index batch_size, std::uint64_t seed, Index epoch_index);

struct EpochRecord {
    Index epoch = 0;
    double train_loss = 0.0;     // mean per-batch loss
    double val_map_at_10 = 0.0;
    double lr = 0.0;             // learning rate of the epoch's last step
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    Index best_epoch = 0;
};

// Per-step snapshot handed to an observer; matrix pointers are only valid
// during the call. teacher is null when no soft targets were computed.
struct StepInfo {
    Index epoch = 0;
    Index step_in_epoch = 0;
    Index global_step = 0;
    double lr = 0.0;
    double loss = 0.0;
    const AgreementMatrix* student = nullptr;
    const AgreementMatrix* teacher = nullptr;
};

using StepObserver = std::function<void(const StepInfo&)>;

// Ensembled agreements of frozen teachers on one batch's features.
AgreementMatrix teacher_batch_agreements(const std::vector<DualEncoderParams>& teachers,
                                         const Mat& audio_features, const Mat& caption_features);

struct BatchResult {
    double loss = 0.0;
    AgreementMatrix student;
    DualEncoderGrads grads;
};

// Loss and all parameter gradients for one batch. A null teacher selects
// hard identity targets (the stage-1 objective); otherwise the objective is
// lambda-combined, with exact single-objective code paths at the endpoints.
BatchResult batch_loss_and_grads(const DualEncoderParams& params, const Mat& audio_features,
                                 const Mat& caption_features,
                                 const AgreementMatrix* teacher_ensembled,
                                 const LossConfig& cfg);

// Contrastive training with hard targets. Fresh Glorot parameters unless
// init is given. Returns the checkpoint of the epoch with the best
// validation mAP@10 (ties keep the earlier epoch) and the full history.
std::pair<Checkpoint, TrainHistory> train_stage1(const Dataset& data, const TrainConfig& cfg,
                                                 const DualEncoderParams* init = nullptr,
                                                 const StepObserver& observer = {});

// Fine-tuning from init against frozen teachers. Per batch the teachers'
// ensembled agreements provide soft targets; cfg.loss.lambda mixes in the
// hard-target objective (lambda == 1 reproduces a continued stage-1 run
// exactly, step for step).
std::pair<Checkpoint, TrainHistory> train_stage2(const Dataset& data, const TrainConfig& cfg,
                                                 const DualEncoderParams& init,
                                                 const std::vector<DualEncoderParams>& teachers,
                                                 const StepObserver& observer = {});

}  // namespace duet
