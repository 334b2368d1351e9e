#include "duet/trainer.hpp"

#include "duet/error.hpp"
#include "duet/metrics.hpp"
#include "duet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace duet {

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    loss.validate();
    if (!(schedule.lr_final > 0.0) || !(schedule.lr_peak >= schedule.lr_final)) {
        throw ConfigError("need lr_peak >= lr_final > 0");
    }
    if (schedule.epochs < 1) throw ConfigError("epochs must be positive");
    if (schedule.warmup_epochs < 0 || schedule.warmup_epochs >= schedule.epochs) {
        throw ConfigError("warmup_epochs must lie in [0, epochs)");
    }
    for (Index h : hidden_dims) {
        if (h < 1) throw ConfigError("hidden layer widths must be positive");
    }
    if (embedding_dim < 2) throw ConfigError("embedding_dim must be at least 2");
}

std::vector<Batch> make_epoch_batches(const DatasetManifest& manifest, SplitName split,
                                      Index batch_size, std::uint64_t seed, Index epoch_index) {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    const std::vector<Index>& audios = manifest.split(split);
    if (audios.empty()) {
        throw DataError(std::string("split ") + split_name_str(split) + " is empty");
    }

    Index num_audios = 0;
    for (Index a : manifest.caption_to_audio) num_audios = std::max(num_audios, a + 1);
    for (Index a : audios) num_audios = std::max(num_audios, a + 1);
    std::vector<std::vector<Index>> captions_of(static_cast<std::size_t>(num_audios));
    for (std::size_t j = 0; j < manifest.caption_to_audio.size(); ++j) {
        captions_of[static_cast<std::size_t>(manifest.caption_to_audio[j])].push_back(
            static_cast<Index>(j));
    }

    Rng rng(seed ^ static_cast<std::uint64_t>(epoch_index));
    std::vector<std::pair<Index, Index>> pairs;
    pairs.reserve(audios.size());
    for (Index a : audios) {
        const auto& caps = captions_of[static_cast<std::size_t>(a)];
        if (caps.empty()) throw DataError("audio " + std::to_string(a) + " has no captions");
        pairs.emplace_back(a, caps[rng.index(caps.size())]);
    }
    rng.shuffle(pairs);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop =
            std::min(pairs.size(), start + static_cast<std::size_t>(batch_size));
        if (stop - start < 2) break;
        Batch b;
        for (std::size_t i = start; i < stop; ++i) {
            b.audios.push_back(pairs[i].first);
            b.captions.push_back(pairs[i].second);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

AgreementMatrix teacher_batch_agreements(const std::vector<DualEncoderParams>& teachers,
                                         const Mat& audio_features,
                                         const Mat& caption_features) {
    if (teachers.empty()) throw ConfigError("at least one teacher is required");
    std::vector<AgreementMatrix> members;
    members.reserve(teachers.size());
    for (std::size_t m = 0; m < teachers.size(); ++m) {
        const DualEncoderParams& t = teachers[m];
        if (t.audio.input_dim() != audio_features.cols() ||
            t.caption.input_dim() != caption_features.cols()) {
            throw ConfigError("teacher " + std::to_string(m) + ": input dims (" +
                              std::to_string(t.audio.input_dim()) + ", " +
                              std::to_string(t.caption.input_dim()) +
                              ") do not match batch feature dims (" +
                              std::to_string(audio_features.cols()) + ", " +
                              std::to_string(caption_features.cols()) + ")");
        }
        members.push_back(agreement_matrix(forward(t.audio, audio_features),
                                           forward(t.caption, caption_features)));
    }
    return ensemble_agreements(members);
}

BatchResult batch_loss_and_grads(const DualEncoderParams& params, const Mat& audio_features,
                                 const Mat& caption_features,
                                 const AgreementMatrix* teacher_ensembled,
                                 const LossConfig& cfg) {
    cfg.validate();
    const ForwardCache cache_a = forward_cached(params.audio, audio_features);
    const ForwardCache cache_c = forward_cached(params.caption, caption_features);

    BatchResult res;
    res.student = agreement_matrix(cache_a.embeddings, cache_c.embeddings);

    Mat g;
    if (teacher_ensembled == nullptr || cfg.lambda == 1.0) {
        const auto [p_a, p_c] = identity_targets(res.student.values.rows());
        res.loss = correspondence_loss(p_a, p_c, res.student, cfg);
        g = loss_gradient_wrt_agreements(p_a, p_c, res.student, cfg);
    } else {
        const auto [t_a, t_c] = soft_targets(*teacher_ensembled, cfg.tau);
        if (cfg.lambda == 0.0) {
            res.loss = correspondence_loss(t_a, t_c, res.student, cfg);
            g = loss_gradient_wrt_agreements(t_a, t_c, res.student, cfg);
        } else {
            const auto [p_a, p_c] = identity_targets(res.student.values.rows());
            res.loss = cfg.lambda * correspondence_loss(p_a, p_c, res.student, cfg) +
                       (1.0 - cfg.lambda) * correspondence_loss(t_a, t_c, res.student, cfg);
            g = cfg.lambda * loss_gradient_wrt_agreements(p_a, p_c, res.student, cfg) +
                (1.0 - cfg.lambda) * loss_gradient_wrt_agreements(t_a, t_c, res.student, cfg);
        }
    }

    res.grads.audio = backward(params.audio, cache_a, matmul(g, cache_c.embeddings));
    res.grads.caption =
        backward(params.caption, cache_c, matmul(Mat(g.transpose()), cache_a.embeddings));
    return res;
}

namespace {

Mat gather_rows(const Mat& m, const std::vector<Index>& rows) {
    Mat out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Index>(i)) = m.row(rows[i]);
    }
    return out;
}

void check_input_dims(const DualEncoderParams& p, const Dataset& data, const char* who) {
    if (p.audio.input_dim() != data.audio_features.cols() ||
        p.caption.input_dim() != data.caption_features.cols()) {
        throw ConfigError(std::string(who) + ": encoder input dims (" +
                          std::to_string(p.audio.input_dim()) + ", " +
                          std::to_string(p.caption.input_dim()) +
                          ") do not match feature dims (" +
                          std::to_string(data.audio_features.cols()) + ", " +
                          std::to_string(data.caption_features.cols()) + ")");
    }
}

std::vector<Index> encoder_dims(Index input_dim, const TrainConfig& cfg) {
    std::vector<Index> dims{input_dim};
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(cfg.embedding_dim);
    return dims;
}

// Shared loop for both stages. Stage 1 is exactly the teachers == nullptr
// path; stage 2 with lambda == 1 takes the same per-step branch, which is
// what makes the two bit-identical given equal seeds and init.
std::pair<Checkpoint, TrainHistory> run_training(const Dataset& data, const TrainConfig& cfg,
                                                 const DualEncoderParams* init,
                                                 const std::vector<DualEncoderParams>* teachers,
                                                 const StepObserver& observer) {
    cfg.validate();
    const Index n_train = static_cast<Index>(data.split(SplitName::Train).size());
    ScheduleConfig sched = cfg.schedule;
    sched.steps_per_epoch =
        n_train / cfg.batch_size + ((n_train % cfg.batch_size) >= 2 ? 1 : 0);
    if (sched.steps_per_epoch < 1) {
        throw DataError("train split of " + std::to_string(n_train) +
                        " audios yields no batch of at least 2 pairs");
    }
    sched.validate();

    DualEncoderParams params;
    if (init != nullptr) {
        init->audio.validate();
        init->caption.validate();
        params = *init;
    } else {
        params.audio =
            init_params(encoder_dims(data.audio_features.cols(), cfg), split_seed(cfg.seed, 0));
        params.caption = init_params(encoder_dims(data.caption_features.cols(), cfg),
                                     split_seed(cfg.seed, 1));
    }
    check_input_dims(params, data, "student");
    if (teachers != nullptr) {
        for (std::size_t m = 0; m < teachers->size(); ++m) {
            check_input_dims((*teachers)[m], data,
                             ("teacher " + std::to_string(m)).c_str());
        }
    }

    AdamState adam = AdamState::for_size(param_count(params));
    TrainHistory history;
    Checkpoint best;
    double best_val = -1.0;
    Index global_step = 0;

    for (Index epoch = 0; epoch < sched.epochs; ++epoch) {
        const std::vector<Batch> batches =
            make_epoch_batches(data.manifest, SplitName::Train, cfg.batch_size, cfg.seed, epoch);
        if (static_cast<Index>(batches.size()) != sched.steps_per_epoch) {
            throw ContractError("epoch produced " + std::to_string(batches.size()) +
                                " batches, schedule expects " +
                                std::to_string(sched.steps_per_epoch));
        }

        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (std::size_t s = 0; s < batches.size(); ++s) {
            try {
                const Mat feats_a = gather_rows(data.audio_features, batches[s].audios);
                const Mat feats_c = gather_rows(data.caption_features, batches[s].captions);

                AgreementMatrix teacher_c;
                const AgreementMatrix* teacher_ptr = nullptr;
                if (teachers != nullptr && cfg.loss.lambda != 1.0) {
                    teacher_c = teacher_batch_agreements(*teachers, feats_a, feats_c);
                    teacher_ptr = &teacher_c;
                }

                const BatchResult batch =
                    batch_loss_and_grads(params, feats_a, feats_c, teacher_ptr, cfg.loss);
                if (!std::isfinite(batch.loss)) throw NumericError("non-finite loss");

                const double lr = lr_at(global_step, sched);
                adam_step(params, batch.grads, adam, lr);
                loss_sum += batch.loss;
                last_lr = lr;
                if (observer) {
                    observer(StepInfo{epoch, static_cast<Index>(s), global_step, lr, batch.loss,
                                      &batch.student, teacher_ptr});
                }
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(s) + ": " + e.what());
            }
            ++global_step;
        }

        const double val = evaluate_retrieval(params, data, SplitName::Validation).map_at_10;
        history.epochs.push_back(
            {epoch, loss_sum / static_cast<double>(batches.size()), val, last_lr});
        if (val > best_val) {
            best_val = val;
            history.best_epoch = epoch;
            best.params = params;
            best.meta.epoch = epoch;
            best.meta.val_map_at_10 = val;
        }
    }

    best.meta.stage = cfg.stage;
    best.meta.seed = cfg.seed;
    best.meta.tau = cfg.loss.tau;
    best.meta.lambda = teachers == nullptr ? 1.0 : cfg.loss.lambda;
    best.meta.num_teachers = teachers == nullptr ? 0 : static_cast<Index>(teachers->size());
    return {std::move(best), std::move(history)};
}

}  // namespace

std::pair<Checkpoint, TrainHistory> train_stage1(const Dataset& data, const TrainConfig& cfg,
                                                 const DualEncoderParams* init,
                                                 const StepObserver& observer) {
    if (cfg.stage != 1) throw ConfigError("train_stage1 requires cfg.stage == 1");
    return run_training(data, cfg, init, nullptr, observer);
}

std::pair<Checkpoint, TrainHistory> train_stage2(const Dataset& data, const TrainConfig& cfg,
                                                 const DualEncoderParams& init,
                                                 const std::vector<DualEncoderParams>& teachers,
                                                 const StepObserver& observer) {
    if (cfg.stage != 2) throw ConfigError("train_stage2 requires cfg.stage == 2");
    if (teachers.empty()) throw ConfigError("stage 2 requires at least one teacher");
    return run_training(data, cfg, &init, &teachers, observer);
}

}  // namespace duet
