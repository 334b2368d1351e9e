#include "duet/dataset.hpp"
#include "duet/error.hpp"
#include "duet/loss.hpp"
#include "duet/metrics.hpp"
#include "duet/numerics.hpp"
#include "duet/trainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

using duet::Index;
using duet::Mat;

namespace {

duet::Dataset tiny_dataset(Index num_audios, Index captions_per_audio, Index dim,
                           std::uint64_t seed) {
    duet::SyntheticConfig cfg;
    cfg.num_audios = num_audios;
    cfg.captions_per_audio = captions_per_audio;
    cfg.feature_dim = dim;
    cfg.noise_scale = 0.2;
    cfg.seed = seed;
    return duet::generate_synthetic(cfg);
}

duet::TrainConfig small_config(Index epochs) {
    duet::TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.schedule.epochs = epochs;
    cfg.schedule.warmup_epochs = epochs > 1 ? 1 : 0;
    cfg.schedule.lr_peak = 1e-3;
    cfg.schedule.lr_final = 1e-5;
    cfg.hidden_dims = {12};
    cfg.embedding_dim = 6;
    return cfg;
}

}  // namespace

TEST_CASE("make_epoch_batches covers the split without repeats") {
    const duet::Dataset data = tiny_dataset(16, 3, 8, 3);
    // 70/15/15 of 16 audios: train split has (7*16)/10 = 11 audios.
    REQUIRE(data.split(duet::SplitName::Train).size() == 11);

    const std::vector<duet::Batch> batches =
        duet::make_epoch_batches(data.manifest, duet::SplitName::Train, 4, 5, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 3);

    std::set<Index> seen_audios;
    for (const duet::Batch& b : batches) {
        REQUIRE(b.audios.size() == b.captions.size());
        for (std::size_t i = 0; i < b.audios.size(); ++i) {
            CHECK(seen_audios.insert(b.audios[i]).second);
            // The caption must belong to its audio.
            CHECK(data.manifest.caption_to_audio[static_cast<std::size_t>(b.captions[i])] ==
                  b.audios[i]);
        }
    }
    const auto& split = data.split(duet::SplitName::Train);
    CHECK(seen_audios == std::set<Index>(split.begin(), split.end()));
}

TEST_CASE("make_epoch_batches drops a singleton remainder") {
    const duet::Dataset data = tiny_dataset(40, 1, 8, 7);
    // Train split has 28 audios; batch 9 leaves a remainder of 1.
    const std::vector<duet::Batch> batches =
        duet::make_epoch_batches(data.manifest, duet::SplitName::Train, 9, 5, 0);
    REQUIRE(batches.size() == 3);
    for (const duet::Batch& b : batches) CHECK(b.size() == 9);
}

TEST_CASE("make_epoch_batches is deterministic per (seed, epoch)") {
    const duet::Dataset data = tiny_dataset(60, 4, 8, 9);
    const auto a = duet::make_epoch_batches(data.manifest, duet::SplitName::Train, 8, 42, 3);
    const auto b = duet::make_epoch_batches(data.manifest, duet::SplitName::Train, 8, 42, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].audios == b[i].audios);
        CHECK(a[i].captions == b[i].captions);
    }

    // A different epoch reshuffles and redraws captions.
    const auto c = duet::make_epoch_batches(data.manifest, duet::SplitName::Train, 8, 42, 4);
    bool any_difference = false;
    for (std::size_t i = 0; i < a.size() && !any_difference; ++i) {
        any_difference = a[i].audios != c[i].audios || a[i].captions != c[i].captions;
    }
    CHECK(any_difference);
}

TEST_CASE("make_epoch_batches validation") {
    const duet::Dataset data = tiny_dataset(10, 2, 8, 11);
    CHECK_THROWS_AS(duet::make_epoch_batches(data.manifest, duet::SplitName::Train, 1, 0, 0),
                    duet::ConfigError);
    duet::DatasetManifest empty = data.manifest;
    empty.validation_split.clear();
    CHECK_THROWS_AS(duet::make_epoch_batches(empty, duet::SplitName::Validation, 4, 0, 0),
                    duet::DataError);
}

TEST_CASE("teacher_batch_agreements ensembles frozen teachers") {
    const duet::Dataset data = tiny_dataset(12, 2, 8, 13);
    const duet::DualEncoderParams t1{duet::init_params({8, 12, 4}, 1),
                                     duet::init_params({8, 12, 4}, 2)};
    const duet::DualEncoderParams t2{duet::init_params({8, 12, 4}, 3),
                                     duet::init_params({8, 12, 4}, 4)};

    const Mat fa = data.audio_features.topRows(5);
    const Mat fc = data.caption_features.topRows(7);

    const duet::AgreementMatrix single = duet::teacher_batch_agreements({t1}, fa, fc);
    const duet::AgreementMatrix direct =
        duet::agreement_matrix(duet::forward(t1.audio, fa), duet::forward(t1.caption, fc));
    CHECK((single.values - direct.values).cwiseAbs().maxCoeff() == 0.0);

    // Duplicating one teacher changes nothing.
    const duet::AgreementMatrix twice = duet::teacher_batch_agreements({t1, t1}, fa, fc);
    CHECK((twice.values - single.values).cwiseAbs().maxCoeff() < 1e-15);

    const duet::AgreementMatrix pair = duet::teacher_batch_agreements({t1, t2}, fa, fc);
    const duet::AgreementMatrix other =
        duet::agreement_matrix(duet::forward(t2.audio, fa), duet::forward(t2.caption, fc));
    CHECK((pair.values - 0.5 * (direct.values + other.values)).cwiseAbs().maxCoeff() < 1e-15);

    CHECK_THROWS_AS(duet::teacher_batch_agreements({}, fa, fc), duet::ConfigError);
    const duet::DualEncoderParams wrong{duet::init_params({9, 4}, 5),
                                        duet::init_params({9, 4}, 6)};
    CHECK_THROWS_AS(duet::teacher_batch_agreements({wrong}, fa, fc), duet::ConfigError);
}

TEST_CASE("batch_loss_and_grads reproduces the loss functions") {
    const duet::Dataset data = tiny_dataset(14, 2, 8, 17);
    const duet::DualEncoderParams params{duet::init_params({8, 12, 4}, 21),
                                         duet::init_params({8, 12, 4}, 22)};
    const Mat fa = data.audio_features.topRows(6);
    const Mat fc = data.caption_features.topRows(6);

    const duet::LossConfig sup{0.05, 1.0};
    const duet::BatchResult hard = duet::batch_loss_and_grads(params, fa, fc, nullptr, sup);
    const duet::AgreementMatrix c =
        duet::agreement_matrix(duet::forward(params.audio, fa), duet::forward(params.caption, fc));
    CHECK(hard.loss == duet::supervised_loss(c, sup));
    CHECK((hard.student.values - c.values).cwiseAbs().maxCoeff() == 0.0);

    const duet::DualEncoderParams teacher{duet::init_params({8, 12, 4}, 23),
                                          duet::init_params({8, 12, 4}, 24)};
    const duet::AgreementMatrix tc = duet::teacher_batch_agreements({teacher}, fa, fc);
    const duet::LossConfig dist{0.05, 0.0};
    const duet::BatchResult soft = duet::batch_loss_and_grads(params, fa, fc, &tc, dist);
    CHECK(soft.loss == duet::distillation_loss(c, tc, dist));

    const duet::LossConfig mixed{0.05, 0.3};
    const duet::BatchResult both = duet::batch_loss_and_grads(params, fa, fc, &tc, mixed);
    CHECK(both.loss == doctest::Approx(duet::combined_loss(c, tc, mixed)).epsilon(1e-15));
}

TEST_CASE("train_stage1 learns, is deterministic, and tracks the best epoch") {
    const duet::Dataset data = tiny_dataset(32, 2, 8, 19);
    duet::TrainConfig cfg = small_config(4);
    cfg.seed = 5;

    const auto [ckpt, history] = duet::train_stage1(data, cfg);
    REQUIRE(history.epochs.size() == 4);

    // Supervised loss strictly below the first epoch's by the end.
    CHECK(history.epochs.back().train_loss < history.epochs.front().train_loss);

    // Best epoch is the argmax of validation mAP, earliest on ties.
    double best = -1.0;
    Index best_epoch = 0;
    for (const duet::EpochRecord& r : history.epochs) {
        if (r.val_map_at_10 > best) {
            best = r.val_map_at_10;
            best_epoch = r.epoch;
        }
    }
    CHECK(history.best_epoch == best_epoch);
    CHECK(ckpt.meta.epoch == best_epoch);
    CHECK(ckpt.meta.val_map_at_10 == best);
    CHECK(ckpt.meta.stage == 1);
    CHECK(ckpt.meta.seed == 5);
    CHECK(ckpt.meta.num_teachers == 0);

    // Bit-identical rerun.
    const auto [again, history2] = duet::train_stage1(data, cfg);
    CHECK(duet::bit_equal(again.params, ckpt.params));
    for (std::size_t e = 0; e < history.epochs.size(); ++e) {
        CHECK(history.epochs[e].train_loss == history2.epochs[e].train_loss);
        CHECK(history.epochs[e].val_map_at_10 == history2.epochs[e].val_map_at_10);
    }
}

TEST_CASE("train_stage1 handles a batch larger than the split") {
    const duet::Dataset data = tiny_dataset(10, 2, 6, 23);
    duet::TrainConfig cfg = small_config(2);
    cfg.batch_size = 64;  // split has 7 audios; one short batch per epoch
    const auto [ckpt, history] = duet::train_stage1(data, cfg);
    CHECK(history.epochs.size() == 2);
    CHECK(ckpt.params.audio.input_dim() == 6);
}

TEST_CASE("stage-2 with lambda 1 reproduces a continued stage-1 run bit for bit") {
    const duet::Dataset data = tiny_dataset(24, 2, 8, 29);
    duet::TrainConfig cfg1 = small_config(3);
    cfg1.seed = 11;
    const auto [stage1, h1] = duet::train_stage1(data, cfg1);

    duet::TrainConfig resumed = cfg1;
    const auto [cont, hc] = duet::train_stage1(data, resumed, &stage1.params);

    duet::TrainConfig cfg2 = resumed;
    cfg2.stage = 2;
    cfg2.loss.lambda = 1.0;
    const duet::DualEncoderParams teacher{duet::init_params({8, 12, 6}, 91),
                                          duet::init_params({8, 12, 6}, 92)};
    const auto [tuned, h2] = duet::train_stage2(data, cfg2, stage1.params, {teacher});

    CHECK(duet::bit_equal(tuned.params, cont.params));
    REQUIRE(h2.epochs.size() == hc.epochs.size());
    for (std::size_t e = 0; e < h2.epochs.size(); ++e) {
        CHECK(h2.epochs[e].train_loss == hc.epochs[e].train_loss);
        CHECK(h2.epochs[e].val_map_at_10 == hc.epochs[e].val_map_at_10);
    }
    CHECK(tuned.meta.stage == 2);
    CHECK(tuned.meta.num_teachers == 1);
    CHECK(tuned.meta.lambda == 1.0);
}

TEST_CASE("self-distillation from the init is an exact fixed point") {
    const duet::Dataset data = tiny_dataset(20, 2, 8, 31);
    duet::TrainConfig cfg1 = small_config(2);
    cfg1.seed = 3;
    const auto [stage1, h1] = duet::train_stage1(data, cfg1);

    duet::TrainConfig cfg2 = cfg1;
    cfg2.stage = 2;
    cfg2.loss.lambda = 0.0;
    const std::vector<duet::DualEncoderParams> teachers{stage1.params};
    const auto [tuned, h2] = duet::train_stage2(data, cfg2, stage1.params, teachers);

    // Teacher == student == init makes every gradient exactly zero.
    CHECK(duet::bit_equal(tuned.params, stage1.params));
    for (const duet::EpochRecord& r : h2.epochs) {
        CHECK(r.val_map_at_10 == h1.epochs[static_cast<std::size_t>(h1.best_epoch)].val_map_at_10);
    }
}

TEST_CASE("teachers are left untouched by stage-2 training") {
    const duet::Dataset data = tiny_dataset(18, 2, 8, 37);
    duet::TrainConfig cfg = small_config(2);
    cfg.stage = 2;
    cfg.loss.lambda = 0.25;

    const duet::DualEncoderParams init{duet::init_params({8, 12, 6}, 41),
                                       duet::init_params({8, 12, 6}, 42)};
    const duet::DualEncoderParams teacher{duet::init_params({8, 12, 6}, 43),
                                          duet::init_params({8, 12, 6}, 44)};
    const duet::DualEncoderParams teacher_copy = teacher;
    const std::vector<duet::DualEncoderParams> teachers{teacher};

    const auto [tuned, history] = duet::train_stage2(data, cfg, init, teachers);
    CHECK(duet::bit_equal(teachers[0], teacher_copy));
    CHECK_FALSE(duet::bit_equal(tuned.params, init));
    CHECK(tuned.meta.lambda == 0.25);
}

TEST_CASE("per-step observer sees every step with consistent metadata") {
    const duet::Dataset data = tiny_dataset(20, 2, 8, 43);
    duet::TrainConfig cfg = small_config(2);
    cfg.batch_size = 8;

    std::vector<duet::StepInfo> seen;
    const auto observer = [&](const duet::StepInfo& info) {
        duet::StepInfo copy = info;
        copy.student = nullptr;  // pointers die after the call
        copy.teacher = nullptr;
        REQUIRE(info.student != nullptr);
        CHECK(info.teacher == nullptr);  // stage 1 has no teacher
        seen.push_back(copy);
    };
    duet::train_stage1(data, cfg, nullptr, observer);

    // Train split has 14 audios -> 2 batches of 8 and 6 per epoch.
    REQUIRE(seen.size() == 4);
    for (std::size_t i = 0; i < seen.size(); ++i) {
        CHECK(seen[i].global_step == Index(i));
        CHECK(seen[i].epoch == Index(i / 2));
        CHECK(seen[i].step_in_epoch == Index(i % 2));
        CHECK(std::isfinite(seen[i].loss));
        CHECK(seen[i].lr > 0.0);
    }
}

TEST_CASE("train config validation") {
    duet::TrainConfig cfg = small_config(2);
    cfg.validate();

    duet::TrainConfig bad = cfg;
    bad.stage = 3;
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);
    bad = cfg;
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);
    bad = cfg;
    bad.embedding_dim = 1;
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);
    bad = cfg;
    bad.hidden_dims = {0};
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);
    bad = cfg;
    bad.loss.tau = -1.0;
    CHECK_THROWS_AS(bad.validate(), duet::ConfigError);
}

TEST_CASE("stage mixups are rejected") {
    const duet::Dataset data = tiny_dataset(12, 2, 8, 47);
    duet::TrainConfig cfg = small_config(2);

    cfg.stage = 2;
    CHECK_THROWS_AS(duet::train_stage1(data, cfg), duet::ConfigError);

    cfg.stage = 1;
    const duet::DualEncoderParams init{duet::init_params({8, 12, 6}, 51),
                                       duet::init_params({8, 12, 6}, 52)};
    CHECK_THROWS_AS(duet::train_stage2(data, cfg, init, {init}), duet::ConfigError);

    cfg.stage = 2;
    CHECK_THROWS_AS(duet::train_stage2(data, cfg, init, {}), duet::ConfigError);
}

TEST_CASE("numeric failures report the epoch and step") {
    // Zero features make every forward pass hit the zero-row normalization.
    duet::Dataset data = tiny_dataset(12, 2, 8, 53);
    data.audio_features.setZero();
    data.caption_features.setZero();
    duet::TrainConfig cfg = small_config(1);
    try {
        duet::train_stage1(data, cfg);
        FAIL("expected a numeric failure");
    } catch (const duet::NumericError& e) {
        CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
    }
}
