// duet: two-stage dual-encoder training for audio-caption retrieval.
//
// Subcommands: gen-synth, train, export-agreements, evaluate, self-check.
// All stdout/stderr output is line-delimited JSON. Exit codes: 0 ok,
// 1 self-check failure, 2 invalid config/data, 3 I/O or file format,
// 4 numeric abort.

#include "duet/dataset.hpp"
#include "duet/error.hpp"
#include "duet/loss.hpp"
#include "duet/metrics.hpp"
#include "duet/numerics.hpp"
#include "duet/optim.hpp"
#include "duet/serialize.hpp"
#include "duet/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using duet::Index;
using duet::Mat;
using duet::Vec;
using json = nlohmann::json;

void emit(const json& line) { std::cout << line.dump() << "\n"; }

std::string metrics_json_line(const duet::RetrievalMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "{\"map_at_10\": %.4f, \"r_at_1\": %.4f, \"r_at_5\": %.4f, "
                  "\"r_at_10\": %.4f, \"num_queries\": %lld}",
                  100.0 * m.map_at_10, 100.0 * m.r_at_1, 100.0 * m.r_at_5, 100.0 * m.r_at_10,
                  static_cast<long long>(m.num_queries));
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw duet::IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw duet::IoError("write failed: " + path.string());
}

// ---- gen-synth ----

struct GenSynthArgs {
    std::string out;
    duet::SyntheticConfig cfg;
};

int run_gen_synth(const GenSynthArgs& args) {
    const duet::Dataset data = duet::generate_synthetic(args.cfg);
    duet::write_dataset(args.out, data);
    emit(json{{"out", args.out},
              {"num_audios", data.num_audios()},
              {"num_captions", data.num_captions()},
              {"dim", data.audio_features.cols()},
              {"train", data.manifest.train_split.size()},
              {"validation", data.manifest.validation_split.size()},
              {"test", data.manifest.test_split.size()}});
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string manifest;
    std::string out;
    std::string init;
    std::vector<std::string> teachers;
    duet::TrainConfig cfg;
    bool lambda_given = false;
};

int run_train(const TrainArgs& args) {
    if (args.cfg.stage == 2) {
        if (args.init.empty()) throw duet::ConfigError("stage 2 requires --init");
        if (args.teachers.empty()) {
            throw duet::ConfigError("stage 2 requires at least one --teachers checkpoint");
        }
    } else {
        if (!args.teachers.empty()) throw duet::ConfigError("stage 1 does not take --teachers");
        if (args.lambda_given) throw duet::ConfigError("--lambda applies to stage 2 only");
    }

    duet::TrainConfig cfg = args.cfg;
    cfg.teacher_checkpoint_paths = args.teachers;
    cfg.validate();

    const duet::Dataset data = duet::load_dataset(args.manifest);

    duet::Checkpoint init;
    if (!args.init.empty()) init = duet::read_checkpoint(args.init);

    duet::Checkpoint best;
    duet::TrainHistory history;
    if (cfg.stage == 1) {
        std::tie(best, history) =
            duet::train_stage1(data, cfg, args.init.empty() ? nullptr : &init.params);
    } else {
        std::vector<duet::DualEncoderParams> teachers;
        teachers.reserve(args.teachers.size());
        for (const std::string& path : args.teachers) {
            teachers.push_back(duet::read_checkpoint(path).params);
        }
        std::tie(best, history) = duet::train_stage2(data, cfg, init.params, teachers);
    }

    duet::write_checkpoint(args.out, best);

    json epochs = json::array();
    for (const duet::EpochRecord& rec : history.epochs) {
        epochs.push_back(json{{"epoch", rec.epoch},
                              {"train_loss", rec.train_loss},
                              {"val_map_at_10", rec.val_map_at_10},
                              {"lr", rec.lr}});
    }
    const std::string history_path = args.out + ".history.json";
    write_text_file(history_path,
                    json{{"best_epoch", history.best_epoch}, {"epochs", epochs}}.dump(2) + "\n");

    emit(json{{"checkpoint", args.out},
              {"history", history_path},
              {"stage", cfg.stage},
              {"best_epoch", history.best_epoch},
              {"val_map_at_10", best.meta.val_map_at_10}});
    return 0;
}

// ---- export-agreements / evaluate ----

int run_export(const std::string& checkpoint, const std::string& manifest,
               const std::string& split, const std::string& out) {
    const duet::Checkpoint ckpt = duet::read_checkpoint(checkpoint);
    const duet::Dataset data = duet::load_dataset(manifest);
    const duet::AgreementMatrix agreements =
        duet::split_agreement_matrix(ckpt.params, data, duet::parse_split_name(split));
    duet::write_amat(out, agreements);
    emit(json{{"out", out},
              {"rows", agreements.num_audios()},
              {"cols", agreements.num_captions()}});
    return 0;
}

int run_evaluate(const std::string& checkpoint, const std::string& manifest,
                 const std::string& split, const std::string& out) {
    const duet::Checkpoint ckpt = duet::read_checkpoint(checkpoint);
    const duet::Dataset data = duet::load_dataset(manifest);
    const duet::RetrievalMetrics m =
        duet::evaluate_retrieval(ckpt.params, data, duet::parse_split_name(split));
    const std::string line = metrics_json_line(m);
    write_text_file(out, line + "\n");
    std::cout << line << "\n";
    return 0;
}

// ---- self-check ----
//
// Every group below verifies library output against arithmetic done right
// here with scalar loops, so a regression in the library cannot hide.

bool check_gradients(std::uint64_t seed, bool corrupt) {
    const std::vector<Index> dims{6, 8, 4};
    const Index batch = 5;
    duet::Rng rng(duet::split_seed(seed, 11));

    duet::DualEncoderParams params;
    params.audio = duet::init_params(dims, duet::split_seed(seed, 12));
    params.caption = duet::init_params(dims, duet::split_seed(seed, 13));
    for (auto* head : {&params.audio, &params.caption}) {
        for (Vec& b : head->biases) {
            for (Index i = 0; i < b.size(); ++i) b[i] = 0.1 * rng.normal();
        }
    }

    Mat feats_a(batch, dims.front());
    Mat feats_c(batch, dims.front());
    for (Index i = 0; i < batch; ++i) {
        for (Index j = 0; j < dims.front(); ++j) {
            feats_a(i, j) = rng.normal();
            feats_c(i, j) = rng.normal();
        }
    }
    duet::AgreementMatrix teacher;
    teacher.values = Mat(batch, batch);
    for (Index i = 0; i < batch; ++i) {
        for (Index j = 0; j < batch; ++j) teacher.values(i, j) = rng.uniform(-1.0, 1.0);
    }

    const duet::LossConfig objectives[] = {
        {0.05, 1.0},  // hard targets only
        {0.05, 0.0},  // soft targets only
        {0.05, 0.5},  // combined
    };
    for (const duet::LossConfig& cfg : objectives) {
        const duet::AgreementMatrix* teacher_ptr = cfg.lambda == 1.0 ? nullptr : &teacher;
        const duet::BatchResult res =
            duet::batch_loss_and_grads(params, feats_a, feats_c, teacher_ptr, cfg);
        Vec analytic = duet::to_vector(params, res.grads);
        if (corrupt) analytic[0] += 1e-2;

        duet::DualEncoderParams probe = params;
        const auto f = [&](const Vec& flat) {
            duet::from_vector(flat, probe);
            const duet::BatchResult r =
                duet::batch_loss_and_grads(probe, feats_a, feats_c, teacher_ptr, cfg);
            return r.loss;
        };
        const double err = duet::grad_check(f, duet::to_vector(params), analytic, 1e-5);
        if (!(err < 1e-4)) return false;
    }
    return true;
}

bool check_softmax_normalization(std::uint64_t seed) {
    duet::Rng rng(duet::split_seed(seed, 21));
    for (double tau : {0.01, 0.05, 1.0}) {
        for (int trial = 0; trial < 10; ++trial) {
            const Index rows = 2 + static_cast<Index>(rng.index(6));
            const Index cols = 2 + static_cast<Index>(rng.index(6));
            Mat c(rows, cols);
            for (Index i = 0; i < rows; ++i) {
                for (Index j = 0; j < cols; ++j) c(i, j) = rng.uniform(-1.0, 1.0);
            }
            const auto [q_a, q_c] =
                duet::distributions_from_agreements(duet::AgreementMatrix{c}, tau);
            for (Index j = 0; j < cols; ++j) {
                if (std::abs(q_a.values.col(j).sum() - 1.0) > 1e-9) return false;
            }
            for (Index i = 0; i < rows; ++i) {
                if (std::abs(q_c.values.row(i).sum() - 1.0) > 1e-9) return false;
            }
        }
    }
    return true;
}

bool check_hard_target_equivalence(std::uint64_t seed) {
    duet::Rng rng(duet::split_seed(seed, 31));
    const duet::LossConfig cfg{0.05, 0.0};
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 2 + static_cast<Index>(rng.index(7));
        Mat c(n, n);
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < n; ++j) c(i, j) = rng.uniform(-1.0, 1.0);
        }
        const duet::AgreementMatrix student{c};
        const auto [p_a, p_c] = duet::identity_targets(n);
        const double with_identity_targets =
            duet::correspondence_loss(p_a, p_c, student, cfg);
        const double supervised = duet::supervised_loss(student, cfg);
        const double scale = std::max(1.0, std::abs(supervised));
        if (std::abs(with_identity_targets - supervised) / scale > 1e-12) return false;
    }
    return true;
}

bool check_metric_oracle(std::uint64_t seed) {
    duet::Rng rng(duet::split_seed(seed, 41));
    for (int trial = 0; trial < 25; ++trial) {
        const Index n_audio = 2 + static_cast<Index>(rng.index(19));
        const Index n_query = 1 + static_cast<Index>(rng.index(20));
        Mat scores(n_query, n_audio);
        std::vector<std::vector<Index>> relevant(static_cast<std::size_t>(n_query));
        for (Index q = 0; q < n_query; ++q) {
            for (Index a = 0; a < n_audio; ++a) scores(q, a) = rng.uniform(-1.0, 1.0);
            relevant[static_cast<std::size_t>(q)] = {
                static_cast<Index>(rng.index(static_cast<std::size_t>(n_audio)))};
        }
        const duet::RetrievalMetrics fast = duet::compute_retrieval_metrics(scores, relevant);

        // Scalar re-derivation: rank by linear scans, single relevant item.
        double map10 = 0, r1 = 0, r5 = 0, r10 = 0;
        for (Index q = 0; q < n_query; ++q) {
            const Index rel = relevant[static_cast<std::size_t>(q)][0];
            Index rank = 1;
            for (Index a = 0; a < n_audio; ++a) {
                if (a == rel) continue;
                if (scores(q, a) > scores(q, rel) ||
                    (scores(q, a) == scores(q, rel) && a < rel)) {
                    ++rank;
                }
            }
            if (rank <= 10) map10 += 1.0 / static_cast<double>(rank);
            r1 += rank <= 1 ? 1 : 0;
            r5 += rank <= 5 ? 1 : 0;
            r10 += rank <= 10 ? 1 : 0;
        }
        const double nq = static_cast<double>(n_query);
        if (std::abs(fast.map_at_10 - map10 / nq) > 1e-12) return false;
        if (std::abs(fast.r_at_1 - r1 / nq) > 1e-12) return false;
        if (std::abs(fast.r_at_5 - r5 / nq) > 1e-12) return false;
        if (std::abs(fast.r_at_10 - r10 / nq) > 1e-12) return false;
    }
    return true;
}

bool check_schedule_endpoints() {
    duet::ScheduleConfig cfgs[] = {
        {2e-5, 1e-7, 20, 1, 10},
        {1e-3, 1e-5, 5, 1, 4},
        {2e-5, 1e-7, 2, 0, 3},
    };
    for (const duet::ScheduleConfig& cfg : cfgs) {
        if (cfg.warmup_epochs > 0) {
            const double at_warmup_end = duet::lr_at(cfg.warmup_steps() - 1, cfg);
            if (std::abs(at_warmup_end - cfg.lr_peak) > 1e-12) return false;
        }
        const double at_last = duet::lr_at(cfg.total_steps() - 1, cfg);
        if (std::abs(at_last - cfg.lr_final) > 1e-12) return false;
    }
    return true;
}

int run_self_check(std::uint64_t seed, bool corrupt_gradient) {
    struct Group {
        const char* name;
        bool passed;
    };
    const Group groups[] = {
        {"gradient_check", check_gradients(seed, corrupt_gradient)},
        {"softmax_normalization", check_softmax_normalization(seed)},
        {"hard_target_equivalence", check_hard_target_equivalence(seed)},
        {"metric_oracle", check_metric_oracle(seed)},
        {"schedule_endpoints", check_schedule_endpoints()},
    };
    bool all = true;
    for (const Group& g : groups) {
        emit(json{{"check", g.name}, {"status", g.passed ? "pass" : "fail"}});
        all = all && g.passed;
    }
    emit(json{{"self_check", all ? "pass" : "fail"},
              {"checks", std::size(groups)}});
    return all ? 0 : 1;
}

int exit_code_for(const std::exception& e, std::string& kind) {
    if (dynamic_cast<const duet::NumericError*>(&e)) {
        kind = "numeric";
        return 4;
    }
    if (dynamic_cast<const duet::FormatError*>(&e) || dynamic_cast<const duet::IoError*>(&e) ||
        dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
        kind = "io";
        return 3;
    }
    kind = "config";
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage dual-encoder training for audio-caption retrieval"};
    app.require_subcommand(1);

    GenSynthArgs gen;
    CLI::App* cmd_gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
    cmd_gen->add_option("--out", gen.out, "output directory")->required();
    cmd_gen->add_option("--num-audios", gen.cfg.num_audios, "number of audios");
    cmd_gen->add_option("--captions-per-audio", gen.cfg.captions_per_audio,
                        "captions per audio");
    cmd_gen->add_option("--dim", gen.cfg.feature_dim, "feature dimension");
    cmd_gen->add_option("--ambiguity", gen.cfg.ambiguity_rate,
                        "fraction of captions mixing in a second audio's concept");
    cmd_gen->add_option("--noise", gen.cfg.noise_scale, "noise scale");
    cmd_gen->add_option("--concepts", gen.cfg.num_latent_concepts,
                        "latent concepts (0 = one per audio)");
    cmd_gen->add_option("--seed", gen.cfg.seed, "generator seed");

    TrainArgs train;
    CLI::App* cmd_train = app.add_subcommand("train", "train stage 1 or stage 2");
    cmd_train->add_option("--manifest", train.manifest, "dataset manifest path")->required();
    cmd_train->add_option("--stage", train.cfg.stage, "1 or 2")->required();
    cmd_train->add_option("--out", train.out, "checkpoint output path")->required();
    cmd_train->add_option("--init", train.init, "initial checkpoint");
    cmd_train->add_option("--teachers", train.teachers, "teacher checkpoints (stage 2)")
        ->delimiter(',');
    CLI::Option* lambda_opt =
        cmd_train->add_option("--lambda", train.cfg.loss.lambda,
                              "hard-target weight of the combined objective (stage 2)");
    cmd_train->add_option("--epochs", train.cfg.schedule.epochs, "training epochs");
    cmd_train->add_option("--batch", train.cfg.batch_size, "batch size");
    cmd_train->add_option("--lr-peak", train.cfg.schedule.lr_peak, "peak learning rate");
    cmd_train->add_option("--lr-final", train.cfg.schedule.lr_final, "final learning rate");
    cmd_train->add_option("--warmup-epochs", train.cfg.schedule.warmup_epochs, "warmup epochs");
    cmd_train->add_option("--tau", train.cfg.loss.tau, "softmax temperature");
    cmd_train->add_option("--seed", train.cfg.seed, "training seed");
    cmd_train->add_option("--hidden-dims", train.cfg.hidden_dims, "hidden layer widths")
        ->delimiter(',');
    cmd_train->add_option("--embedding-dim", train.cfg.embedding_dim, "embedding dimension");

    std::string ckpt_path, manifest_path, split_name, out_path;
    CLI::App* cmd_export =
        app.add_subcommand("export-agreements", "write a split's agreement matrix");
    cmd_export->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
    cmd_export->add_option("--manifest", manifest_path, "dataset manifest path")->required();
    cmd_export->add_option("--split", split_name, "train, validation or test")->required();
    cmd_export->add_option("--out", out_path, "output AMAT path")->required();

    std::string ev_ckpt, ev_manifest, ev_split, ev_out;
    CLI::App* cmd_eval = app.add_subcommand("evaluate", "text-to-audio retrieval metrics");
    cmd_eval->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    cmd_eval->add_option("--manifest", ev_manifest, "dataset manifest path")->required();
    cmd_eval->add_option("--split", ev_split, "train, validation or test")->required();
    cmd_eval->add_option("--out", ev_out, "metrics JSON output path")->required();

    std::uint64_t check_seed = 0;
    bool corrupt_gradient = false;
    CLI::App* cmd_check = app.add_subcommand("self-check", "verify core math against oracles");
    cmd_check->add_option("--seed", check_seed, "seed for randomized checks");
    cmd_check->add_flag("--corrupt-gradient", corrupt_gradient)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    }

    try {
        if (cmd_gen->parsed()) return run_gen_synth(gen);
        if (cmd_train->parsed()) {
            train.lambda_given = lambda_opt->count() > 0;
            return run_train(train);
        }
        if (cmd_export->parsed()) {
            return run_export(ckpt_path, manifest_path, split_name, out_path);
        }
        if (cmd_eval->parsed()) return run_evaluate(ev_ckpt, ev_manifest, ev_split, ev_out);
        if (cmd_check->parsed()) return run_self_check(check_seed, corrupt_gradient);
        std::cerr << json{{"error", "config"}, {"message", "no subcommand"}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::string kind;
        const int code = exit_code_for(e, kind);
        std::cerr << json{{"error", kind}, {"message", e.what()}}.dump() << "\n";
        return code;
    }
}
