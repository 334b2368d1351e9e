#include "duet/dataset.hpp"

#include "duet/error.hpp"
#include "duet/numerics.hpp"
#include "duet/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace duet {

namespace {

using json = nlohmann::json;

std::vector<std::vector<Index>> build_captions_of(const std::vector<Index>& caption_to_audio,
                                                  Index num_audios) {
    std::vector<std::vector<Index>> captions_of(static_cast<std::size_t>(num_audios));
    for (std::size_t j = 0; j < caption_to_audio.size(); ++j) {
        captions_of[static_cast<std::size_t>(caption_to_audio[j])].push_back(
            static_cast<Index>(j));
    }
    return captions_of;
}

// Checks every manifest invariant against the actual feature counts. Each
// violation names the offending field.
void validate_manifest(const DatasetManifest& m, Index num_audios, Index num_captions) {
    if (m.version != 1) {
        throw DataError("manifest field version: expected 1, got " + std::to_string(m.version));
    }
    if (m.audio_features_path.empty()) throw DataError("manifest field audio_features_path: empty");
    if (m.caption_features_path.empty()) {
        throw DataError("manifest field caption_features_path: empty");
    }
    if (static_cast<Index>(m.caption_to_audio.size()) != num_captions) {
        throw DataError("manifest field caption_to_audio: has " +
                        std::to_string(m.caption_to_audio.size()) + " entries but " +
                        m.caption_features_path + " has " + std::to_string(num_captions) +
                        " rows");
    }

    std::vector<Index> captions_per_audio(static_cast<std::size_t>(num_audios), 0);
    for (std::size_t j = 0; j < m.caption_to_audio.size(); ++j) {
        const Index a = m.caption_to_audio[j];
        if (a < 0 || a >= num_audios) {
            throw DataError("manifest field caption_to_audio[" + std::to_string(j) + "]: value " +
                            std::to_string(a) + " outside [0, " + std::to_string(num_audios) +
                            ")");
        }
        ++captions_per_audio[static_cast<std::size_t>(a)];
    }
    for (Index a = 0; a < num_audios; ++a) {
        if (captions_per_audio[static_cast<std::size_t>(a)] == 0) {
            throw DataError("manifest field caption_to_audio: audio " + std::to_string(a) +
                            " has no captions");
        }
    }

    // -1 = unassigned; otherwise the split that claimed the audio.
    std::vector<int> owner(static_cast<std::size_t>(num_audios), -1);
    const SplitName splits[] = {SplitName::Train, SplitName::Validation, SplitName::Test};
    for (SplitName s : splits) {
        const std::string field = std::string("splits.") + split_name_str(s);
        for (Index a : m.split(s)) {
            if (a < 0 || a >= num_audios) {
                throw DataError("manifest field " + field + ": audio index " + std::to_string(a) +
                                " outside [0, " + std::to_string(num_audios) + ")");
            }
            int& o = owner[static_cast<std::size_t>(a)];
            if (o >= 0) {
                throw DataError("manifest field " + field + ": audio " + std::to_string(a) +
                                " already listed in splits." +
                                split_name_str(static_cast<SplitName>(o)));
            }
            o = static_cast<int>(s);
        }
    }
}

const json& require_field(const json& obj, const char* key, const char* inside = nullptr) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw DataError(std::string("manifest field ") + (inside ? inside : "") +
                        (inside ? "." : "") + key + ": missing");
    }
    return *it;
}

std::vector<Index> index_array(const json& arr, const std::string& field) {
    if (!arr.is_array()) throw DataError("manifest field " + field + ": expected an array");
    std::vector<Index> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        if (!v.is_number_integer()) {
            throw DataError("manifest field " + field + ": expected integer entries");
        }
        out.push_back(v.get<Index>());
    }
    return out;
}

DatasetManifest parse_manifest_json(const json& doc, const std::filesystem::path& path) {
    if (!doc.is_object()) {
        throw DataError(path.string() + ": manifest must be a JSON object");
    }
    DatasetManifest m;
    const json& version = require_field(doc, "version");
    if (!version.is_number_integer()) throw DataError("manifest field version: expected integer");
    m.version = version.get<int>();

    const json& ap = require_field(doc, "audio_features_path");
    const json& cp = require_field(doc, "caption_features_path");
    if (!ap.is_string() || !cp.is_string()) {
        throw DataError("manifest fields audio_features_path/caption_features_path: "
                        "expected strings");
    }
    m.audio_features_path = ap.get<std::string>();
    m.caption_features_path = cp.get<std::string>();

    m.caption_to_audio = index_array(require_field(doc, "caption_to_audio"), "caption_to_audio");

    const json& splits = require_field(doc, "splits");
    if (!splits.is_object()) throw DataError("manifest field splits: expected an object");
    m.train_split = index_array(require_field(splits, "train", "splits"), "splits.train");
    m.validation_split =
        index_array(require_field(splits, "validation", "splits"), "splits.validation");
    m.test_split = index_array(require_field(splits, "test", "splits"), "splits.test");
    return m;
}

std::filesystem::path resolve(const std::filesystem::path& manifest_path,
                              const std::string& features_path) {
    const std::filesystem::path p(features_path);
    if (p.is_absolute()) return p;
    return manifest_path.parent_path() / p;
}

}  // namespace

SplitName parse_split_name(const std::string& name) {
    if (name == "train") return SplitName::Train;
    if (name == "validation") return SplitName::Validation;
    if (name == "test") return SplitName::Test;
    throw ConfigError("unknown split name \"" + name +
                      "\" (expected train, validation or test)");
}

const char* split_name_str(SplitName split) {
    switch (split) {
        case SplitName::Train: return "train";
        case SplitName::Validation: return "validation";
        case SplitName::Test: return "test";
    }
    throw ConfigError("invalid split enum value");
}

const std::vector<Index>& DatasetManifest::split(SplitName s) const {
    switch (s) {
        case SplitName::Train: return train_split;
        case SplitName::Validation: return validation_split;
        case SplitName::Test: return test_split;
    }
    throw ConfigError("invalid split enum value");
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path.string());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) {
        throw FormatError(manifest_path.string() + ": manifest is not valid JSON");
    }

    DatasetManifest m = parse_manifest_json(doc, manifest_path);
    const auto [num_audios, audio_dim] =
        read_fmat_header(resolve(manifest_path, m.audio_features_path));
    const auto [num_captions, caption_dim] =
        read_fmat_header(resolve(manifest_path, m.caption_features_path));
    (void)audio_dim;
    (void)caption_dim;
    validate_manifest(m, num_audios, num_captions);
    return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    Dataset data;
    data.manifest = load_manifest(manifest_path);
    data.audio_features = read_fmat(resolve(manifest_path, data.manifest.audio_features_path));
    data.caption_features = read_fmat(resolve(manifest_path, data.manifest.caption_features_path));
    data.captions_of = build_captions_of(data.manifest.caption_to_audio, data.num_audios());
    return data;
}

void write_manifest(const std::filesystem::path& manifest_path, const DatasetManifest& manifest) {
    json doc = {
        {"version", manifest.version},
        {"audio_features_path", manifest.audio_features_path},
        {"caption_features_path", manifest.caption_features_path},
        {"caption_to_audio", manifest.caption_to_audio},
        {"splits",
         {{"train", manifest.train_split},
          {"validation", manifest.validation_split},
          {"test", manifest.test_split}}},
    };
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + manifest_path.string());
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + manifest_path.string());
}

void SyntheticConfig::validate() const {
    if (num_audios < 2) throw ConfigError("num_audios must be at least 2");
    if (captions_per_audio < 1) throw ConfigError("captions_per_audio must be positive");
    if (feature_dim < 2) throw ConfigError("feature_dim must be at least 2");
    const Index concepts = num_latent_concepts == 0 ? num_audios : num_latent_concepts;
    if (concepts < 2) {
        throw ConfigError("num_latent_concepts must be at least 2 (or 0 for one per audio)");
    }
    if (!std::isfinite(noise_scale) || noise_scale < 0.0) {
        throw ConfigError("noise_scale must be finite and non-negative");
    }
    if (!(ambiguity_rate >= 0.0 && ambiguity_rate <= 1.0)) {
        throw ConfigError("ambiguity_rate must lie in [0, 1], got " +
                          std::to_string(ambiguity_rate));
    }
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const Index n = cfg.num_audios;
    const Index d = cfg.feature_dim;
    const Index num_concepts = cfg.num_latent_concepts == 0 ? n : cfg.num_latent_concepts;
    const double noise_unit = cfg.noise_scale / std::sqrt(static_cast<double>(d));

    Rng rng(cfg.seed);

    Mat concepts(num_concepts, d);
    for (Index i = 0; i < num_concepts; ++i) {
        for (Index k = 0; k < d; ++k) concepts(i, k) = rng.normal();
    }
    concepts = row_l2_normalize(concepts);

    Mat audio(n, d);
    for (Index i = 0; i < n; ++i) {
        audio.row(i) = concepts.row(i % num_concepts);
        for (Index k = 0; k < d; ++k) audio(i, k) += noise_unit * rng.normal();
    }

    const Index num_captions = n * cfg.captions_per_audio;
    Mat captions(num_captions, d);
    std::vector<Index> caption_to_audio(static_cast<std::size_t>(num_captions));
    Index row = 0;
    Eigen::RowVectorXd base(d);
    for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < cfg.captions_per_audio; ++k) {
            base = concepts.row(i % num_concepts);
            // The ambiguity draw is consumed unconditionally so noise draws
            // line up across ambiguity_rate settings at equal seeds.
            if (rng.uniform() < cfg.ambiguity_rate) {
                Index other = static_cast<Index>(rng.index(static_cast<std::size_t>(n - 1)));
                if (other >= i) ++other;
                base += concepts.row(other % num_concepts);
                const double norm = base.norm();
                if (norm <= kNormGuard) {
                    throw NumericError("degenerate concept mixture for audio " +
                                       std::to_string(i));
                }
                base /= norm;
            }
            captions.row(row) = base;
            for (Index c = 0; c < d; ++c) captions(row, c) += noise_unit * rng.normal();
            caption_to_audio[static_cast<std::size_t>(row)] = i;
            ++row;
        }
    }

    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    const std::size_t n_train = static_cast<std::size_t>((7 * n) / 10);
    const std::size_t n_val = static_cast<std::size_t>((3 * n) / 20);

    Dataset data;
    data.manifest.version = 1;
    data.manifest.audio_features_path = "audio.fmat";
    data.manifest.caption_features_path = "captions.fmat";
    data.manifest.caption_to_audio = std::move(caption_to_audio);
    data.manifest.train_split.assign(order.begin(), order.begin() + n_train);
    data.manifest.validation_split.assign(order.begin() + n_train,
                                          order.begin() + n_train + n_val);
    data.manifest.test_split.assign(order.begin() + n_train + n_val, order.end());
    std::sort(data.manifest.train_split.begin(), data.manifest.train_split.end());
    std::sort(data.manifest.validation_split.begin(), data.manifest.validation_split.end());
    std::sort(data.manifest.test_split.begin(), data.manifest.test_split.end());

    // Quantize to storage precision up front so the in-memory dataset and a
    // written-then-reloaded one are bit-identical.
    data.audio_features = audio.cast<float>().cast<double>();
    data.caption_features = captions.cast<float>().cast<double>();
    data.captions_of = build_captions_of(data.manifest.caption_to_audio, n);

    validate_manifest(data.manifest, n, num_captions);
    return data;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    write_fmat(dir / data.manifest.audio_features_path, data.audio_features);
    write_fmat(dir / data.manifest.caption_features_path, data.caption_features);
    write_manifest(dir / "manifest.json", data.manifest);
}

}  // namespace duet
