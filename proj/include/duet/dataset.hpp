#pragma once

#include "duet/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace duet {

enum class SplitName { Train, Validation, Test };

SplitName parse_split_name(const std::string& name);
const char* split_name_str(SplitName split);

// Describes a dataset: where the precomputed feature matrices live, which
// audio each caption belongs to, and the audio-index membership of the
// train/validation/test splits. Feature paths are resolved relative to the
// manifest file's directory.
struct DatasetManifest {
    int version = 1;
    std::string audio_features_path;
    std::string caption_features_path;
    std::vector<Index> caption_to_audio;
    std::vector<Index> train_split;
    std::vector<Index> validation_split;
    std::vector<Index> test_split;

    const std::vector<Index>& split(SplitName s) const;
};

// Manifest plus the feature matrices widened to doubles.
struct Dataset {
    DatasetManifest manifest;
    Mat audio_features;
    Mat caption_features;
    // captions_of[a] lists the caption rows of audio a, ascending.
    std::vector<std::vector<Index>> captions_of;

    Index num_audios() const { return audio_features.rows(); }
    Index num_captions() const { return caption_features.rows(); }
    const std::vector<Index>& split(SplitName s) const { return manifest.split(s); }
};

// Parses and validates a manifest. Feature files are opened and their
// declared dimensions are checked against caption_to_audio, but payloads are
// not read.
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

// load_manifest plus full feature payloads.
Dataset load_dataset(const std::filesystem::path& manifest_path);

void write_manifest(const std::filesystem::path& manifest_path, const DatasetManifest& manifest);

// Synthetic data: each audio is assigned a latent concept direction; audio
// features are concept + noise. Most captions are drawn around their audio's
// concept, but an ambiguity_rate fraction are drawn around the normalized
// average of their audio's concept and another audio's concept, while the
// manifest still records a single ground-truth audio — the ambiguity stays
// latent.
struct SyntheticConfig {
    Index num_audios = 100;
    Index captions_per_audio = 5;
    Index feature_dim = 32;
    Index num_latent_concepts = 0;  // 0 means one distinct concept per audio
    double noise_scale = 0.1;
    double ambiguity_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Generates the dataset in memory. Splits are 70/15/15 by audio. The same
// config yields a bit-identical dataset.
Dataset generate_synthetic(const SyntheticConfig& cfg);

// Writes audio.fmat, captions.fmat and manifest.json under dir.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);

}  // namespace duet
