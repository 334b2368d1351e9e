#pragma once

#include "duet/correspondence.hpp"
#include "duet/encoder.hpp"
#include "duet/types.hpp"

#include <cstdint>
#include <filesystem>
#include <utility>

namespace duet {

// Binary formats. All are little-endian regardless of host:
//
//   FMAT  "FMAT" | u32 version=1 | u32 rows | u32 cols | rows*cols f32, row-major
//   AMAT  same layout, magic "AMAT"; holds one model's full split agreement
//         matrix (rows = audios, cols = captions)
//   DENC  "DENC" | u32 version=1 | u32 layers_a | u32 layers_c |
//         (layers_a+1) u32 dims_a | (layers_c+1) u32 dims_c |
//         f64 weights+biases layer by layer for the audio head, then the
//         caption head (weights row-major) | u32 meta_len | meta_len bytes of
//         UTF-8 JSON metadata
//
// Readers reject bad magic, bad version, truncation and trailing bytes with
// a FormatError naming the byte offset; nothing partial is returned.

void write_fmat(const std::filesystem::path& path, const Mat& m);
Mat read_fmat(const std::filesystem::path& path);

// Reads only (rows, cols) from an FMAT header.
std::pair<Index, Index> read_fmat_header(const std::filesystem::path& path);

void write_amat(const std::filesystem::path& path, const AgreementMatrix& m);
AgreementMatrix read_amat(const std::filesystem::path& path);

struct CheckpointMeta {
    int stage = 1;
    std::uint64_t seed = 0;
    double tau = 0.05;
    double lambda = 0.0;
    Index epoch = 0;           // epoch the checkpoint was selected from
    double val_map_at_10 = 0.0;
    Index num_teachers = 0;    // M; 0 for stage 1
};

struct Checkpoint {
    DualEncoderParams params;
    CheckpointMeta meta;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace duet
