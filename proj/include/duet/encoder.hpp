#pragma once

#include "duet/types.hpp"

#include <cstdint>
#include <vector>

namespace duet {

// A multilayer projection head: affine layers with rectifier nonlinearities
// on the hidden layers, an affine final layer, and L2 normalization of each
// output row. The rectifier subgradient at exactly 0 is 0.
struct EncoderParams {
    std::vector<Index> dims;    // [D_in, hidden..., D]
    std::vector<Mat> weights;   // weights[l] is dims[l+1] x dims[l]
    std::vector<Vec> biases;    // biases[l] is dims[l+1]

    Index input_dim() const { return dims.front(); }
    Index output_dim() const { return dims.back(); }
    std::size_t num_layers() const { return weights.size(); }

    // Checks layer count, shape consistency and finiteness.
    void validate() const;
};

// Glorot-uniform weights (+-sqrt(6/fan_in)) from a seeded deterministic
// generator; zero biases. The same seed yields bit-identical parameters.
EncoderParams init_params(const std::vector<Index>& layer_dims, std::uint64_t seed);

// Per-layer activations kept for the backward pass.
struct ForwardCache {
    std::vector<Mat> inputs;  // inputs[l]: input to layer l; inputs[0] = features
    std::vector<Mat> pre;     // pre[l]: pre-activation output of layer l
    Vec prenorm_norms;        // row norms of the final pre-normalization output
    Mat embeddings;           // N x D, unit rows
};

Mat forward(const EncoderParams& params, const Mat& features);
ForwardCache forward_cached(const EncoderParams& params, const Mat& features);

struct EncoderGrads {
    std::vector<Mat> weights;
    std::vector<Vec> biases;
};

// Reverse-mode gradients of sum(upstream .* embeddings) w.r.t. all
// parameters, i.e. `upstream` is d(loss)/d(embeddings).
EncoderGrads backward(const EncoderParams& params, const ForwardCache& cache,
                      const Mat& upstream);

// forward + backward in one call.
EncoderGrads forward_backward(const EncoderParams& params, const Mat& features,
                              const Mat& upstream);

// The audio head and the caption head of one retrieval model.
struct DualEncoderParams {
    EncoderParams audio;
    EncoderParams caption;
};

struct DualEncoderGrads {
    EncoderGrads audio;
    EncoderGrads caption;
};

// Flat views used by the optimizer and by gradient checks. Order: audio
// weights/biases layer by layer (weights row-major), then caption.
Index param_count(const DualEncoderParams& params);
Vec to_vector(const DualEncoderParams& params);
Vec to_vector(const DualEncoderParams& shapes, const DualEncoderGrads& grads);
void from_vector(const Vec& flat, DualEncoderParams& params);

bool bit_equal(const DualEncoderParams& a, const DualEncoderParams& b);

}  // namespace duet
