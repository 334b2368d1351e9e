#include "duet/encoder.hpp"

#include "duet/error.hpp"
#include "duet/numerics.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace duet {

void EncoderParams::validate() const {
    if (dims.size() < 2) throw ConfigError("encoder needs at least one layer");
    if (dims.back() < 2) throw ConfigError("embedding dimension must be >= 2");
    for (Index d : dims) {
        if (d < 1) throw ConfigError("layer dimensions must be positive");
    }
    if (weights.size() != dims.size() - 1 || biases.size() != weights.size()) {
        throw ShapeError("encoder parameter count does not match layer_dims");
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != dims[l + 1] || weights[l].cols() != dims[l] ||
            biases[l].size() != dims[l + 1]) {
            throw ShapeError("encoder layer " + std::to_string(l) + " has inconsistent shape");
        }
        if (!weights[l].allFinite() || !biases[l].allFinite()) {
            throw NumericError("encoder layer " + std::to_string(l) +
                               " contains non-finite parameters");
        }
    }
}

EncoderParams init_params(const std::vector<Index>& layer_dims, std::uint64_t seed) {
    if (layer_dims.size() < 2) throw ConfigError("init_params: need at least [D_in, D]");
    for (Index d : layer_dims) {
        if (d < 1) throw ConfigError("init_params: layer dimensions must be positive");
    }
    if (layer_dims.back() < 2) throw ConfigError("init_params: embedding dimension must be >= 2");

    EncoderParams p;
    p.dims = layer_dims;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const Index out = layer_dims[l + 1];
        const Index in = layer_dims[l];
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        Mat w(out, in);
        for (Index r = 0; r < out; ++r) {
            for (Index c = 0; c < in; ++c) w(r, c) = rng.uniform(-bound, bound);
        }
        p.weights.push_back(std::move(w));
        p.biases.push_back(Vec::Zero(out));
    }
    return p;
}

ForwardCache forward_cached(const EncoderParams& params, const Mat& features) {
    if (features.cols() != params.input_dim()) {
        throw ShapeError("forward: features have " + std::to_string(features.cols()) +
                         " columns, encoder expects " + std::to_string(params.input_dim()));
    }
    const std::size_t L = params.num_layers();
    ForwardCache cache;
    cache.inputs.reserve(L);
    cache.pre.reserve(L);

    Mat h = features;
    for (std::size_t l = 0; l < L; ++l) {
        cache.inputs.push_back(h);
        Mat z = h * params.weights[l].transpose();
        z.rowwise() += params.biases[l].transpose();
        cache.pre.push_back(z);
        if (l + 1 < L) {
            h = z.cwiseMax(0.0);
        } else {
            h = std::move(z);
        }
    }

    cache.prenorm_norms = h.rowwise().norm();
    cache.embeddings = row_l2_normalize(h);
    return cache;
}

Mat forward(const EncoderParams& params, const Mat& features) {
    return forward_cached(params, features).embeddings;
}

EncoderGrads backward(const EncoderParams& params, const ForwardCache& cache,
                      const Mat& upstream) {
    const std::size_t L = params.num_layers();
    if (upstream.rows() != cache.embeddings.rows() ||
        upstream.cols() != cache.embeddings.cols()) {
        throw ShapeError("backward: upstream gradient shape does not match embeddings");
    }

    // Through y = z / |z|: dz = (g - (g.y) y) / |z| per row.
    const Mat& e = cache.embeddings;
    Mat d = upstream;
    for (Index i = 0; i < d.rows(); ++i) {
        const double dot = d.row(i).dot(e.row(i));
        d.row(i) = (d.row(i) - dot * e.row(i)) / cache.prenorm_norms[i];
    }

    EncoderGrads grads;
    grads.weights.resize(L);
    grads.biases.resize(L);
    for (std::size_t l = L; l-- > 0;) {
        if (l + 1 < L) {
            // Rectifier subgradient: 0 at exactly 0.
            d = d.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
        }
        grads.weights[l] = d.transpose() * cache.inputs[l];
        grads.biases[l] = d.colwise().sum().transpose();
        if (l > 0) d = d * params.weights[l];
    }
    return grads;
}

EncoderGrads forward_backward(const EncoderParams& params, const Mat& features,
                              const Mat& upstream) {
    return backward(params, forward_cached(params, features), upstream);
}

namespace {

Index count(const EncoderParams& p) {
    Index n = 0;
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
        n += p.weights[l].size() + p.biases[l].size();
    }
    return n;
}

void pack(const EncoderParams& p, Vec& out, Index& off) {
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
        const Mat& w = p.weights[l];
        out.segment(off, w.size()) = Eigen::Map<const Vec>(w.data(), w.size());
        off += w.size();
        out.segment(off, p.biases[l].size()) = p.biases[l];
        off += p.biases[l].size();
    }
}

void pack(const EncoderGrads& g, Vec& out, Index& off) {
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        const Mat& w = g.weights[l];
        out.segment(off, w.size()) = Eigen::Map<const Vec>(w.data(), w.size());
        off += w.size();
        out.segment(off, g.biases[l].size()) = g.biases[l];
        off += g.biases[l].size();
    }
}

void unpack(const Vec& flat, EncoderParams& p, Index& off) {
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
        Mat& w = p.weights[l];
        Eigen::Map<Vec>(w.data(), w.size()) = flat.segment(off, w.size());
        off += w.size();
        p.biases[l] = flat.segment(off, p.biases[l].size());
        off += p.biases[l].size();
    }
}

}  // namespace

Index param_count(const DualEncoderParams& params) {
    return count(params.audio) + count(params.caption);
}

Vec to_vector(const DualEncoderParams& params) {
    Vec out(param_count(params));
    Index off = 0;
    pack(params.audio, out, off);
    pack(params.caption, out, off);
    return out;
}

Vec to_vector(const DualEncoderParams& shapes, const DualEncoderGrads& grads) {
    Vec out(param_count(shapes));
    Index off = 0;
    pack(grads.audio, out, off);
    pack(grads.caption, out, off);
    if (off != out.size()) throw ShapeError("to_vector: gradient shapes do not match params");
    return out;
}

void from_vector(const Vec& flat, DualEncoderParams& params) {
    if (flat.size() != param_count(params)) {
        throw ShapeError("from_vector: size mismatch");
    }
    Index off = 0;
    unpack(flat, params.audio, off);
    unpack(flat, params.caption, off);
}

namespace {

bool bit_equal(const EncoderParams& a, const EncoderParams& b) {
    if (a.dims != b.dims) return false;
    for (std::size_t l = 0; l < a.num_layers(); ++l) {
        if (std::memcmp(a.weights[l].data(), b.weights[l].data(),
                        sizeof(double) * a.weights[l].size()) != 0)
            return false;
        if (std::memcmp(a.biases[l].data(), b.biases[l].data(),
                        sizeof(double) * a.biases[l].size()) != 0)
            return false;
    }
    return true;
}

}  // namespace

bool bit_equal(const DualEncoderParams& a, const DualEncoderParams& b) {
    return bit_equal(a.audio, b.audio) && bit_equal(a.caption, b.caption);
}

}  // namespace duet
