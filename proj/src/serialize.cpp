#include "duet/serialize.hpp"

#include "duet/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace duet {

namespace {

using json = nlohmann::json;

// Byte-level little-endian writer/reader; keeps the formats host-independent
// and lets errors report exact byte offsets.

class Writer {
  public:
    explicit Writer(const std::filesystem::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot open for writing: " + path.string());
    }

    void bytes(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    }

    void magic(const char tag[4]) { bytes(tag, 4); }

    void u32(std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        bytes(b, 4);
    }

    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }

    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u32(static_cast<std::uint32_t>(bits));
        u32(static_cast<std::uint32_t>(bits >> 32));
    }

    void close() {
        out_.close();
        if (!out_) throw IoError("write failed: " + path_.string());
    }

  private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class Reader {
  public:
    explicit Reader(const std::filesystem::path& path)
        : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open for reading: " + path.string());
    }

    std::size_t offset() const { return offset_; }

    void bytes(void* data, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        const std::size_t got = static_cast<std::size_t>(in_.gcount());
        if (got != n) {
            throw FormatError(path_.string() + ": truncated while reading " + what +
                              " at byte offset " + std::to_string(offset_) + " (expected " +
                              std::to_string(n) + " bytes, got " + std::to_string(got) +
                              ", missing " + std::to_string(n - got) + ")");
        }
        offset_ += n;
    }

    void expect_magic(const char tag[4]) {
        char buf[4];
        bytes(buf, 4, "magic");
        if (std::memcmp(buf, tag, 4) != 0) {
            throw FormatError(path_.string() + ": bad magic at byte offset 0, expected \"" +
                              std::string(tag, 4) + "\" got \"" + std::string(buf, 4) + "\"");
        }
    }

    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(b, 4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) |
               (static_cast<std::uint32_t>(b[3]) << 24);
    }

    float f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64(const char* what) {
        const std::uint64_t lo = u32(what);
        const std::uint64_t hi = u32(what);
        const std::uint64_t bits = lo | (hi << 32);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void expect_eof() {
        in_.peek();
        if (!in_.eof()) {
            throw FormatError(path_.string() + ": trailing bytes after byte offset " +
                              std::to_string(offset_));
        }
    }

    void expect_version(std::uint32_t got, std::uint32_t want) {
        if (got != want) {
            throw FormatError(path_.string() + ": unsupported version " + std::to_string(got) +
                              " at byte offset 4 (expected " + std::to_string(want) + ")");
        }
    }

  private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::size_t offset_ = 0;
};

void write_value_matrix(const std::filesystem::path& path, const char magic[4], const Mat& m) {
    if (!m.allFinite()) {
        throw NumericError("refusing to write non-finite matrix to " + path.string());
    }
    Writer w(path);
    w.magic(magic);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) w.f32(static_cast<float>(m(i, j)));
    }
    w.close();
}

Mat read_value_matrix(const std::filesystem::path& path, const char magic[4]) {
    Reader r(path);
    r.expect_magic(magic);
    r.expect_version(r.u32("version"), 1);
    const std::uint32_t rows = r.u32("rows");
    const std::uint32_t cols = r.u32("cols");
    Mat m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j) {
            m(i, j) = static_cast<double>(r.f32("matrix values"));
        }
    }
    r.expect_eof();
    return m;
}

}  // namespace

void write_fmat(const std::filesystem::path& path, const Mat& m) {
    write_value_matrix(path, "FMAT", m);
}

Mat read_fmat(const std::filesystem::path& path) { return read_value_matrix(path, "FMAT"); }

std::pair<Index, Index> read_fmat_header(const std::filesystem::path& path) {
    Reader r(path);
    r.expect_magic("FMAT");
    r.expect_version(r.u32("version"), 1);
    const std::uint32_t rows = r.u32("rows");
    const std::uint32_t cols = r.u32("cols");
    return {static_cast<Index>(rows), static_cast<Index>(cols)};
}

void write_amat(const std::filesystem::path& path, const AgreementMatrix& m) {
    if ((m.values.array().abs() > 1.0 + 1e-9).any()) {
        throw ContractError("refusing to write agreement entries outside [-1, 1] to " +
                            path.string());
    }
    write_value_matrix(path, "AMAT", m.values);
}

AgreementMatrix read_amat(const std::filesystem::path& path) {
    Mat values = read_value_matrix(path, "AMAT");
    if ((values.array().abs() > 1.0 + 1e-9).any()) {
        throw FormatError(path.string() + ": agreement entries must lie in [-1, 1]");
    }
    return AgreementMatrix{std::move(values)};
}

namespace {

void write_encoder(Writer& w, const EncoderParams& p) {
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
        const Mat& weight = p.weights[l];
        for (Index i = 0; i < weight.rows(); ++i) {
            for (Index j = 0; j < weight.cols(); ++j) w.f64(weight(i, j));
        }
        for (Index i = 0; i < p.biases[l].size(); ++i) w.f64(p.biases[l][i]);
    }
}

EncoderParams read_encoder(Reader& r, const std::vector<Index>& dims) {
    EncoderParams p;
    p.dims = dims;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Mat weight(dims[l + 1], dims[l]);
        for (Index i = 0; i < weight.rows(); ++i) {
            for (Index j = 0; j < weight.cols(); ++j) weight(i, j) = r.f64("weights");
        }
        Vec bias(dims[l + 1]);
        for (Index i = 0; i < bias.size(); ++i) bias[i] = r.f64("biases");
        p.weights.push_back(std::move(weight));
        p.biases.push_back(std::move(bias));
    }
    return p;
}

std::vector<Index> read_dims(Reader& r, std::uint32_t layers, const char* which) {
    if (layers == 0 || layers > 64) {
        throw FormatError(std::string("implausible layer count for ") + which + ": " +
                          std::to_string(layers));
    }
    std::vector<Index> dims(layers + 1);
    for (auto& d : dims) {
        d = static_cast<Index>(r.u32("layer dims"));
        if (d < 1) throw FormatError(std::string("zero layer dimension in ") + which);
    }
    return dims;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    ckpt.params.audio.validate();
    ckpt.params.caption.validate();

    json meta = {
        {"stage", ckpt.meta.stage},
        {"seed", ckpt.meta.seed},
        {"tau", ckpt.meta.tau},
        {"lambda", ckpt.meta.lambda},
        {"epoch", ckpt.meta.epoch},
        {"val_map_at_10", ckpt.meta.val_map_at_10},
        {"num_teachers", ckpt.meta.num_teachers},
    };
    const std::string meta_str = meta.dump();

    Writer w(path);
    w.magic("DENC");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(ckpt.params.audio.num_layers()));
    w.u32(static_cast<std::uint32_t>(ckpt.params.caption.num_layers()));
    for (Index d : ckpt.params.audio.dims) w.u32(static_cast<std::uint32_t>(d));
    for (Index d : ckpt.params.caption.dims) w.u32(static_cast<std::uint32_t>(d));
    write_encoder(w, ckpt.params.audio);
    write_encoder(w, ckpt.params.caption);
    w.u32(static_cast<std::uint32_t>(meta_str.size()));
    w.bytes(meta_str.data(), meta_str.size());
    w.close();
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    Reader r(path);
    r.expect_magic("DENC");
    r.expect_version(r.u32("version"), 1);
    const std::uint32_t layers_a = r.u32("audio layer count");
    const std::uint32_t layers_c = r.u32("caption layer count");
    const std::vector<Index> dims_a = read_dims(r, layers_a, "audio encoder");
    const std::vector<Index> dims_c = read_dims(r, layers_c, "caption encoder");

    Checkpoint ckpt;
    ckpt.params.audio = read_encoder(r, dims_a);
    ckpt.params.caption = read_encoder(r, dims_c);

    const std::uint32_t meta_len = r.u32("metadata length");
    std::string meta_str(meta_len, '\0');
    r.bytes(meta_str.data(), meta_len, "metadata");
    r.expect_eof();

    json meta = json::parse(meta_str, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) {
        throw FormatError(path.string() + ": checkpoint metadata is not valid JSON");
    }
    try {
        ckpt.meta.stage = meta.at("stage").get<int>();
        ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
        ckpt.meta.tau = meta.at("tau").get<double>();
        ckpt.meta.lambda = meta.at("lambda").get<double>();
        ckpt.meta.epoch = meta.at("epoch").get<Index>();
        ckpt.meta.val_map_at_10 = meta.at("val_map_at_10").get<double>();
        ckpt.meta.num_teachers = meta.at("num_teachers").get<Index>();
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": checkpoint metadata field missing or mistyped: " +
                          e.what());
    }

    try {
        ckpt.params.audio.validate();
        ckpt.params.caption.validate();
    } catch (const Error& e) {
        throw ContractError(path.string() + ": inconsistent checkpoint parameters: " + e.what());
    }
    return ckpt;
}

}  // namespace duet
