#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "densconf/error.hpp"
#include "densconf/mlp.hpp"

// Binary checkpoint, little-endian throughout:
//   bytes 0-7   magic "DCONFMLP"
//   u32         format version (1)
//   u32         number of layer sizes (n >= 2)
//   u64 * n     layer sizes (input, hidden..., output)
//   u32         number of hidden dropout probabilities (n - 2)
//   f64 * (n-2) dropout probabilities
//   u32         embedding layer index
//   then per weight layer l in order: f64 weights (row-major, out x in), f64 biases (out)

namespace densconf {

namespace detail {

constexpr char kModelMagic[8] = {'D', 'C', 'O', 'N', 'F', 'M', 'L', 'P'};
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& value, const std::string& field) {
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw FormatError("checkpoint: truncated while reading " + field);
}

inline void write_doubles(std::ostream& out, std::span<const double> values) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
}

inline void read_doubles(std::istream& in, std::span<double> values, const std::string& field) {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw FormatError("checkpoint: truncated while reading " + field);
}

} // namespace detail

inline void save_checkpoint(const MlpModel& m, std::ostream& out) {
    out.write(detail::kModelMagic, sizeof(detail::kModelMagic));
    detail::write_pod(out, detail::kModelVersion);
    detail::write_pod(out, static_cast<std::uint32_t>(m.layer_sizes.size()));
    for (std::size_t s : m.layer_sizes) detail::write_pod(out, static_cast<std::uint64_t>(s));
    detail::write_pod(out, static_cast<std::uint32_t>(m.dropout_probs.size()));
    for (double p : m.dropout_probs) detail::write_pod(out, p);
    detail::write_pod(out, static_cast<std::uint32_t>(m.embedding_layer));
    for (std::size_t l = 0; l < m.num_weight_layers(); ++l) {
        detail::write_doubles(out, m.weights[l].data);
        detail::write_doubles(out, m.biases[l]);
    }
}

inline void save_checkpoint(const MlpModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_checkpoint: cannot open '" + path + "' for writing");
    save_checkpoint(m, out);
    if (!out) throw FormatError("save_checkpoint: write to '" + path + "' failed");
}

inline MlpModel load_checkpoint(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kModelMagic, sizeof(magic)) != 0)
        throw FormatError("checkpoint: bad magic, not a model checkpoint");
    std::uint32_t version = 0;
    detail::read_pod(in, version, "format version");
    if (version != detail::kModelVersion)
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version));

    std::uint32_t n_sizes = 0;
    detail::read_pod(in, n_sizes, "layer count");
    if (n_sizes < 2) throw FormatError("checkpoint: layer count must be at least 2");

    MlpModel m;
    m.layer_sizes.resize(n_sizes);
    for (std::uint32_t i = 0; i < n_sizes; ++i) {
        std::uint64_t s = 0;
        detail::read_pod(in, s, "layer size " + std::to_string(i));
        if (s == 0)
            throw FormatError("checkpoint: layer " + std::to_string(i) + " declares size 0");
        m.layer_sizes[i] = static_cast<std::size_t>(s);
    }

    std::uint32_t n_dropout = 0;
    detail::read_pod(in, n_dropout, "dropout count");
    if (n_dropout != n_sizes - 2)
        throw FormatError("checkpoint: dropout count " + std::to_string(n_dropout) +
                          " does not match hidden layer count " + std::to_string(n_sizes - 2));
    m.dropout_probs.resize(n_dropout);
    for (std::uint32_t i = 0; i < n_dropout; ++i) {
        detail::read_pod(in, m.dropout_probs[i], "dropout probability " + std::to_string(i));
        if (m.dropout_probs[i] < 0.0 || m.dropout_probs[i] >= 1.0)
            throw FormatError("checkpoint: dropout probability " + std::to_string(i) +
                              " outside [0, 1)");
    }

    std::uint32_t embedding_layer = 0;
    detail::read_pod(in, embedding_layer, "embedding layer index");
    if (embedding_layer >= n_sizes - 1)
        throw FormatError("checkpoint: embedding layer index " + std::to_string(embedding_layer) +
                          " out of range");
    m.embedding_layer = embedding_layer;

    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        Matrix w(m.layer_sizes[l + 1], m.layer_sizes[l]);
        detail::read_doubles(in, w.data, "layer " + std::to_string(l) + " weights");
        Vector b(m.layer_sizes[l + 1]);
        detail::read_doubles(in, b, "layer " + std::to_string(l) + " biases");
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    // Anything left over means the declared sizes do not match the payload.
    char probe = 0;
    in.read(&probe, 1);
    if (in.gcount() != 0)
        throw FormatError("checkpoint: trailing bytes after final layer; declared layer sizes "
                          "do not match the payload");
    return m;
}

inline MlpModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_checkpoint: cannot open '" + path + "'");
    return load_checkpoint(in);
}

} // namespace densconf
