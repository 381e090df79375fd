#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "subsample_nn/data.hpp"
#include "subsample_nn/errors.hpp"
#include "subsample_nn/model.hpp"

namespace snn {

// Layout, all little-endian:
//   "SNNM" | u32 version | u32 n_dims | n_dims x u64 layer_dims |
//   per layer: W row-major f64, then b f64

inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(std::span<const std::uint8_t> bytes, std::size_t& pos, const char* what) {
    if (pos + sizeof(T) > bytes.size()) {
        throw FormatError(std::string("checkpoint: truncated ") + what, pos);
    }
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const MlpModel& model) {
    model.validate();
    std::vector<std::uint8_t> out = {'S', 'N', 'N', 'M'};
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.layer_dims.size()));
    for (std::size_t d : model.layer_dims) {
        detail::put<std::uint64_t>(out, d);
    }
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        for (double v : model.weights[l].span()) {
            detail::put(out, v);
        }
        for (double v : model.biases[l].span()) {
            detail::put(out, v);
        }
    }
    return out;
}

/// The activation is not stored in the binary; it lives in the sidecar.
inline MlpModel decode_checkpoint(std::span<const std::uint8_t> bytes, Activation hidden = Activation::ReLU) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "SNNM", 4) != 0) {
        throw FormatError("checkpoint: bad magic", 0);
    }
    std::size_t pos = 4;
    const auto version = detail::take<std::uint32_t>(bytes, pos, "version");
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
    }
    const auto n_dims = detail::take<std::uint32_t>(bytes, pos, "dimension count");
    if (n_dims < 2 || n_dims > 4096) {
        throw FormatError("checkpoint: implausible dimension count " + std::to_string(n_dims), 8);
    }
    std::vector<std::size_t> dims;
    std::uint64_t expected_values = 0;
    for (std::uint32_t i = 0; i < n_dims; ++i) {
        const std::size_t at = pos;
        const auto d = detail::take<std::uint64_t>(bytes, pos, "layer width");
        if (d == 0 || d > (std::uint64_t{1} << 24)) {
            throw FormatError("checkpoint: implausible layer width", at);
        }
        if (!dims.empty()) {
            expected_values += dims.back() * d + d;
        }
        dims.push_back(static_cast<std::size_t>(d));
    }
    if (bytes.size() - pos != expected_values * sizeof(double)) {
        throw FormatError("checkpoint: parameter block holds " + std::to_string(bytes.size() - pos) +
                              " bytes, expected " + std::to_string(expected_values * sizeof(double)),
                          pos);
    }
    MlpModel model = init_weights(dims, InitScheme::Zeros, 0, hidden);
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        for (double& v : model.weights[l].span()) {
            v = detail::take<double>(bytes, pos, "weights");
        }
        for (double& v : model.biases[l].span()) {
            v = detail::take<double>(bytes, pos, "biases");
        }
    }
    return model;
}

inline void write_checkpoint(const MlpModel& model, const std::string& path) {
    const auto bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline MlpModel read_checkpoint(const std::string& path, Activation hidden = Activation::ReLU) {
    return decode_checkpoint(detail::read_file(path), hidden);
}

} // namespace snn
