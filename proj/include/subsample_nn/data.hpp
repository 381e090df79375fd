#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "subsample_nn/errors.hpp"
#include "subsample_nn/linalg.hpp"
#include "subsample_nn/rng.hpp"

namespace snn {

using Label = std::uint32_t;

/// Feature rows in [0, 1] with one class label per row.
struct Dataset {
    Matrix features;
    std::vector<Label> labels;
    std::size_t n_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t n_features() const { return features.cols(); }

    void validate() const {
        if (features.rows() != labels.size()) {
            throw DimensionError("Dataset: " + std::to_string(features.rows()) + " feature rows but " +
                                 std::to_string(labels.size()) + " labels");
        }
        for (Label l : labels) {
            if (l >= n_classes) {
                throw ParameterError("Dataset: label " + std::to_string(l) + " >= n_classes " +
                                     std::to_string(n_classes));
            }
        }
    }
};

struct Split {
    Dataset train;
    Dataset validation;
    Dataset test;
    // positions in the source dataset, in split order
    std::vector<std::size_t> train_index;
    std::vector<std::size_t> validation_index;
    std::vector<std::size_t> test_index;
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> index) {
    Dataset out;
    out.n_classes = ds.n_classes;
    out.features = Matrix(index.size(), ds.n_features());
    out.labels.reserve(index.size());
    for (std::size_t r = 0; r < index.size(); ++r) {
        const auto src = ds.features.row(index[r]);
        std::copy(src.begin(), src.end(), out.features.row(r).begin());
        out.labels.push_back(ds.labels[index[r]]);
    }
    return out;
}

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
    if (offset + 4 > bytes.size()) {
        throw FormatError(std::string("IDX: truncated ") + what, offset);
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path);
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parses an IDX3 image file; pixels are scaled by 1/255 and flattened row-major.
inline Matrix parse_idx_images(std::span<const std::uint8_t> bytes) {
    const std::uint32_t magic = detail::read_be32(bytes, 0, "magic");
    if (magic != kIdxImagesMagic) {
        throw FormatError("IDX images: bad magic number", 0);
    }
    const std::size_t count = detail::read_be32(bytes, 4, "image count");
    const std::size_t rows = detail::read_be32(bytes, 8, "row count");
    const std::size_t cols = detail::read_be32(bytes, 12, "column count");
    const std::size_t pixels = rows * cols;
    const std::size_t expected = 16 + count * pixels;
    if (bytes.size() < expected) {
        throw FormatError("IDX images: truncated pixel data, expected " + std::to_string(expected) + " bytes",
                          bytes.size());
    }
    Matrix features(count, pixels);
    const std::uint8_t* src = bytes.data() + 16;
    for (std::size_t i = 0; i < count * pixels; ++i) {
        features.data()[i] = static_cast<double>(src[i]) / 255.0;
    }
    return features;
}

inline std::vector<Label> parse_idx_labels(std::span<const std::uint8_t> bytes) {
    const std::uint32_t magic = detail::read_be32(bytes, 0, "magic");
    if (magic != kIdxLabelsMagic) {
        throw FormatError("IDX labels: bad magic number", 0);
    }
    const std::size_t count = detail::read_be32(bytes, 4, "label count");
    if (bytes.size() < 8 + count) {
        throw FormatError("IDX labels: truncated label data, expected " + std::to_string(8 + count) + " bytes",
                          bytes.size());
    }
    return std::vector<Label>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count));
}

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto image_bytes = detail::read_file(images_path);
    const auto label_bytes = detail::read_file(labels_path);
    Dataset ds;
    ds.features = parse_idx_images(image_bytes);
    ds.labels = parse_idx_labels(label_bytes);
    if (ds.features.rows() != ds.labels.size()) {
        // offset 4 holds the count in both files
        throw FormatError("IDX: " + std::to_string(ds.features.rows()) + " images but " +
                              std::to_string(ds.labels.size()) + " labels",
                          4);
    }
    Label max_label = 0;
    for (Label l : ds.labels) {
        max_label = std::max(max_label, l);
    }
    ds.n_classes = ds.labels.empty() ? 0 : std::size_t{max_label} + 1;
    return ds;
}

/// Shuffles sample positions with `seed`, then cuts train | test | validation.
inline Split split(const Dataset& ds, std::size_t train_n, std::size_t test_n, std::size_t val_n,
                   std::uint64_t seed) {
    if (train_n + test_n + val_n > ds.size()) {
        throw ParameterError("split: " + std::to_string(train_n + test_n + val_n) + " samples requested from " +
                             std::to_string(ds.size()));
    }
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, 0x5151);
    rng.shuffle(std::span<std::size_t>(order));

    Split s;
    s.train_index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_n));
    s.test_index.assign(order.begin() + static_cast<std::ptrdiff_t>(train_n),
                        order.begin() + static_cast<std::ptrdiff_t>(train_n + test_n));
    s.validation_index.assign(order.begin() + static_cast<std::ptrdiff_t>(train_n + test_n),
                              order.begin() + static_cast<std::ptrdiff_t>(train_n + test_n + val_n));
    s.train = subset(ds, s.train_index);
    s.test = subset(ds, s.test_index);
    s.validation = subset(ds, s.validation_index);
    return s;
}

/// Gaussian class clusters (unit variance) whose means are pairwise
/// `separation` apart, rescaled as a whole into [0, 1].
///
/// Means sit on scaled coordinate axes when n_classes <= n_features, so the
/// separation is exact before rescaling; otherwise they use random
/// directions and the separation holds only approximately.
inline Dataset synth_blobs(std::size_t n_samples, std::size_t n_features, std::size_t n_classes,
                           double separation, std::uint64_t seed) {
    if (n_samples == 0 || n_features == 0 || n_classes == 0) {
        throw ParameterError("synth_blobs: counts must be positive");
    }
    if (!(separation > 0.0) || !std::isfinite(separation)) {
        throw ParameterError("synth_blobs: separation must be positive");
    }
    Rng rng(seed, 0xb10b);
    Rng mean_rng = rng.split(1);
    Rng sample_rng = rng.split(2);

    const double radius = separation / std::sqrt(2.0);
    Matrix means(n_classes, n_features);
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (n_classes <= n_features) {
            means(c, c) = radius;
        } else {
            double nrm = 0.0;
            for (std::size_t f = 0; f < n_features; ++f) {
                means(c, f) = mean_rng.gauss();
                nrm += means(c, f) * means(c, f);
            }
            nrm = std::sqrt(nrm);
            for (std::size_t f = 0; f < n_features; ++f) {
                means(c, f) *= radius / nrm;
            }
        }
    }

    Dataset ds;
    ds.n_classes = n_classes;
    ds.features = Matrix(n_samples, n_features);
    ds.labels.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const auto c = static_cast<Label>(i % n_classes);
        ds.labels[i] = c;
        for (std::size_t f = 0; f < n_features; ++f) {
            ds.features(i, f) = means(c, f) + sample_rng.gauss();
        }
    }

    const auto [lo_it, hi_it] = std::minmax_element(ds.features.span().begin(), ds.features.span().end());
    const double lo = *lo_it;
    const double range = *hi_it - lo;
    for (double& v : ds.features.span()) {
        v = range > 0.0 ? (v - lo) / range : 0.0;
    }
    return ds;
}

/// Debug export: header `label,f0,...,fN`.
inline void write_csv(const Dataset& ds, std::ostream& out) {
    out << "label";
    for (std::size_t f = 0; f < ds.n_features(); ++f) {
        out << ",f" << f;
    }
    out << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.labels[i];
        for (double v : ds.features.row(i)) {
            out << ',' << v;
        }
        out << '\n';
    }
}

} // namespace snn
