#include "blockhf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>

namespace blockhf {

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError(path + ": truncated while reading " + what);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

constexpr std::uint32_t kMagicImages = 0x00000803;
constexpr std::uint32_t kMagicLabels = 0x00000801;

}  // namespace

Tensor load_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open IDX file '" + path + "'");

    const std::uint32_t magic = read_be32(in, path, "magic");
    std::size_t rank;
    if (magic == kMagicImages) {
        rank = 3;
    } else if (magic == kMagicLabels) {
        rank = 1;
    } else {
        throw ParseError(path + ": bad IDX magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%08x", magic);
            return std::string(buf);
        }());
    }

    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        const std::uint32_t d = read_be32(in, path, "dimension");
        if (d == 0) throw ParseError(path + ": zero-sized dimension");
        shape[i] = d;
        if (total > (std::size_t{1} << 40) / d) {
            throw ParseError(path + ": dimension sizes overflow a sane payload");
        }
        total *= d;
    }

    std::vector<unsigned char> bytes(total);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total));
    if (static_cast<std::size_t>(in.gcount()) != total) {
        throw ParseError(path + ": truncated payload, expected " + std::to_string(total) +
                         " bytes");
    }

    Tensor t = Tensor::zeros(shape);
    if (magic == kMagicImages) {
        for (std::size_t i = 0; i < total; ++i) t.data[i] = bytes[i] / 255.0;
    } else {
        for (std::size_t i = 0; i < total; ++i) t.data[i] = bytes[i];
    }
    return t;
}

Tensor avg_pool(const Tensor& img, std::size_t k) {
    if (img.rank() != 2) {
        throw ShapeError("avg_pool: expects a rank-2 image, got " + shape_str(img.shape));
    }
    const std::size_t H = img.shape[0], W = img.shape[1];
    if (k == 0 || H % k != 0 || W % k != 0) {
        throw ShapeError("avg_pool: window " + std::to_string(k) +
                         " does not divide image " + shape_str(img.shape));
    }
    const std::size_t h = H / k, w = W / k;
    Tensor out = Tensor::matrix(h, w);
    const double inv = 1.0 / static_cast<double>(k * k);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            double s = 0.0;
            for (std::size_t di = 0; di < k; ++di) {
                for (std::size_t dj = 0; dj < k; ++dj) {
                    s += img.data[(i * k + di) * W + (j * k + dj)];
                }
            }
            out.data[i * w + j] = s * inv;
        }
    }
    return out;
}

Tensor sequentialize(const Tensor& img) {
    if (img.rank() != 2 || img.shape[0] != img.shape[1]) {
        throw ShapeError("sequentialize: expects a square image, got " + shape_str(img.shape));
    }
    return Tensor({img.size()}, img.data);
}

BatchStream::BatchStream(std::size_t n, std::size_t grad_size, std::size_t curvature_size,
                         Rng rng)
    : n_(n), grad_size_(grad_size), curvature_size_(curvature_size), rng_(rng) {
    if (grad_size_ == 0 || grad_size_ > n_) {
        throw ShapeError("batch stream: gradient batch " + std::to_string(grad_size_) +
                         " must be in [1, " + std::to_string(n_) + "]");
    }
    if (curvature_size_ == 0 || curvature_size_ > grad_size_) {
        throw ShapeError("batch stream: curvature batch " + std::to_string(curvature_size_) +
                         " must be in [1, " + std::to_string(grad_size_) + "]");
    }
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    reshuffle();
}

void BatchStream::reshuffle() {
    for (std::size_t i = n_; i-- > 1;) {
        const std::size_t j = rng_.uniform_index(i + 1);
        std::swap(order_[i], order_[j]);
    }
    cursor_ = 0;
}

BatchPair BatchStream::next() {
    if (cursor_ + grad_size_ > n_) {  // drop the short remainder
        epoch_ += 1;
        reshuffle();
    }
    BatchPair pair;
    pair.grad_indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                             order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + grad_size_));
    pair.curvature_count = curvature_size_;
    cursor_ += grad_size_;
    return pair;
}

Dataset synth_autoencoder_data(std::size_t n, std::size_t dim, std::size_t rank,
                               std::uint64_t seed) {
    if (rank > dim) {
        throw ShapeError("synth_autoencoder_data: rank " + std::to_string(rank) +
                         " exceeds dim " + std::to_string(dim));
    }
    Rng rng(seed);
    Tensor u = rank > 0 ? seeded_uniform({dim, rank}, -1.0, 1.0, rng) : Tensor::matrix(dim, 0);
    Tensor x = Tensor::matrix(n, dim);
    std::vector<double> z(rank);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < rank; ++r) z[r] = rng.uniform(-1.0, 1.0);
        for (std::size_t d = 0; d < dim; ++d) {
            double s = 0.0;
            for (std::size_t r = 0; r < rank; ++r) s += u.data[d * rank + r] * z[r];
            x.data[i * dim + d] = 1.0 / (1.0 + std::exp(-s));
        }
    }
    Dataset ds;
    ds.inputs = std::move(x);
    ds.targets = ds.inputs;
    ds.classification = false;
    return ds;
}

namespace {

std::string idx_path(const std::string& dir, Dataset::Split split, bool images) {
    const char* base = split == Dataset::Split::Train
                           ? (images ? "train-images-idx3-ubyte" : "train-labels-idx1-ubyte")
                           : (images ? "t10k-images-idx3-ubyte" : "t10k-labels-idx1-ubyte");
    return dir + "/" + base;
}

struct RawMnist {
    Tensor images;  // [n x 28 x 28]
    std::vector<int> labels;
};

RawMnist load_raw(const std::string& dir, Dataset::Split split, std::size_t limit,
                  bool want_labels) {
    RawMnist raw;
    raw.images = load_idx(idx_path(dir, split, true));
    if (raw.images.rank() != 3) {
        throw ParseError("expected rank-3 image tensor from IDX, got " +
                         shape_str(raw.images.shape));
    }
    std::size_t n = raw.images.shape[0];
    if (want_labels) {
        Tensor lab = load_idx(idx_path(dir, split, false));
        if (lab.size() != n) {
            throw ParseError("image/label counts disagree (" + std::to_string(n) + " vs " +
                             std::to_string(lab.size()) + ")");
        }
        raw.labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) raw.labels[i] = static_cast<int>(lab.data[i]);
    }
    if (limit > 0 && limit < n) {
        const std::size_t hw = raw.images.shape[1] * raw.images.shape[2];
        raw.images.shape[0] = limit;
        raw.images.data.resize(limit * hw);
        if (want_labels) raw.labels.resize(limit);
    }
    return raw;
}

}  // namespace

Dataset load_mnist_autoencoder(const std::string& dir, Dataset::Split split,
                               std::size_t limit) {
    RawMnist raw = load_raw(dir, split, limit, false);
    const std::size_t n = raw.images.shape[0];
    const std::size_t d = raw.images.shape[1] * raw.images.shape[2];
    Dataset ds;
    ds.inputs = Tensor({n, d}, std::move(raw.images.data));
    ds.targets = ds.inputs;
    ds.split = split;
    ds.classification = false;
    return ds;
}

Dataset load_mnist_sequence(const std::string& dir, Dataset::Split split,
                            std::size_t limit) {
    RawMnist raw = load_raw(dir, split, limit, true);
    const std::size_t n = raw.images.shape[0];
    const std::size_t H = raw.images.shape[1], W = raw.images.shape[2];

    Dataset ds;
    const std::size_t h = H / 4, w = W / 4;
    ds.inputs = Tensor::matrix(n, h * w);
    Tensor img = Tensor::matrix(H, W);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(raw.images.data.begin() + static_cast<std::ptrdiff_t>(i * H * W),
                  raw.images.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * H * W),
                  img.data.begin());
        const Tensor pooled = avg_pool(img, 4);
        const Tensor seq = sequentialize(pooled);
        std::copy(seq.data.begin(), seq.data.end(),
                  ds.inputs.data.begin() + static_cast<std::ptrdiff_t>(i * h * w));
    }
    ds.labels = std::move(raw.labels);
    ds.targets = one_hot(ds.labels, 10);
    ds.split = split;
    ds.classification = true;
    return ds;
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices) {
    const std::size_t d = m.cols();
    Tensor out = Tensor::matrix(indices.size(), d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(indices[i]) +
                             " out of range for " + std::to_string(m.rows()) + " rows");
        }
        std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(indices[i] * d),
                  m.data.begin() + static_cast<std::ptrdiff_t>((indices[i] + 1) * d),
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return out;
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
    Tensor out = Tensor::matrix(labels.size(), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int c = labels[i];
        if (c < 0 || static_cast<std::size_t>(c) >= classes) {
            throw ShapeError("one_hot: label " + std::to_string(c) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
        out.data[i * classes + static_cast<std::size_t>(c)] = 1.0;
    }
    return out;
}

}  // namespace blockhf
