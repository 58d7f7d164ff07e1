#pragma once

#include <string>
#include <vector>

#include "blockhf/rng.hpp"
#include "blockhf/tensor.hpp"

namespace blockhf {

// An immutable set of samples. inputs is [n x d]; for reconstruction tasks
// targets equals inputs, for classification targets is one-hot [n x classes]
// and labels carries the raw class ids.
struct Dataset {
    enum class Split { Train, Test };
    Tensor inputs;
    Tensor targets;
    std::vector<int> labels;  // empty for reconstruction tasks
    Split split = Split::Train;
    bool classification = false;

    std::size_t size() const { return inputs.rows(); }
    std::size_t feature_dim() const { return inputs.cols(); }
};

// Parses an IDX file: big-endian magic 0x00000803 (unsigned-byte rank-3
// images, returned as [n x rows x cols] with pixels divided by 255) or
// 0x00000801 (unsigned-byte rank-1 labels, returned as [n] raw values).
Tensor load_idx(const std::string& path);

// Mean over non-overlapping k x k windows of an H x W image; k must divide
// both dimensions (28 -> 7 uses k = 4).
Tensor avg_pool(const Tensor& img, std::size_t k);

// Row-major scan of a square image into a sequence of H*W scalar steps.
Tensor sequentialize(const Tensor& img);

enum class SeqMode { Pixels, Rows };

// Gradient/curvature index pair for one update: S_c is a prefix of S_g, so
// the subset relation holds by construction.
struct BatchPair {
    std::vector<std::size_t> grad_indices;
    std::size_t curvature_count = 0;
};

// Per epoch: Fisher-Yates shuffle, then consecutive chunks of grad_size; the
// curvature indices are the first curvature_size of each chunk; a final
// short chunk is dropped.
class BatchStream {
public:
    BatchStream(std::size_t n, std::size_t grad_size, std::size_t curvature_size, Rng rng);

    BatchPair next();
    std::size_t epoch() const { return epoch_; }
    std::size_t batches_per_epoch() const { return n_ / grad_size_; }

private:
    void reshuffle();

    std::size_t n_, grad_size_, curvature_size_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

// Desk-scale reconstruction data: x_i = sigmoid(U z_i) with U [dim x rank]
// and z_i uniform in (-1, 1); targets are the inputs.
Dataset synth_autoencoder_data(std::size_t n, std::size_t dim, std::size_t rank,
                               std::uint64_t seed);

// MNIST pipelines over standard IDX files in `dir`
// (train-images-idx3-ubyte / train-labels-idx1-ubyte / t10k-...).
// The autoencoder variant flattens 28x28 to 784 features, target = input.
// The sequence variant average-pools to 7x7 and flattens row-major; the
// model consumes it as 49 scalar steps (Pixels) or 7 rows of 7 (Rows) --
// the stored features are identical, only the step slicing differs.
Dataset load_mnist_autoencoder(const std::string& dir, Dataset::Split split,
                               std::size_t limit = 0);
Dataset load_mnist_sequence(const std::string& dir, Dataset::Split split,
                            std::size_t limit = 0);

// Row gather / one-hot helpers used when assembling batches.
Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices);
Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace blockhf
