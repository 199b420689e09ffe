#pragma once

#include <string>
#include <vector>

#include "rftlab/rng.hpp"
#include "rftlab/tensor.hpp"

namespace rftlab {

enum class Split : std::uint8_t { train, val, test };

const char* split_name(Split s);

/// Immutable-after-load image corpus. Pixels are interleaved [count,H,W,C]
/// in [0,1]; every sample carries a label and a split tag.
struct Dataset {
    int height = 0;
    int width = 0;
    int channels = 0;
    int num_classes = 0;
    std::vector<double> pixels;  // count*H*W*C
    std::vector<int> labels;
    std::vector<Split> splits;
    std::string provenance;

    int count() const { return static_cast<int>(labels.size()); }
    std::size_t sample_size() const {
        return static_cast<std::size_t>(height) * width * channels;
    }
    const double* sample(int i) const { return pixels.data() + i * sample_size(); }
    Tensor image(int i, Precision prec = Precision::f64) const;
    std::vector<int> indices(Split s) const;

    /// Per-channel mean over the train split (PatchDrop fill color).
    std::vector<double> mean_color() const;

    void validate() const;  // label range and pixel bounds
};

/// Standard CIFAR-10 binary batches: data_batch_{1..5}.bin -> train,
/// test_batch.bin -> test. 3073-byte records, channel-planar, scaled /255.
Dataset load_cifar10(const std::string& dir);

/// idx-format corpus (train-images-idx3-ubyte etc. under `dir`), big-endian
/// extents, magic-validated. Grayscale, scaled /255.
Dataset load_mnist_idx(const std::string& dir);

/// Single idx file helpers (fixture construction and round-trip checks).
std::vector<std::uint8_t> read_idx_images(const std::string& path, int& count, int& h, int& w);
std::vector<std::uint8_t> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels, int count,
                      int h, int w);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

/// Frequency-separable synthetic corpus: class c is broadband noise around a
/// mid-gray base plus a fixed-amplitude sinusoid at a class-specific low
/// frequency. Split 70/15/15. Amplitude 0 removes the class signal entirely.
Dataset make_synthetic(int num_classes, int per_class, int h, int w, std::uint64_t seed,
                       double amplitude = 0.25);

/// Class frequency (u,v) used by make_synthetic for class c.
std::pair<int, int> synthetic_class_frequency(int c);

/// Moves a trailing fraction of the train split to val (for corpora that
/// ship without a validation split). Deterministic under `rng`.
void carve_val(Dataset& ds, double fraction, Rng rng);

/// Index batches for one epoch: permutation derived from (stream, epoch),
/// every sample of the split exactly once, last batch possibly short.
std::vector<std::vector<int>> epoch_batches(const Dataset& ds, Split split, int batch_size,
                                            const Rng& stream, int epoch);

/// Raw dump: <prefix>.bin (f64 pixels, u32 labels, u8 splits, little-endian)
/// plus <prefix>.json manifest.
void save_dataset_raw(const Dataset& ds, const std::string& prefix);
Dataset load_dataset_raw(const std::string& prefix);

}  // namespace rftlab
