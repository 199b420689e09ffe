#include "rftlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace rftlab {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Tensor Dataset::image(int i, Precision prec) const {
    if (i < 0 || i >= count()) throw std::out_of_range("Dataset::image: index " + std::to_string(i));
    std::vector<double> v(sample(i), sample(i) + sample_size());
    return Tensor::from({height, width, channels}, std::move(v), prec);
}

std::vector<int> Dataset::indices(Split s) const {
    std::vector<int> out;
    for (int i = 0; i < count(); ++i) {
        if (splits[i] == s) out.push_back(i);
    }
    return out;
}

std::vector<double> Dataset::mean_color() const {
    std::vector<double> mean(channels, 0.0);
    std::size_t n = 0;
    const std::size_t hw = static_cast<std::size_t>(height) * width;
    for (int i = 0; i < count(); ++i) {
        if (splits[i] != Split::train) continue;
        const double* px = sample(i);
        for (std::size_t p = 0; p < hw; ++p) {
            for (int c = 0; c < channels; ++c) mean[c] += px[p * channels + c];
        }
        ++n;
    }
    if (n == 0) throw std::runtime_error("Dataset::mean_color: empty train split");
    for (double& m : mean) m /= static_cast<double>(n) * hw;
    return mean;
}

void Dataset::validate() const {
    if (pixels.size() != sample_size() * count() || splits.size() != labels.size()) {
        throw std::runtime_error("Dataset: inconsistent buffer sizes");
    }
    for (int l : labels) {
        if (l < 0 || l >= num_classes) {
            throw std::runtime_error("Dataset: label " + std::to_string(l) + " outside [0," +
                                     std::to_string(num_classes) + ")");
        }
    }
    for (double p : pixels) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::runtime_error("Dataset: pixel outside [0,1]");
    }
}

// ---- CIFAR-10 ----

namespace {

void append_cifar_file(Dataset& ds, const std::string& path, Split split) {
    constexpr int kRecord = 3073;  // label + 3*1024 channel-planar pixels
    constexpr int kCount = 10000;
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("load_cifar10: cannot open " + path);
    const auto size = static_cast<long long>(is.tellg());
    if (size != static_cast<long long>(kRecord) * kCount) {
        throw std::runtime_error("load_cifar10: " + path + " has " + std::to_string(size) +
                                 " bytes, expected " + std::to_string(kRecord * kCount));
    }
    is.seekg(0);
    std::vector<std::uint8_t> rec(kRecord);
    for (int r = 0; r < kCount; ++r) {
        is.read(reinterpret_cast<char*>(rec.data()), kRecord);
        ds.labels.push_back(rec[0]);
        ds.splits.push_back(split);
        const std::size_t base = ds.pixels.size();
        ds.pixels.resize(base + 32 * 32 * 3);
        for (int p = 0; p < 1024; ++p) {
            for (int c = 0; c < 3; ++c) {
                ds.pixels[base + static_cast<std::size_t>(p) * 3 + c] =
                    rec[1 + c * 1024 + p] / 255.0;
            }
        }
    }
}

}  // namespace

Dataset load_cifar10(const std::string& dir) {
    Dataset ds;
    ds.height = 32;
    ds.width = 32;
    ds.channels = 3;
    ds.num_classes = 10;
    ds.provenance = "cifar10:" + dir;
    for (int b = 1; b <= 5; ++b) {
        append_cifar_file(ds, dir + "/data_batch_" + std::to_string(b) + ".bin", Split::train);
    }
    append_cifar_file(ds, dir + "/test_batch.bin", Split::test);
    ds.validate();
    return ds;
}

// ---- idx format ----

namespace {

std::uint32_t read_be32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("idx: truncated header in " + path);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | b[3];
}

void write_be32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

std::vector<std::uint8_t> read_idx_images(const std::string& path, int& count, int& h, int& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("idx: cannot open " + path);
    const std::uint32_t magic = read_be32(is, path);
    if (magic != 0x00000803u) {
        throw std::runtime_error("idx: bad image magic in " + path + " (got 0x" +
                                 [&] {
                                     char buf[16];
                                     std::snprintf(buf, sizeof buf, "%08x", magic);
                                     return std::string(buf);
                                 }() +
                                 ", want 0x00000803)");
    }
    count = static_cast<int>(read_be32(is, path));
    h = static_cast<int>(read_be32(is, path));
    w = static_cast<int>(read_be32(is, path));
    std::vector<std::uint8_t> px(static_cast<std::size_t>(count) * h * w);
    is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!is) throw std::runtime_error("idx: truncated pixel data in " + path);
    return px;
}

std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("idx: cannot open " + path);
    const std::uint32_t magic = read_be32(is, path);
    if (magic != 0x00000801u) throw std::runtime_error("idx: bad label magic in " + path);
    const std::uint32_t count = read_be32(is, path);
    std::vector<std::uint8_t> labels(count);
    is.read(reinterpret_cast<char*>(labels.data()), count);
    if (!is) throw std::runtime_error("idx: truncated label data in " + path);
    return labels;
}

void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels, int count,
                      int h, int w) {
    if (pixels.size() != static_cast<std::size_t>(count) * h * w) {
        throw std::invalid_argument("write_idx_images: pixel count mismatch");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("idx: cannot write " + path);
    write_be32(os, 0x00000803u);
    write_be32(os, static_cast<std::uint32_t>(count));
    write_be32(os, static_cast<std::uint32_t>(h));
    write_be32(os, static_cast<std::uint32_t>(w));
    os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("idx: cannot write " + path);
    write_be32(os, 0x00000801u);
    write_be32(os, static_cast<std::uint32_t>(labels.size()));
    os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset load_mnist_idx(const std::string& dir) {
    Dataset ds;
    ds.channels = 1;
    ds.provenance = "mnist_idx:" + dir;

    auto append = [&](const std::string& img_file, const std::string& lbl_file, Split split) {
        int count = 0, h = 0, w = 0;
        const std::vector<std::uint8_t> px = read_idx_images(dir + "/" + img_file, count, h, w);
        const std::vector<std::uint8_t> lb = read_idx_labels(dir + "/" + lbl_file);
        if (static_cast<int>(lb.size()) != count) {
            throw std::runtime_error("idx: " + img_file + " has " + std::to_string(count) +
                                     " images but " + lbl_file + " has " +
                                     std::to_string(lb.size()) + " labels");
        }
        if (ds.height == 0) {
            ds.height = h;
            ds.width = w;
        } else if (ds.height != h || ds.width != w) {
            throw std::runtime_error("idx: extent mismatch between splits");
        }
        ds.pixels.reserve(ds.pixels.size() + px.size());
        for (std::uint8_t p : px) ds.pixels.push_back(p / 255.0);
        for (std::uint8_t l : lb) {
            ds.labels.push_back(l);
            ds.splits.push_back(split);
        }
    };
    append("train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::train);
    append("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::test);
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    ds.validate();
    return ds;
}

// ---- synthetic corpus ----

std::pair<int, int> synthetic_class_frequency(int c) {
    // Fixed low-frequency table; no entry is another's Hermitian partner on
    // grids of extent >= 12.
    static constexpr std::pair<int, int> kTable[] = {
        {1, 2}, {2, 1}, {1, 1}, {2, 3}, {3, 2}, {1, 4}, {4, 1}, {3, 4}, {4, 3}, {2, 5},
        {5, 2}, {1, 5}, {5, 1}, {3, 5}, {5, 3}, {4, 5},
    };
    constexpr int n = static_cast<int>(std::size(kTable));
    if (c < 0 || c >= n) {
        throw std::invalid_argument("synthetic_class_frequency: class " + std::to_string(c) +
                                    " outside table of " + std::to_string(n));
    }
    return kTable[c];
}

Dataset make_synthetic(int num_classes, int per_class, int h, int w, std::uint64_t seed,
                       double amplitude) {
    if (num_classes < 2) throw std::invalid_argument("make_synthetic: need at least 2 classes");
    if (per_class < 1 || h < 8 || w < 8) {
        throw std::invalid_argument("make_synthetic: degenerate extents");
    }
    Dataset ds;
    ds.height = h;
    ds.width = w;
    ds.channels = 1;
    ds.num_classes = num_classes;
    ds.provenance = "synthetic:c" + std::to_string(num_classes) + ":n" + std::to_string(per_class) +
                    ":s" + std::to_string(seed);

    const int total = num_classes * per_class;
    ds.pixels.resize(static_cast<std::size_t>(total) * h * w);
    ds.labels.resize(total);
    ds.splits.resize(total);

    Rng root(seed);
    Rng noise = root.sub("synthetic.noise");
    Rng jitter = root.sub("synthetic.jitter");

    // Interleave classes so contiguous split ranges stay class-balanced.
    for (int s = 0; s < per_class; ++s) {
        for (int c = 0; c < num_classes; ++c) {
            const int i = s * num_classes + c;
            ds.labels[i] = c;
            const auto [u, v] = synthetic_class_frequency(c);
            const double amp = amplitude * (0.8 + 0.4 * jitter.uniform());
            double* px = ds.pixels.data() + static_cast<std::size_t>(i) * h * w;
            for (int a = 0; a < h; ++a) {
                for (int b = 0; b < w; ++b) {
                    const double wave =
                        std::cos(2.0 * std::numbers::pi *
                                 (static_cast<double>(u) * a / h + static_cast<double>(v) * b / w));
                    const double val = 0.5 + 0.1 * noise.gaussian() + amp * wave;
                    px[static_cast<std::size_t>(a) * w + b] = std::clamp(val, 0.0, 1.0);
                }
            }
        }
    }

    // 70/15/15 split over the interleaved order (each range class-balanced).
    const int n_train = static_cast<int>(0.70 * total);
    const int n_val = static_cast<int>(0.15 * total);
    for (int i = 0; i < total; ++i) {
        ds.splits[i] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    }
    ds.validate();
    return ds;
}

void carve_val(Dataset& ds, double fraction, Rng rng) {
    if (fraction <= 0.0 || fraction >= 1.0) {
        throw std::invalid_argument("carve_val: fraction must be in (0,1)");
    }
    std::vector<int> train = ds.indices(Split::train);
    const int take = static_cast<int>(fraction * train.size());
    rng.shuffle(train);
    for (int i = 0; i < take; ++i) ds.splits[train[i]] = Split::val;
}

std::vector<std::vector<int>> epoch_batches(const Dataset& ds, Split split, int batch_size,
                                            const Rng& stream, int epoch) {
    if (batch_size <= 0) throw std::invalid_argument("epoch_batches: batch_size must be positive");
    std::vector<int> idx = ds.indices(split);
    Rng r = stream.sub(static_cast<std::uint64_t>(epoch));
    r.shuffle(idx);
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i < idx.size(); i += batch_size) {
        const std::size_t end = std::min(idx.size(), i + batch_size);
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

// ---- raw dump ----

void save_dataset_raw(const Dataset& ds, const std::string& prefix) {
    {
        std::ofstream os(prefix + ".bin", std::ios::binary);
        if (!os) throw std::runtime_error("save_dataset_raw: cannot write " + prefix + ".bin");
        static_assert(sizeof(double) == 8);
        os.write(reinterpret_cast<const char*>(ds.pixels.data()),
                 static_cast<std::streamsize>(ds.pixels.size() * 8));
        for (int l : ds.labels) {
            const std::uint32_t v = static_cast<std::uint32_t>(l);
            os.write(reinterpret_cast<const char*>(&v), 4);
        }
        for (Split s : ds.splits) os.put(static_cast<char>(s));
    }
    nlohmann::json j{{"height", ds.height},           {"width", ds.width},
                     {"channels", ds.channels},       {"num_classes", ds.num_classes},
                     {"count", ds.count()},           {"provenance", ds.provenance}};
    std::ofstream os(prefix + ".json");
    os << j.dump(2) << "\n";
}

Dataset load_dataset_raw(const std::string& prefix) {
    std::ifstream mf(prefix + ".json");
    if (!mf) throw std::runtime_error("load_dataset_raw: cannot open " + prefix + ".json");
    nlohmann::json j = nlohmann::json::parse(mf);
    Dataset ds;
    ds.height = j.at("height");
    ds.width = j.at("width");
    ds.channels = j.at("channels");
    ds.num_classes = j.at("num_classes");
    ds.provenance = j.at("provenance");
    const int count = j.at("count");

    std::ifstream is(prefix + ".bin", std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset_raw: cannot open " + prefix + ".bin");
    ds.pixels.resize(static_cast<std::size_t>(count) * ds.sample_size());
    is.read(reinterpret_cast<char*>(ds.pixels.data()),
            static_cast<std::streamsize>(ds.pixels.size() * 8));
    ds.labels.resize(count);
    for (int i = 0; i < count; ++i) {
        std::uint32_t v;
        is.read(reinterpret_cast<char*>(&v), 4);
        ds.labels[i] = static_cast<int>(v);
    }
    ds.splits.resize(count);
    for (int i = 0; i < count; ++i) ds.splits[i] = static_cast<Split>(is.get());
    if (!is) throw std::runtime_error("load_dataset_raw: truncated " + prefix + ".bin");
    ds.validate();
    return ds;
}

}  // namespace rftlab
