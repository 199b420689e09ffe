#include "rftlab/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace rftlab {

std::string DefenseSpec::name() const {
    switch (kind) {
        case Kind::none: return "none";
        case Kind::patch_drop: {
            char buf[32];
            std::snprintf(buf, sizeof buf, "patch_drop:%g", drop_fraction);
            return buf;
        }
        case Kind::patch_shuffle: return "patch_shuffle";
        case Kind::jpeg: return "jpeg:" + std::to_string(jpeg_quality);
    }
    return "?";
}

DefenseSpec DefenseSpec::parse(const std::string& text) {
    DefenseSpec spec;
    const std::size_t colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (head == "none") {
        spec.kind = Kind::none;
    } else if (head == "patch_drop") {
        spec.kind = Kind::patch_drop;
        if (!arg.empty()) spec.drop_fraction = std::stod(arg);
        if (spec.drop_fraction < 0.0 || spec.drop_fraction >= 1.0) {
            throw std::invalid_argument("defense: drop fraction must be in [0,1)");
        }
    } else if (head == "patch_shuffle") {
        spec.kind = Kind::patch_shuffle;
    } else if (head == "jpeg") {
        spec.kind = Kind::jpeg;
        if (!arg.empty()) spec.jpeg_quality = std::stoi(arg);
        if (spec.jpeg_quality < 1 || spec.jpeg_quality > 100) {
            throw std::invalid_argument("defense: jpeg quality must be in [1,100]");
        }
    } else {
        throw std::invalid_argument("defense: unknown kind '" + text + "'");
    }
    return spec;
}

namespace {

void check_patch_extents(const std::vector<int>& s, int patch_size, const char* who) {
    if (s.size() != 3) throw std::invalid_argument(std::string(who) + ": expected [H,W,C] image");
    if (patch_size <= 0 || s[0] % patch_size != 0 || s[1] % patch_size != 0) {
        throw std::invalid_argument(std::string(who) + ": extents " + shape_str(s) +
                                    " not divisible by patch size " + std::to_string(patch_size));
    }
}

}  // namespace

Tensor patch_drop(const Tensor& image, double fraction, Rng rng, int patch_size,
                  const std::vector<double>& fill_color) {
    if (fraction < 0.0 || fraction >= 1.0) {
        throw std::invalid_argument("patch_drop: fraction must be in [0,1)");
    }
    const auto& s = image.shape();
    check_patch_extents(s, patch_size, "patch_drop");
    const int c = s[2];
    if (static_cast<int>(fill_color.size()) != c) {
        throw std::invalid_argument("patch_drop: fill color has wrong channel count");
    }
    const int rows = s[0] / patch_size, cols = s[1] / patch_size;
    const int n = rows * cols;
    const int k = static_cast<int>(fraction * n);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    Tensor out = Tensor::from(s, image.values(), image.precision());
    double* v = out.values_mut().data();
    for (int t = 0; t < k; ++t) {
        const int by = order[t] / cols, bx = order[t] % cols;
        for (int dy = 0; dy < patch_size; ++dy) {
            double* line = v + (static_cast<std::size_t>(by * patch_size + dy) * s[1] +
                                static_cast<std::size_t>(bx) * patch_size) *
                                   c;
            for (int dx = 0; dx < patch_size; ++dx) {
                for (int ch = 0; ch < c; ++ch) line[static_cast<std::size_t>(dx) * c + ch] = fill_color[ch];
            }
        }
    }
    return out;
}

Tensor patch_shuffle(const Tensor& image, Rng rng, int patch_size) {
    const auto& s = image.shape();
    check_patch_extents(s, patch_size, "patch_shuffle");
    const int c = s[2];
    const int rows = s[0] / patch_size, cols = s[1] / patch_size;
    const int n = rows * cols;

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);

    Tensor out = Tensor::zeros(s, image.precision());
    const double* src = image.values().data();
    double* dst = out.values_mut().data();
    const std::size_t row_bytes = static_cast<std::size_t>(patch_size) * c;
    for (int dest = 0; dest < n; ++dest) {
        const int srcp = perm[dest];
        const int sy = srcp / cols, sx = srcp % cols;
        const int dy0 = dest / cols, dx0 = dest % cols;
        for (int dy = 0; dy < patch_size; ++dy) {
            const double* from = src + (static_cast<std::size_t>(sy * patch_size + dy) * s[1] +
                                        static_cast<std::size_t>(sx) * patch_size) *
                                           c;
            double* to = dst + (static_cast<std::size_t>(dy0 * patch_size + dy) * s[1] +
                                static_cast<std::size_t>(dx0) * patch_size) *
                                   c;
            std::copy(from, from + row_bytes, to);
        }
    }
    return out;
}

// ---- jpeg-style codec ----

namespace {

// Standard luminance quantization table (row-major 8x8).
constexpr int kLumaQuant[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
};

// Orthonormal DCT-II basis for extent 8: basis[k][x].
struct DctBasis {
    double b[8][8];
    DctBasis() {
        for (int k = 0; k < 8; ++k) {
            const double norm = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int x = 0; x < 8; ++x) {
                b[k][x] = norm * std::cos((2 * x + 1) * k * std::numbers::pi / 16.0);
            }
        }
    }
};

const DctBasis& dct_basis() {
    static const DctBasis basis;
    return basis;
}

void quant_table(int quality, int table[64]) {
    // Standard quality scaling of the base table.
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    for (int i = 0; i < 64; ++i) {
        table[i] = std::clamp((kLumaQuant[i] * scale + 50) / 100, 1, 255);
    }
}

void dct8x8(const double in[64], double out[64]) {
    const DctBasis& d = dct_basis();
    double tmp[64];
    for (int y = 0; y < 8; ++y) {
        for (int k = 0; k < 8; ++k) {
            double s = 0.0;
            for (int x = 0; x < 8; ++x) s += in[y * 8 + x] * d.b[k][x];
            tmp[y * 8 + k] = s;
        }
    }
    for (int k = 0; k < 8; ++k) {
        for (int j = 0; j < 8; ++j) {
            double s = 0.0;
            for (int y = 0; y < 8; ++y) s += tmp[y * 8 + j] * d.b[k][y];
            out[k * 8 + j] = s;
        }
    }
}

void idct8x8(const double in[64], double out[64]) {
    const DctBasis& d = dct_basis();
    double tmp[64];
    for (int k = 0; k < 8; ++k) {
        for (int x = 0; x < 8; ++x) {
            double s = 0.0;
            for (int j = 0; j < 8; ++j) s += in[k * 8 + j] * d.b[j][x];
            tmp[k * 8 + x] = s;
        }
    }
    for (int x = 0; x < 8; ++x) {
        for (int y = 0; y < 8; ++y) {
            double s = 0.0;
            for (int k = 0; k < 8; ++k) s += tmp[k * 8 + x] * d.b[k][y];
            out[y * 8 + x] = s;
        }
    }
}

}  // namespace

Tensor jpeg_compress(const Tensor& image, int quality) {
    if (quality < 1 || quality > 100) {
        throw std::invalid_argument("jpeg_compress: quality must be in [1,100]");
    }
    const auto& s = image.shape();
    if (s.size() != 3) throw std::invalid_argument("jpeg_compress: expected [H,W,C] image");
    const int h = s[0], w = s[1], c = s[2];
    const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;

    int table[64];
    quant_table(quality, table);

    Tensor out = Tensor::zeros(s, image.precision());
    const double* src = image.values().data();
    double* dst = out.values_mut().data();
    std::vector<double> plane(static_cast<std::size_t>(ph) * pw);

    for (int ch = 0; ch < c; ++ch) {
        // Edge-replicated padded plane in the 0..255 domain, centered at -128.
        for (int y = 0; y < ph; ++y) {
            const int sy = std::min(y, h - 1);
            for (int x = 0; x < pw; ++x) {
                const int sx = std::min(x, w - 1);
                plane[static_cast<std::size_t>(y) * pw + x] =
                    src[(static_cast<std::size_t>(sy) * w + sx) * c + ch] * 255.0 - 128.0;
            }
        }
        double block[64], coef[64];
        for (int by = 0; by < ph; by += 8) {
            for (int bx = 0; bx < pw; bx += 8) {
                for (int y = 0; y < 8; ++y) {
                    for (int x = 0; x < 8; ++x) {
                        block[y * 8 + x] = plane[static_cast<std::size_t>(by + y) * pw + bx + x];
                    }
                }
                dct8x8(block, coef);
                for (int i = 0; i < 64; ++i) {
                    coef[i] = std::round(coef[i] / table[i]) * table[i];
                }
                idct8x8(coef, block);
                for (int y = 0; y < 8; ++y) {
                    for (int x = 0; x < 8; ++x) {
                        plane[static_cast<std::size_t>(by + y) * pw + bx + x] = block[y * 8 + x];
                    }
                }
            }
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                dst[(static_cast<std::size_t>(y) * w + x) * c + ch] =
                    std::clamp((plane[static_cast<std::size_t>(y) * pw + x] + 128.0) / 255.0, 0.0, 1.0);
            }
        }
    }
    return out;
}

Tensor apply_defense(const Tensor& image, const DefenseSpec& spec, int patch_size,
                     const std::vector<double>& fill_color, const Rng& rng) {
    switch (spec.kind) {
        case DefenseSpec::Kind::none: return image;
        case DefenseSpec::Kind::patch_drop:
            return patch_drop(image, spec.drop_fraction, rng, patch_size, fill_color);
        case DefenseSpec::Kind::patch_shuffle: return patch_shuffle(image, rng, patch_size);
        case DefenseSpec::Kind::jpeg: return jpeg_compress(image, spec.jpeg_quality);
    }
    throw std::logic_error("apply_defense: unreachable");
}

Tensor stamp_corner(const Tensor& image, int stamp_px) {
    const auto& s = image.shape();
    if (s.size() != 3) throw std::invalid_argument("stamp_corner: expected [H,W,C] image");
    if (stamp_px < 1 || stamp_px > s[0] || stamp_px > s[1]) {
        throw std::invalid_argument("stamp_corner: stamp extent out of range");
    }
    Tensor out = Tensor::from(s, image.values(), image.precision());
    double* v = out.values_mut().data();
    const int h = s[0], w = s[1], c = s[2];
    for (int dy = 0; dy < stamp_px; ++dy) {
        for (int dx = 0; dx < stamp_px; ++dx) {
            const double val = (dy + dx) % 2 == 0 ? 1.0 : 0.0;
            const int y = h - stamp_px + dy, x = w - stamp_px + dx;
            for (int ch = 0; ch < c; ++ch) v[(static_cast<std::size_t>(y) * w + x) * c + ch] = val;
        }
    }
    return out;
}

EvalReport evaluate(const VimModel& model, const Dataset& ds, Split split,
                    const PoisonFn& poison_fn, int target_label, const DefenseSpec& defense,
                    const Rng& rng) {
    const std::vector<int> idx = ds.indices(split);
    if (idx.empty()) {
        throw std::invalid_argument(std::string("evaluate: empty ") + split_name(split) + " split");
    }
    const std::vector<double> fill = ds.mean_color();
    const int patch = model.config.patch_size;

    EvalReport rep;
    rep.defense = defense.name();
    for (int i : idx) {
        const Tensor img = ds.image(i, model.precision);
        // Clean and poisoned branches see the same defense draw for sample i.
        const Tensor defended = apply_defense(img, defense, patch, fill, rng.sub(static_cast<std::uint64_t>(i)));
        ++rep.clean_total;
        if (predict(model, defended) == ds.labels[i]) ++rep.clean_correct;

        if (ds.labels[i] != target_label) {
            const Tensor poisoned = poison_fn(img);
            const Tensor defended_p =
                apply_defense(poisoned, defense, patch, fill, rng.sub(static_cast<std::uint64_t>(i)));
            ++rep.asr_total;
            if (predict(model, defended_p) == target_label) ++rep.asr_hits;
        }
    }
    rep.cda = static_cast<double>(rep.clean_correct) / static_cast<double>(rep.clean_total);
    rep.asr = rep.asr_total > 0 ? static_cast<double>(rep.asr_hits) / static_cast<double>(rep.asr_total)
                                : 0.0;
    return rep;
}

}  // namespace rftlab
