#include "rftlab/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace rftlab {

Tensor sinusoid_probe(int u, int v, int h, int w) {
    if (u < 0 || u >= h || v < 0 || v >= w) {
        throw std::invalid_argument("sinusoid_probe: frequency (" + std::to_string(u) + "," +
                                    std::to_string(v) + ") outside " + std::to_string(h) + "x" +
                                    std::to_string(w));
    }
    std::vector<double> p(static_cast<std::size_t>(h) * w);
    for (int a = 0; a < h; ++a) {
        for (int b = 0; b < w; ++b) {
            p[static_cast<std::size_t>(a) * w + b] =
                std::cos(2.0 * std::numbers::pi *
                         (static_cast<double>(u) * a / h + static_cast<double>(v) * b / w));
        }
    }
    return Tensor::from({h, w}, std::move(p));
}

FrequencyHeatmap estimate_heatmap(const ImageLossFn& loss_fn,
                                  const std::vector<std::pair<Tensor, int>>& probes, int h, int w,
                                  double epsilon) {
    if (probes.empty()) throw std::invalid_argument("estimate_heatmap: empty probe set");
    for (const auto& [img, label] : probes) {
        const auto& s = img.shape();
        if (s.size() != 3 || s[0] != h || s[1] != w) {
            throw std::invalid_argument("estimate_heatmap: probe image shape " + shape_str(s) +
                                        " does not match " + std::to_string(h) + "x" +
                                        std::to_string(w));
        }
    }
    FrequencyHeatmap hm;
    hm.height = h;
    hm.width = w;
    hm.epsilon = epsilon;
    hm.probe_count = static_cast<int>(probes.size());
    hm.s.assign(static_cast<std::size_t>(h) * w, 0.0);

    std::vector<double> base(probes.size());
    for (std::size_t i = 0; i < probes.size(); ++i) {
        base[i] = loss_fn(probes[i].first, probes[i].second);
    }

    const int channels = probes[0].first.shape()[2];
    Tensor perturbed = Tensor::zeros({h, w, channels}, probes[0].first.precision());
    for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
            const Tensor probe = sinusoid_probe(u, v, h, w);
            const double* pw = probe.values().data();
            double acc = 0.0;
            for (std::size_t i = 0; i < probes.size(); ++i) {
                const double* src = probes[i].first.values().data();
                double* dst = perturbed.values_mut().data();
                for (int a = 0; a < h * w; ++a) {
                    const double bump = epsilon * pw[a];
                    for (int c = 0; c < channels; ++c) {
                        dst[static_cast<std::size_t>(a) * channels + c] =
                            std::clamp(src[static_cast<std::size_t>(a) * channels + c] + bump, 0.0, 1.0);
                    }
                }
                acc += loss_fn(perturbed, probes[i].second) - base[i];
            }
            hm.s[static_cast<std::size_t>(u) * w + v] = acc / static_cast<double>(probes.size());
        }
    }
    return hm;
}

FrequencyHeatmap estimate_heatmap(const VimModel& model, const Dataset& ds,
                                  const std::vector<int>& probe_indices, double epsilon) {
    if (probe_indices.empty()) throw std::invalid_argument("estimate_heatmap: empty probe set");
    std::vector<std::pair<Tensor, int>> probes;
    probes.reserve(probe_indices.size());
    for (int i : probe_indices) probes.emplace_back(ds.image(i, model.precision), ds.labels[i]);
    ImageLossFn loss_fn = [&model](const Tensor& image, int label) {
        NoGradGuard no_grad;
        return cross_entropy(forward(model, image).logits, label).item();
    };
    return estimate_heatmap(loss_fn, probes, ds.height, ds.width, epsilon);
}

std::vector<std::uint8_t> build_mask(const FrequencyHeatmap& heatmap, double k_percent) {
    if (!(k_percent > 0.0) || k_percent > 100.0) {
        throw std::invalid_argument("build_mask: k_percent must be in (0,100], got " +
                                    std::to_string(k_percent));
    }
    const int h = heatmap.height, w = heatmap.width;
    const int bins = h * w;
    const int target = static_cast<int>(std::ceil(k_percent * bins / 100.0));

    std::vector<int> order(bins);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (heatmap.s[a] != heatmap.s[b]) return heatmap.s[a] > heatmap.s[b];
        return a < b;  // row-major index order == (u,v) lexicographic
    });

    std::vector<std::uint8_t> mask(bins, 0);
    int selected = 0;
    for (int bin : order) {
        if (selected >= target) break;
        if (mask[bin]) continue;
        const int u = bin / w, v = bin % w;
        const int partner = ((h - u) % h) * w + ((w - v) % w);
        mask[bin] = 1;
        ++selected;
        if (!mask[partner]) {
            mask[partner] = 1;
            ++selected;
        }
    }
    return mask;
}

TriggerSpec generate_trigger(const std::vector<std::uint8_t>& mask, int h, int w, Rng rng,
                             double budget, int channels) {
    if (mask.size() != static_cast<std::size_t>(h) * w) {
        throw std::invalid_argument("generate_trigger: mask size does not match extents");
    }
    bool any = false;
    for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
            const std::size_t i = static_cast<std::size_t>(u) * w + v;
            const std::size_t p = static_cast<std::size_t>((h - u) % h) * w + (w - v) % w;
            if (mask[i] != mask[p]) {
                throw std::invalid_argument("generate_trigger: mask not Hermitian-symmetric at (" +
                                            std::to_string(u) + "," + std::to_string(v) + ")");
            }
            any = any || mask[i] != 0;
        }
    }
    if (!any) throw std::invalid_argument("generate_trigger: all-zero mask is degenerate");
    if (!(budget > 0.0)) throw std::invalid_argument("generate_trigger: budget must be positive");
    if (channels < 1) throw std::invalid_argument("generate_trigger: channels must be >= 1");

    // Dense Gaussian noise, then Hermitian symmetrization (lex-smaller bin of
    // each conjugate pair is the source), then the mask.
    ComplexGrid g(h, w);
    for (double& x : g.re) x = rng.gaussian();
    for (double& x : g.im) x = rng.gaussian();
    for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
            const std::size_t i = static_cast<std::size_t>(u) * w + v;
            const std::size_t p = static_cast<std::size_t>((h - u) % h) * w + (w - v) % w;
            if (i == p) {
                g.im[i] = 0.0;  // self-conjugate bin must be real
            } else if (i < p) {
                g.re[p] = g.re[i];
                g.im[p] = -g.im[i];
            }
        }
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) {
            g.re[i] = 0.0;
            g.im[i] = 0.0;
        }
    }

    double residue = 0.0;
    Tensor spatial = idft2(g, &residue);
    std::vector<double> d = spatial.values();
    double peak = 0.0;
    for (double x : d) peak = std::max(peak, std::fabs(x));
    if (peak == 0.0) throw std::runtime_error("generate_trigger: degenerate all-zero noise draw");
    const double scale = budget / peak;
    for (double& x : d) x *= scale;
    for (double& x : g.re) x *= scale;
    for (double& x : g.im) x *= scale;

    TriggerSpec trig;
    trig.height = h;
    trig.width = w;
    trig.mask = mask;
    trig.noise = std::move(g);
    trig.budget = budget;
    std::vector<double> dc(static_cast<std::size_t>(h) * w * channels);
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (int c = 0; c < channels; ++c) dc[i * channels + c] = d[i];
    }
    trig.delta = Tensor::from({h, w, channels}, std::move(dc));
    return trig;
}

Tensor poison(const Tensor& image, const Tensor& delta) {
    if (image.shape() != delta.shape()) {
        throw std::invalid_argument("poison: image shape " + shape_str(image.shape()) +
                                    " vs delta " + shape_str(delta.shape()));
    }
    Tensor out = Tensor::from(image.shape(), image.values(), image.precision());
    double* v = out.values_mut().data();
    const double* d = delta.values().data();
    for (std::int64_t i = 0; i < out.size(); ++i) v[i] = std::clamp(v[i] + d[i], 0.0, 1.0);
    return out;
}

// ---- artifact io ----

void save_heatmap_csv(const FrequencyHeatmap& hm, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_heatmap_csv: cannot write " + path);
    os << "u,v,S\n";
    char buf[64];
    for (int u = 0; u < hm.height; ++u) {
        for (int v = 0; v < hm.width; ++v) {
            std::snprintf(buf, sizeof buf, "%d,%d,%.17g\n", u, v, hm.at(u, v));
            os << buf;
        }
    }
}

void save_trigger_pixmap(const TriggerSpec& trig, const std::string& path) {
    const auto& s = trig.delta.shape();
    const int h = s[0], w = s[1], c = s[2];
    if (c != 1 && c != 3) {
        throw std::invalid_argument("save_trigger_pixmap: only 1 or 3 channels supported");
    }
    const std::vector<double>& d = trig.delta.values();
    double lo = d[0], hi = d[0];
    for (double x : d) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_trigger_pixmap: cannot write " + path);
    os << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
    for (double x : d) {
        const int byte = static_cast<int>(std::lround((x - lo) / span * 255.0));
        os.put(static_cast<char>(std::clamp(byte, 0, 255)));
    }
}

namespace {
constexpr char kDeltaMagic[8] = {'R', 'F', 'T', 'D', 'E', 'L', 'T', '1'};
}

void save_trigger_delta(const TriggerSpec& trig, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_trigger_delta: cannot write " + path);
    os.write(kDeltaMagic, 8);
    const auto& s = trig.delta.shape();
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(s[0]), static_cast<std::uint32_t>(s[1]),
                                   static_cast<std::uint32_t>(s[2])};
    os.write(reinterpret_cast<const char*>(dims), sizeof dims);
    os.write(reinterpret_cast<const char*>(&trig.budget), 8);
    os.write(reinterpret_cast<const char*>(trig.mask.data()),
             static_cast<std::streamsize>(trig.mask.size()));
    os.write(reinterpret_cast<const char*>(trig.delta.values().data()),
             static_cast<std::streamsize>(trig.delta.values().size() * 8));
    if (!os) throw std::runtime_error("save_trigger_delta: write failed for " + path);
}

TriggerSpec load_trigger_delta(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_trigger_delta: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kDeltaMagic, 8) != 0) {
        throw std::runtime_error("load_trigger_delta: " + path + " is not a trigger file");
    }
    std::uint32_t dims[3];
    is.read(reinterpret_cast<char*>(dims), sizeof dims);
    TriggerSpec trig;
    trig.height = static_cast<int>(dims[0]);
    trig.width = static_cast<int>(dims[1]);
    const int c = static_cast<int>(dims[2]);
    is.read(reinterpret_cast<char*>(&trig.budget), 8);
    trig.mask.resize(static_cast<std::size_t>(trig.height) * trig.width);
    is.read(reinterpret_cast<char*>(trig.mask.data()),
            static_cast<std::streamsize>(trig.mask.size()));
    std::vector<double> d(static_cast<std::size_t>(trig.height) * trig.width * c);
    is.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * 8));
    if (!is) throw std::runtime_error("load_trigger_delta: truncated file " + path);
    trig.delta = Tensor::from({trig.height, trig.width, c}, std::move(d));
    trig.noise = ComplexGrid(trig.height, trig.width);  // frequency noise is not persisted
    return trig;
}

}  // namespace rftlab
