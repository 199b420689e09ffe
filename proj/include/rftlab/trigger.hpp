#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rftlab/data.hpp"
#include "rftlab/fft.hpp"
#include "rftlab/model.hpp"
#include "rftlab/rng.hpp"
#include "rftlab/tensor.hpp"

namespace rftlab {

/// Per-frequency loss sensitivity of a model over a probe set.
struct FrequencyHeatmap {
    int height = 0;
    int width = 0;
    double epsilon = 0.0;
    int probe_count = 0;
    std::vector<double> s;  // H*W row-major, S(u,v)

    double at(int u, int v) const { return s[static_cast<std::size_t>(u) * width + v]; }
};

/// A generated frequency-domain trigger and its spatial form.
struct TriggerSpec {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> mask;  // H*W binary, Hermitian-symmetric
    ComplexGrid noise;               // masked, symmetrized frequency noise
    Tensor delta;                    // [H,W,C] real, ||delta||_inf == budget
    double budget = 0.0;

    bool mask_at(int u, int v) const { return mask[static_cast<std::size_t>(u) * width + v] != 0; }
};

/// P(a,b) = cos(2 pi (u a / H + v b / W)), unit peak amplitude.
Tensor sinusoid_probe(int u, int v, int h, int w);

/// Mean loss delta per frequency bin: probe each (u,v) with an epsilon-scaled
/// sinusoid added to every channel (clipped to [0,1]) and average the loss
/// change over the probe set. `loss_fn` must be deterministic.
using ImageLossFn = std::function<double(const Tensor& image, int label)>;
FrequencyHeatmap estimate_heatmap(const ImageLossFn& loss_fn,
                                  const std::vector<std::pair<Tensor, int>>& probes, int h, int w,
                                  double epsilon);

/// Model-based convenience wrapper: cross-entropy loss, images drawn from the
/// dataset at `probe_indices`.
FrequencyHeatmap estimate_heatmap(const VimModel& model, const Dataset& ds,
                                  const std::vector<int>& probe_indices, double epsilon);

/// Top-k% most sensitive bins, always paired with their Hermitian partners:
/// bins are visited in (S descending, (u,v) ascending) order and added a
/// conjugate pair at a time until at least ceil(k% of bins) are selected.
std::vector<std::uint8_t> build_mask(const FrequencyHeatmap& heatmap, double k_percent);

/// Gaussian frequency noise on the masked support, Hermitian-symmetrized so
/// the spatial delta is real, rescaled to exactly the L-infinity budget and
/// replicated over `channels`.
TriggerSpec generate_trigger(const std::vector<std::uint8_t>& mask, int h, int w, Rng rng,
                             double budget, int channels);

/// x_p = clip(x_c + delta, 0, 1), elementwise over [H,W,C].
Tensor poison(const Tensor& image, const Tensor& delta);

// ---- artifact io ----

void save_heatmap_csv(const FrequencyHeatmap& hm, const std::string& path);

/// Full-contrast pixmap of delta for visual inspection: PGM for 1 channel,
/// PPM for 3.
void save_trigger_pixmap(const TriggerSpec& trig, const std::string& path);

/// Exact delta: magic-tagged little-endian binary of the f64 pixel values.
void save_trigger_delta(const TriggerSpec& trig, const std::string& path);
TriggerSpec load_trigger_delta(const std::string& path);

}  // namespace rftlab
