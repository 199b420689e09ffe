#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rftlab/data.hpp"
#include "rftlab/model.hpp"
#include "rftlab/rng.hpp"
#include "rftlab/tensor.hpp"

namespace rftlab {

/// One input-transformation defense configuration.
struct DefenseSpec {
    enum class Kind { none, patch_drop, patch_shuffle, jpeg };
    Kind kind = Kind::none;
    double drop_fraction = 0.25;
    int jpeg_quality = 75;

    std::string name() const;
    static DefenseSpec parse(const std::string& text);  // "none" | "patch_drop:0.25" | ...
};

/// Replaces floor(fraction*N) patches, chosen uniformly without replacement,
/// by the per-channel fill color.
Tensor patch_drop(const Tensor& image, double fraction, Rng rng, int patch_size,
                  const std::vector<double>& fill_color);

/// Permutes the P x P patch grid by a uniform random permutation. Patch
/// contents are preserved exactly as a multiset.
Tensor patch_shuffle(const Tensor& image, Rng rng, int patch_size);

/// Lossy 8x8 block-DCT quantization round trip (the lossy core of JPEG;
/// entropy coding is lossless and omitted). Per channel, edge-replicated
/// padding, standard luminance table scaled by `quality`, clipped to [0,1].
Tensor jpeg_compress(const Tensor& image, int quality);

/// Dispatch on spec.kind. Per-sample determinism comes from `rng`.
Tensor apply_defense(const Tensor& image, const DefenseSpec& spec, int patch_size,
                     const std::vector<double>& fill_color, const Rng& rng);

/// Opaque checkerboard stamp (pixel extent `stamp_px`) in the bottom-right
/// corner: the archetypal localized trigger, landing in the final-scan patch.
Tensor stamp_corner(const Tensor& image, int stamp_px = 3);

/// How poisoned inputs are produced during evaluation.
using PoisonFn = std::function<Tensor(const Tensor& image)>;

struct EvalReport {
    double cda = 0.0;
    double asr = 0.0;
    long clean_total = 0;
    long clean_correct = 0;
    long asr_total = 0;  // samples with true label != target
    long asr_hits = 0;
    std::string defense;
};

/// CDA = accuracy of defense(clean x) over the split; ASR = fraction of
/// defense(poison(x)) classified as `target_label`, over samples whose true
/// label differs from it. Per-sample defense randomness derives from
/// rng.sub(sample index).
EvalReport evaluate(const VimModel& model, const Dataset& ds, Split split,
                    const PoisonFn& poison_fn, int target_label, const DefenseSpec& defense,
                    const Rng& rng);

}  // namespace rftlab
