#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rftlab/rng.hpp"
#include "rftlab/tensor.hpp"

namespace rftlab {

struct VimConfig {
    int image_h = 32;
    int image_w = 32;
    int channels = 1;
    int patch_size = 4;
    int embed_dim = 32;
    int state_dim = 8;
    int num_blocks = 2;
    int num_classes = 2;

    int patches_per_row() const { return image_w / patch_size; }
    int patches_per_col() const { return image_h / patch_size; }
    int num_patches() const { return patches_per_row() * patches_per_col(); }
    int patch_dim() const { return patch_size * patch_size * channels; }

    void validate() const;  // throws on indivisible extents etc.
};

// One selective-SSM block. The forget gate is parameterized as
// A_tilde(i) = exp(-dt(i) (x) exp(A_log)) with dt(i) = softplus(W_dt x_i + b_dt),
// which keeps every gate component strictly inside (0,1).
struct SsmBlockParams {
    Tensor A_log;  // [d,n]
    Tensor W_dt;   // [d,d]
    Tensor b_dt;   // [d]
    Tensor W_B;    // [d,n]
    Tensor W_C;    // [d,n]
    Tensor D;      // [d]
};

struct VimModel {
    VimConfig config;
    Precision precision = Precision::f32;
    Tensor patch_weight;  // [patch_dim, d]
    Tensor patch_bias;    // [d]
    std::vector<SsmBlockParams> blocks;
    Tensor head_weight;  // [d*n, classes]
    Tensor head_bias;    // [classes]

    static VimModel init(const VimConfig& cfg, const Rng& rng, Precision prec);

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    void zero_grad() const;
    VimModel clone() const;
    VimModel cast(Precision prec) const;
};

/// Raw hidden states h(0..N) of one scan, h(0) = 0.
struct HiddenTrace {
    int num_steps = 0;
    int d = 0;
    int n = 0;
    std::vector<double> h;  // (num_steps+1) * d * n

    const double* state(int i) const { return h.data() + static_cast<std::size_t>(i) * d * n; }
};

struct ScanResult {
    Tensor outputs;      // [N,d] per-token outputs y(i)
    Tensor final_state;  // [d,n] differentiable handle on h(N)
    HiddenTrace trace;
};

/// Per-step gate values, exposed for analysis probes.
struct ScanGates {
    int num_steps = 0;
    int d = 0;
    int n = 0;
    std::vector<double> dt;     // [N,d] post-softplus
    std::vector<double> b_seq;  // [N,n]
    std::vector<double> c_seq;  // [N,n]
};

/// Splits [H,W,C] into raster-ordered P x P patches, one row per patch.
/// Pure data rearrangement; not differentiable.
Tensor patchify(const Tensor& image, const VimConfig& cfg);
Tensor unpatchify(const Tensor& patches, const VimConfig& cfg);

/// Patch embedding: patchify then affine projection to [N,d].
Tensor embed(const VimModel& m, const Tensor& image);

/// Selective-SSM recurrence over a token sequence:
///   h(i) = A_tilde(i) (.) h(i-1) + B(i)(dt(i) (.) x(i))
///   y(i) = C(i) h(i)  + D (.) x(i)
/// with input-dependent dt, B, C. Throws if a hidden state goes non-finite,
/// naming the step.
ScanResult ssm_scan(const Tensor& tokens, const SsmBlockParams& params);

/// The recurrence core on precomputed gates. Exposed so equivalence probes
/// can drive it with arbitrary gate sequences.
ScanResult mamba_recurrence(const Tensor& tokens, const Tensor& dt, const Tensor& a_exp,
                            const Tensor& b_seq, const Tensor& c_seq, const Tensor& d_skip);

/// Gate values for a token sequence (no recording).
ScanGates compute_gates(const Tensor& tokens, const SsmBlockParams& params);

struct ForwardResult {
    Tensor logits;       // [num_classes]
    Tensor final_state;  // [d,n] RMS-normalized h(N) of the last block: what the head reads
    Tensor tokens;       // [N,d] embedded tokens
    std::vector<ScanResult> scans;  // one per block
};

ForwardResult forward(const VimModel& m, const Tensor& image);
/// Forward from already-embedded tokens (probes can make `tokens` a grad leaf).
ForwardResult forward_from_tokens(const VimModel& m, const Tensor& tokens);

/// Argmax class of an image under the model, no recording.
int predict(const VimModel& m, const Tensor& image);

// Checkpoint container: versioned binary of named parameter tensors.
// Round-trips exactly at the stored precision.
void save_checkpoint(const VimModel& m, const std::string& path);
VimModel load_checkpoint(const std::string& path);

}  // namespace rftlab
