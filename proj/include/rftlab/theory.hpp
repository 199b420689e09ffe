#pragma once

#include <string>
#include <vector>

#include "rftlab/model.hpp"
#include "rftlab/rng.hpp"
#include "rftlab/tensor.hpp"

namespace rftlab {

/// Causal linear attention via the recurrent state update
///   S(i) = S(i-1) + K(i)^T V(i),  Z(i) = Z(i-1) + K(i)^T,
///   y(i) = Q(i) S(i) / Q(i) Z(i).
/// Q,K are [N,dk], V is [N,dv]; returns [N,dv]. Throws (naming the step) when
/// a normalizer Q(i)Z(i) vanishes.
Tensor linear_attention_scan(const Tensor& q, const Tensor& k, const Tensor& v);

/// The same attention computed directly from the O(N^2) quadratic form:
///   y(i) = sum_{j<=i} (Q(i).K(j)) V(j) / sum_{j<=i} (Q(i).K(j)).
Tensor linear_attention_direct(const Tensor& q, const Tensor& k, const Tensor& v);

/// Final state by the literal product-sum expansion of the recurrence:
///   h(N) = sum_i (prod_{j=i+1..N} gate(j)) (.) B(i)(dt(i) (.) x(i)),
/// with gate(j) = exp(-dt(j) (x) a_exp) and h(0) = 0 (which makes the
/// expansion exact). Independent of the scan implementation.
Tensor unrolled_state(const Tensor& tokens, const Tensor& dt, const Tensor& a_exp,
                      const Tensor& b_seq, const Tensor& c_seq);

/// Max |scan - expansion| over `trials` random gate sets with N <= max_n.
double scan_unroll_max_error(int trials, int max_n, std::uint64_t seed);

/// Max |recurrent - direct| linear attention over random positive-feature
/// sequences.
double linear_attention_max_error(int trials, int seq_len, std::uint64_t seed);

struct InfluenceProfile {
    std::string mode;               // localized | localized_grad | distributed | forced_gate
    std::vector<double> influence;  // one entry per token position
    double decay_slope = 0.0;       // least-squares slope of log I vs distance from the end
    double cv = 0.0;                // std/mean over positions
};

/// Least-squares slope of log(influence) against distance from the sequence
/// end; also fills cv.
void fit_profile_stats(InfluenceProfile& prof);

/// Perturbs one patch at a time (checkerboard bump of `perturb_scale` in
/// pixel space, unclipped) and measures the final-state deviation per
/// position, averaged over probe images.
InfluenceProfile influence_localized(const VimModel& model,
                                     const std::vector<Tensor>& probe_images,
                                     double perturb_scale = 0.05);

/// Gradient analogue: per-token-row norm of d<R, h(N)>/d tokens for random
/// projections R, averaged over probe images and draws.
InfluenceProfile influence_localized_grad(const VimModel& model,
                                          const std::vector<Tensor>& probe_images, Rng rng,
                                          int projections = 4);

/// Per-step injected-term magnitude ||B(i)|| * ||dt(i) (.) dtok(i)|| of the
/// first block under a distributed delta, averaged over probe images.
InfluenceProfile influence_distributed(const VimModel& model,
                                       const std::vector<Tensor>& probe_images,
                                       const Tensor& delta);

/// Scan with the forget gate clamped to the scalar `alpha`: random stationary
/// tokens and B projections, finite-difference influence per position. The
/// fitted slope recovers log(alpha).
InfluenceProfile influence_forced_gate(double alpha, int num_steps, int d, int n, Rng rng,
                                       int num_probes);

void save_profile_csv(const InfluenceProfile& prof, const std::string& path);

}  // namespace rftlab
