#include "rftlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "rftlab/trigger.hpp"

namespace rftlab {

Tensor linear_attention_scan(const Tensor& q, const Tensor& k, const Tensor& v) {
    const auto &qs = q.shape(), &ks = k.shape(), &vs = v.shape();
    if (qs.size() != 2 || ks != qs || vs.size() != 2 || vs[0] != qs[0]) {
        throw std::invalid_argument("linear_attention_scan: Q,K must be [N,dk], V [N,dv]");
    }
    const int n = qs[0], dk = qs[1], dv = vs[1];
    std::vector<double> s(static_cast<std::size_t>(dk) * dv, 0.0), z(dk, 0.0);
    Tensor out = Tensor::zeros({n, dv});
    const double* vq = q.values().data();
    const double* vk = k.values().data();
    const double* vv = v.values().data();
    double* vy = out.values_mut().data();
    for (int i = 0; i < n; ++i) {
        const double* qi = vq + static_cast<std::size_t>(i) * dk;
        const double* ki = vk + static_cast<std::size_t>(i) * dk;
        const double* vi = vv + static_cast<std::size_t>(i) * dv;
        for (int a = 0; a < dk; ++a) {
            for (int b = 0; b < dv; ++b) s[static_cast<std::size_t>(a) * dv + b] += ki[a] * vi[b];
            z[a] += ki[a];
        }
        double den = 0.0;
        for (int a = 0; a < dk; ++a) den += qi[a] * z[a];
        if (den == 0.0 || !std::isfinite(den)) {
            throw std::runtime_error("linear_attention_scan: zero normalizer at step " +
                                     std::to_string(i + 1));
        }
        for (int b = 0; b < dv; ++b) {
            double num = 0.0;
            for (int a = 0; a < dk; ++a) num += qi[a] * s[static_cast<std::size_t>(a) * dv + b];
            vy[static_cast<std::size_t>(i) * dv + b] = num / den;
        }
    }
    return out;
}

Tensor linear_attention_direct(const Tensor& q, const Tensor& k, const Tensor& v) {
    const int n = q.shape()[0], dk = q.shape()[1], dv = v.shape()[1];
    Tensor out = Tensor::zeros({n, dv});
    const double* vq = q.values().data();
    const double* vk = k.values().data();
    const double* vv = v.values().data();
    double* vy = out.values_mut().data();
    for (int i = 0; i < n; ++i) {
        double den = 0.0;
        std::vector<double> num(dv, 0.0);
        for (int j = 0; j <= i; ++j) {
            double dot = 0.0;
            for (int a = 0; a < dk; ++a) {
                dot += vq[static_cast<std::size_t>(i) * dk + a] * vk[static_cast<std::size_t>(j) * dk + a];
            }
            den += dot;
            for (int b = 0; b < dv; ++b) num[b] += dot * vv[static_cast<std::size_t>(j) * dv + b];
        }
        if (den == 0.0) {
            throw std::runtime_error("linear_attention_direct: zero normalizer at step " +
                                     std::to_string(i + 1));
        }
        for (int b = 0; b < dv; ++b) vy[static_cast<std::size_t>(i) * dv + b] = num[b] / den;
    }
    return out;
}

Tensor unrolled_state(const Tensor& tokens, const Tensor& dt, const Tensor& a_exp,
                      const Tensor& b_seq, const Tensor& c_seq) {
    (void)c_seq;  // the final state does not involve C; kept for signature parity with the scan
    const int n_steps = tokens.shape()[0], d = tokens.shape()[1];
    const int n = a_exp.shape()[1];
    const double* vx = tokens.values().data();
    const double* vdt = dt.values().data();
    const double* va = a_exp.values().data();
    const double* vb = b_seq.values().data();

    Tensor h = Tensor::zeros({d, n});
    double* vh = h.values_mut().data();
    // Literal expansion: every term rebuilds its gate product from scratch.
    for (int i = 0; i < n_steps; ++i) {
        for (int p = 0; p < d; ++p) {
            const double inj_x = vdt[static_cast<std::size_t>(i) * d + p] *
                                 vx[static_cast<std::size_t>(i) * d + p];
            for (int q = 0; q < n; ++q) {
                double prod = 1.0;
                for (int j = i + 1; j < n_steps; ++j) {
                    prod *= std::exp(-vdt[static_cast<std::size_t>(j) * d + p] *
                                     va[static_cast<std::size_t>(p) * n + q]);
                }
                vh[static_cast<std::size_t>(p) * n + q] +=
                    prod * vb[static_cast<std::size_t>(i) * n + q] * inj_x;
            }
        }
    }
    return h;
}

double scan_unroll_max_error(int trials, int max_n, std::uint64_t seed) {
    NoGradGuard no_grad;
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        Rng rng = Rng(seed).sub(static_cast<std::uint64_t>(t));
        const int n_steps = 1 + rng.uniform_int(max_n);
        const int d = 1 + rng.uniform_int(6);
        const int n = 1 + rng.uniform_int(5);

        auto rand_tensor = [&rng](std::vector<int> shape, bool positive) {
            std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
            for (double& x : v) {
                const double g = rng.gaussian();
                x = positive ? std::log1p(std::exp(g)) : g;  // softplus keeps it positive
            }
            return Tensor::from(std::move(shape), std::move(v));
        };
        Tensor tokens = rand_tensor({n_steps, d}, false);
        Tensor dt = rand_tensor({n_steps, d}, true);
        Tensor a_exp = rand_tensor({d, n}, true);
        Tensor b_seq = rand_tensor({n_steps, n}, false);
        Tensor c_seq = rand_tensor({n_steps, n}, false);
        Tensor d_skip = rand_tensor({d}, false);

        ScanResult scan = mamba_recurrence(tokens, dt, a_exp, b_seq, c_seq, d_skip);
        Tensor unrolled = unrolled_state(tokens, dt, a_exp, b_seq, c_seq);
        const std::vector<double>& a = scan.final_state.values();
        const std::vector<double>& b = unrolled.values();
        for (std::size_t i = 0; i < a.size(); ++i) {
            worst = std::max(worst, std::fabs(a[i] - b[i]));
        }
    }
    return worst;
}

double linear_attention_max_error(int trials, int seq_len, std::uint64_t seed) {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        Rng rng = Rng(seed).sub(static_cast<std::uint64_t>(t));
        const int dk = 2 + rng.uniform_int(4);
        const int dv = 2 + rng.uniform_int(4);
        auto rand_tensor = [&rng](std::vector<int> shape, bool positive) {
            std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
            for (double& x : v) x = positive ? std::exp(0.5 * rng.gaussian()) : rng.gaussian();
            return Tensor::from(std::move(shape), std::move(v));
        };
        // Positive Q,K keep every normalizer bounded away from zero.
        Tensor q = rand_tensor({seq_len, dk}, true);
        Tensor k = rand_tensor({seq_len, dk}, true);
        Tensor v = rand_tensor({seq_len, dv}, false);
        const Tensor ya = linear_attention_scan(q, k, v);
        const Tensor yb = linear_attention_direct(q, k, v);
        const std::vector<double>& a = ya.values();
        const std::vector<double>& b = yb.values();
        for (std::size_t i = 0; i < a.size(); ++i) {
            worst = std::max(worst, std::fabs(a[i] - b[i]));
        }
    }
    return worst;
}

// ---- influence profiles ----

void fit_profile_stats(InfluenceProfile& prof) {
    const int n = static_cast<int>(prof.influence.size());
    if (n == 0) return;
    double mean = 0.0;
    for (double x : prof.influence) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : prof.influence) var += (x - mean) * (x - mean);
    var /= n;
    prof.cv = mean != 0.0 ? std::sqrt(var) / mean : 0.0;

    // log I against distance from the end, positions with I <= 0 skipped.
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    int m = 0;
    for (int i = 0; i < n; ++i) {
        if (prof.influence[i] <= 0.0) continue;
        const double x = static_cast<double>(n - 1 - i);
        const double y = std::log(prof.influence[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++m;
    }
    const double denom = m * sxx - sx * sx;
    prof.decay_slope = (m >= 2 && denom != 0.0) ? (m * sxy - sx * sy) / denom : 0.0;
}

namespace {

double state_norm_diff(const Tensor& a, const Tensor& b) {
    const std::vector<double>& va = a.values();
    const std::vector<double>& vb = b.values();
    double s = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) s += (va[i] - vb[i]) * (va[i] - vb[i]);
    return std::sqrt(s);
}

}  // namespace

InfluenceProfile influence_localized(const VimModel& model,
                                     const std::vector<Tensor>& probe_images,
                                     double perturb_scale) {
    if (probe_images.empty()) throw std::invalid_argument("influence_localized: no probe images");
    NoGradGuard no_grad;
    const VimConfig& cfg = model.config;
    const int n = cfg.num_patches(), p = cfg.patch_size, cols = cfg.patches_per_row();
    InfluenceProfile prof;
    prof.mode = "localized";
    prof.influence.assign(n, 0.0);

    for (const Tensor& img : probe_images) {
        const Tensor base_state = forward(model, img).final_state;
        for (int i = 0; i < n; ++i) {
            Tensor pert = Tensor::from(img.shape(), img.values(), img.precision());
            double* v = pert.values_mut().data();
            const int by = i / cols, bx = i % cols;
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) {
                    const double bump = ((dy + dx) % 2 == 0 ? 1.0 : -1.0) * perturb_scale;
                    const std::size_t off =
                        (static_cast<std::size_t>(by * p + dy) * cfg.image_w + bx * p + dx) *
                        cfg.channels;
                    for (int c = 0; c < cfg.channels; ++c) v[off + c] += bump;
                }
            }
            prof.influence[i] += state_norm_diff(forward(model, pert).final_state, base_state);
        }
    }
    for (double& x : prof.influence) x /= static_cast<double>(probe_images.size());
    fit_profile_stats(prof);
    return prof;
}

InfluenceProfile influence_localized_grad(const VimModel& model,
                                          const std::vector<Tensor>& probe_images, Rng rng,
                                          int projections) {
    if (probe_images.empty() || projections < 1) {
        throw std::invalid_argument("influence_localized_grad: bad inputs");
    }
    const VimConfig& cfg = model.config;
    const int n = cfg.num_patches(), d = cfg.embed_dim;
    InfluenceProfile prof;
    prof.mode = "localized_grad";
    prof.influence.assign(n, 0.0);

    for (const Tensor& img : probe_images) {
        Tensor tokens;
        {
            NoGradGuard no_grad;
            tokens = embed(model, img);
        }
        for (int r = 0; r < projections; ++r) {
            Tensor leaf = Tensor::from(tokens.shape(), tokens.values(), Precision::f64, true);
            std::vector<double> proj(static_cast<std::size_t>(d) * cfg.state_dim);
            for (double& x : proj) x = rng.gaussian();
            Tensor r_dir = Tensor::from({d, cfg.state_dim}, std::move(proj));

            Tape tape;
            ForwardResult fw = forward_from_tokens(model, leaf);
            tape.backward(sum(mul(fw.final_state, r_dir)));
            const std::vector<double>& g = leaf.grad();
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double gij = g[static_cast<std::size_t>(i) * d + j];
                    s += gij * gij;
                }
                prof.influence[i] += std::sqrt(s);
            }
        }
    }
    const double norm = static_cast<double>(probe_images.size()) * projections;
    for (double& x : prof.influence) x /= norm;
    fit_profile_stats(prof);
    return prof;
}

InfluenceProfile influence_distributed(const VimModel& model,
                                       const std::vector<Tensor>& probe_images,
                                       const Tensor& delta) {
    if (probe_images.empty()) throw std::invalid_argument("influence_distributed: no probe images");
    NoGradGuard no_grad;
    const VimConfig& cfg = model.config;
    const int n = cfg.num_patches(), d = cfg.embed_dim, sn = cfg.state_dim;
    InfluenceProfile prof;
    prof.mode = "distributed";
    prof.influence.assign(n, 0.0);

    for (const Tensor& img : probe_images) {
        const Tensor clean_tok = embed(model, img);
        const Tensor pois_tok = embed(model, poison(img, delta));
        const ScanGates gates = compute_gates(pois_tok, model.blocks[0]);
        const std::vector<double>& tc = clean_tok.values();
        const std::vector<double>& tp = pois_tok.values();
        for (int i = 0; i < n; ++i) {
            double inj = 0.0;  // ||dt(i) (.) dtok(i)||
            for (int j = 0; j < d; ++j) {
                const std::size_t o = static_cast<std::size_t>(i) * d + j;
                const double x = gates.dt[o] * (tp[o] - tc[o]);
                inj += x * x;
            }
            double bn = 0.0;  // ||B(i)||
            for (int q = 0; q < sn; ++q) {
                const double b = gates.b_seq[static_cast<std::size_t>(i) * sn + q];
                bn += b * b;
            }
            prof.influence[i] += std::sqrt(inj) * std::sqrt(bn);
        }
    }
    for (double& x : prof.influence) x /= static_cast<double>(probe_images.size());
    fit_profile_stats(prof);
    return prof;
}

InfluenceProfile influence_forced_gate(double alpha, int num_steps, int d, int n, Rng rng,
                                       int num_probes) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("influence_forced_gate: alpha must be in (0,1)");
    }
    NoGradGuard no_grad;
    InfluenceProfile prof;
    prof.mode = "forced_gate";
    prof.influence.assign(num_steps, 0.0);

    // Gate clamps to exactly alpha: dt = 1, a_exp = -log(alpha).
    Tensor dt = Tensor::from({num_steps, d}, std::vector<double>(static_cast<std::size_t>(num_steps) * d, 1.0));
    Tensor a_exp = Tensor::from({d, n}, std::vector<double>(static_cast<std::size_t>(d) * n, -std::log(alpha)));
    Tensor d_skip = Tensor::zeros({d});
    const double fd_eps = 1e-4;

    for (int probe = 0; probe < num_probes; ++probe) {
        auto rand_tensor = [&rng](std::vector<int> shape) {
            std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
            for (double& x : v) x = rng.gaussian();
            return Tensor::from(std::move(shape), std::move(v));
        };
        Tensor tokens = rand_tensor({num_steps, d});
        Tensor b_seq = rand_tensor({num_steps, n});
        Tensor c_seq = rand_tensor({num_steps, n});
        std::vector<double> dir(d);
        double dn = 0.0;
        for (double& x : dir) {
            x = rng.gaussian();
            dn += x * x;
        }
        for (double& x : dir) x /= std::sqrt(dn);

        const Tensor base = mamba_recurrence(tokens, dt, a_exp, b_seq, c_seq, d_skip).final_state;
        for (int i = 0; i < num_steps; ++i) {
            Tensor pert = Tensor::from(tokens.shape(), tokens.values());
            double* v = pert.values_mut().data();
            for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(i) * d + j] += fd_eps * dir[j];
            const Tensor moved = mamba_recurrence(pert, dt, a_exp, b_seq, c_seq, d_skip).final_state;
            prof.influence[i] += state_norm_diff(moved, base) / fd_eps;
        }
    }
    for (double& x : prof.influence) x /= static_cast<double>(num_probes);
    fit_profile_stats(prof);
    return prof;
}

void save_profile_csv(const InfluenceProfile& prof, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_profile_csv: cannot write " + path);
    os << "position,influence\n";
    char buf[64];
    for (std::size_t i = 0; i < prof.influence.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, prof.influence[i]);
        os << buf;
    }
}

}  // namespace rftlab
