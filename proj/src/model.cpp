#include "rftlab/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace rftlab {

void VimConfig::validate() const {
    if (image_h <= 0 || image_w <= 0 || channels <= 0) {
        throw std::invalid_argument("VimConfig: image extents must be positive");
    }
    if (patch_size <= 0 || image_h % patch_size != 0 || image_w % patch_size != 0) {
        throw std::invalid_argument("VimConfig: image " + std::to_string(image_h) + "x" +
                                    std::to_string(image_w) + " not divisible by patch size " +
                                    std::to_string(patch_size));
    }
    if (embed_dim <= 0 || state_dim <= 0 || num_blocks <= 0 || num_classes < 2) {
        throw std::invalid_argument("VimConfig: bad model dimensions");
    }
}

namespace {

Tensor gaussian_tensor(std::vector<int> shape, double sigma, Rng rng, Precision prec) {
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
    for (double& x : v) x = sigma * rng.gaussian();
    return Tensor::from(std::move(shape), std::move(v), prec, /*requires_grad=*/true);
}

Tensor const_tensor(std::vector<int> shape, double value, Precision prec) {
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)), value);
    return Tensor::from(std::move(shape), std::move(v), prec, /*requires_grad=*/true);
}

}  // namespace

VimModel VimModel::init(const VimConfig& cfg, const Rng& rng, Precision prec) {
    cfg.validate();
    const int d = cfg.embed_dim;
    const int n = cfg.state_dim;

    VimModel m;
    m.config = cfg;
    m.precision = prec;
    m.patch_weight = gaussian_tensor({cfg.patch_dim(), d}, 1.0 / std::sqrt(cfg.patch_dim()),
                                     rng.sub("patch_embed.weight"), prec);
    m.patch_bias = const_tensor({d}, 0.0, prec);

    for (int b = 0; b < cfg.num_blocks; ++b) {
        SsmBlockParams blk;
        // S4D-real style spread of decay rates across the state dimension.
        std::vector<double> a_log(static_cast<std::size_t>(d) * n);
        for (int p = 0; p < d; ++p) {
            for (int q = 0; q < n; ++q) a_log[static_cast<std::size_t>(p) * n + q] = std::log(q + 1.0);
        }
        blk.A_log = Tensor::from({d, n}, std::move(a_log), prec, true);
        const std::string tag = "block." + std::to_string(b) + ".";
        blk.W_dt = gaussian_tensor({d, d}, 1.0 / std::sqrt(d), rng.sub(tag + "W_dt"), prec);
        // softplus(b_dt) ~= 0.01 at init: the slowest state channel opens with a
        // gate near 0.99 so one token's injection survives a whole 64-step scan.
        blk.b_dt = const_tensor({d}, std::log(std::expm1(0.01)), prec);
        blk.W_B = gaussian_tensor({d, n}, 1.0 / std::sqrt(d), rng.sub(tag + "W_B"), prec);
        blk.W_C = gaussian_tensor({d, n}, 1.0 / std::sqrt(d), rng.sub(tag + "W_C"), prec);
        blk.D = const_tensor({d}, 1.0, prec);
        m.blocks.push_back(std::move(blk));
    }

    m.head_weight = gaussian_tensor({d * n, cfg.num_classes}, 1.0 / std::sqrt(d * n),
                                    rng.sub("head.weight"), prec);
    m.head_bias = const_tensor({cfg.num_classes}, 0.0, prec);
    return m;
}

std::vector<std::pair<std::string, Tensor>> VimModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("patch_embed.weight", patch_weight);
    out.emplace_back("patch_embed.bias", patch_bias);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string tag = "blocks." + std::to_string(b) + ".";
        out.emplace_back(tag + "A_log", blocks[b].A_log);
        out.emplace_back(tag + "W_dt", blocks[b].W_dt);
        out.emplace_back(tag + "b_dt", blocks[b].b_dt);
        out.emplace_back(tag + "W_B", blocks[b].W_B);
        out.emplace_back(tag + "W_C", blocks[b].W_C);
        out.emplace_back(tag + "D", blocks[b].D);
    }
    out.emplace_back("head.weight", head_weight);
    out.emplace_back("head.bias", head_bias);
    return out;
}

std::vector<Tensor> VimModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

void VimModel::zero_grad() const {
    for (Tensor t : parameters()) t.zero_grad();
}

namespace {

Tensor copy_tensor(const Tensor& t, Precision prec) {
    Tensor c = Tensor::from(t.shape(), t.values(), prec, t.requires_grad());
    return c;
}

}  // namespace

VimModel VimModel::clone() const { return cast(precision); }

VimModel VimModel::cast(Precision prec) const {
    VimModel m;
    m.config = config;
    m.precision = prec;
    m.patch_weight = copy_tensor(patch_weight, prec);
    m.patch_bias = copy_tensor(patch_bias, prec);
    for (const SsmBlockParams& b : blocks) {
        SsmBlockParams c;
        c.A_log = copy_tensor(b.A_log, prec);
        c.W_dt = copy_tensor(b.W_dt, prec);
        c.b_dt = copy_tensor(b.b_dt, prec);
        c.W_B = copy_tensor(b.W_B, prec);
        c.W_C = copy_tensor(b.W_C, prec);
        c.D = copy_tensor(b.D, prec);
        m.blocks.push_back(std::move(c));
    }
    m.head_weight = copy_tensor(head_weight, prec);
    m.head_bias = copy_tensor(head_bias, prec);
    return m;
}

// ---- patchify ----

Tensor patchify(const Tensor& image, const VimConfig& cfg) {
    const auto& s = image.shape();
    if (s.size() != 3 || s[0] != cfg.image_h || s[1] != cfg.image_w || s[2] != cfg.channels) {
        throw std::invalid_argument("patchify: image shape " + shape_str(s) + " does not match config " +
                                    shape_str({cfg.image_h, cfg.image_w, cfg.channels}));
    }
    cfg.validate();
    const int P = cfg.patch_size, W = cfg.image_w, C = cfg.channels;
    const int rows = cfg.patches_per_col(), cols = cfg.patches_per_row();
    Tensor out = Tensor::zeros({cfg.num_patches(), cfg.patch_dim()}, image.precision());
    const double* src = image.values().data();
    double* dst = out.values_mut().data();
    for (int by = 0; by < rows; ++by) {
        for (int bx = 0; bx < cols; ++bx) {
            double* patch = dst + static_cast<std::size_t>(by * cols + bx) * cfg.patch_dim();
            for (int dy = 0; dy < P; ++dy) {
                const double* line = src + (static_cast<std::size_t>(by * P + dy) * W + bx * P) * C;
                std::memcpy(patch + static_cast<std::size_t>(dy) * P * C, line,
                            sizeof(double) * static_cast<std::size_t>(P) * C);
            }
        }
    }
    return out;
}

Tensor unpatchify(const Tensor& patches, const VimConfig& cfg) {
    const auto& s = patches.shape();
    if (s.size() != 2 || s[0] != cfg.num_patches() || s[1] != cfg.patch_dim()) {
        throw std::invalid_argument("unpatchify: patches shape " + shape_str(s) + " does not match config");
    }
    const int P = cfg.patch_size, W = cfg.image_w, C = cfg.channels;
    const int rows = cfg.patches_per_col(), cols = cfg.patches_per_row();
    Tensor out = Tensor::zeros({cfg.image_h, cfg.image_w, cfg.channels}, patches.precision());
    const double* src = patches.values().data();
    double* dst = out.values_mut().data();
    for (int by = 0; by < rows; ++by) {
        for (int bx = 0; bx < cols; ++bx) {
            const double* patch = src + static_cast<std::size_t>(by * cols + bx) * cfg.patch_dim();
            for (int dy = 0; dy < P; ++dy) {
                double* line = dst + (static_cast<std::size_t>(by * P + dy) * W + bx * P) * C;
                std::memcpy(line, patch + static_cast<std::size_t>(dy) * P * C,
                            sizeof(double) * static_cast<std::size_t>(P) * C);
            }
        }
    }
    return out;
}

Tensor embed(const VimModel& m, const Tensor& image) {
    Tensor patches = patchify(image, m.config);
    return add(matmul(patches, m.patch_weight), m.patch_bias);
}

// ---- recurrence core ----

ScanResult mamba_recurrence(const Tensor& tokens, const Tensor& dt, const Tensor& a_exp,
                            const Tensor& b_seq, const Tensor& c_seq, const Tensor& d_skip) {
    const auto& ts = tokens.shape();
    if (ts.size() != 2) throw std::invalid_argument("mamba_recurrence: tokens must be [N,d]");
    const int N = ts[0], d = ts[1];
    const auto& as = a_exp.shape();
    if (as.size() != 2 || as[0] != d) throw std::invalid_argument("mamba_recurrence: A must be [d,n]");
    const int n = as[1];
    if (dt.shape() != std::vector<int>{N, d}) {
        throw std::invalid_argument("mamba_recurrence: dt shape " + shape_str(dt.shape()) +
                                    " vs expected " + shape_str({N, d}));
    }
    if (b_seq.shape() != std::vector<int>{N, n} || c_seq.shape() != std::vector<int>{N, n}) {
        throw std::invalid_argument("mamba_recurrence: B/C sequences must be [N,n]");
    }
    if (d_skip.shape() != std::vector<int>{d}) {
        throw std::invalid_argument("mamba_recurrence: D must be [d]");
    }

    const std::vector<Tensor> inputs = {tokens, dt, a_exp, b_seq, c_seq, d_skip};
    const Precision prec = common_precision(inputs);
    const bool rg = any_requires_grad(inputs);
    const bool recording = rg && Tape::active() != nullptr;

    Tensor y = make_op_output({N, d}, prec, rg);
    Tensor h_final = make_op_output({d, n}, prec, rg);

    HiddenTrace trace;
    trace.num_steps = N;
    trace.d = d;
    trace.n = n;
    trace.h.assign(static_cast<std::size_t>(N + 1) * d * n, 0.0);

    // Gate trace kept only while recording; backward reuses it.
    auto gate_trace = std::make_shared<std::vector<double>>();
    if (recording) gate_trace->assign(static_cast<std::size_t>(N) * d * n, 0.0);

    const double* vx = tokens.values().data();
    const double* vdt = dt.values().data();
    const double* va = a_exp.values().data();
    const double* vb = b_seq.values().data();
    const double* vc = c_seq.values().data();
    const double* vd = d_skip.values().data();
    double* vy = y.values_mut().data();

    const std::size_t dn = static_cast<std::size_t>(d) * n;
    for (int i = 0; i < N; ++i) {
        const double* hprev = trace.h.data() + static_cast<std::size_t>(i) * dn;
        double* h = trace.h.data() + static_cast<std::size_t>(i + 1) * dn;
        const double* xi = vx + static_cast<std::size_t>(i) * d;
        const double* dti = vdt + static_cast<std::size_t>(i) * d;
        const double* bi = vb + static_cast<std::size_t>(i) * n;
        const double* ci = vc + static_cast<std::size_t>(i) * n;
        double* gti = recording ? gate_trace->data() + static_cast<std::size_t>(i) * dn : nullptr;
        double hsum = 0.0;  // any non-finite component makes the sum non-finite
        for (int p = 0; p < d; ++p) {
            const double dtx = dti[p] * xi[p];
            const double* arow = va + static_cast<std::size_t>(p) * n;
            const double* hprow = hprev + static_cast<std::size_t>(p) * n;
            double* hrow = h + static_cast<std::size_t>(p) * n;
            double acc = 0.0;
            for (int q = 0; q < n; ++q) {
                const double gate = std::exp(-dti[p] * arow[q]);
                const double hv = gate * hprow[q] + bi[q] * dtx;
                hrow[q] = hv;
                acc += ci[q] * hv;
                hsum += hv;
                if (gti) gti[static_cast<std::size_t>(p) * n + q] = gate;
            }
            vy[static_cast<std::size_t>(i) * d + p] = acc + vd[p] * xi[p];
        }
        if (!std::isfinite(hsum)) {
            throw std::runtime_error("ssm_scan: non-finite hidden state at step " + std::to_string(i + 1));
        }
    }
    if (prec == Precision::f32) {
        for (double& v : trace.h) v = static_cast<double>(static_cast<float>(v));
        y.round_to_precision();
    }
    std::memcpy(h_final.values_mut().data(), trace.h.data() + static_cast<std::size_t>(N) * dn,
                sizeof(double) * dn);

    if (recording) {
        // Backward through the recurrence. Carries gh = dL/dh(i), folding in
        // the y(i) term at each step, then multiplies by the gate to step to
        // dL/dh(i-1).
        auto h_trace = std::make_shared<std::vector<double>>(trace.h);
        record_op(inputs, {y, h_final},
                  [tokens, dt, a_exp, b_seq, c_seq, d_skip, y, h_final, h_trace, gate_trace, N, d,
                   n]() mutable {
                      const std::size_t dn = static_cast<std::size_t>(d) * n;
                      const bool gy_set = y.has_grad();
                      const bool gh_set = h_final.has_grad();
                      if (!gy_set && !gh_set) return;

                      std::vector<double> gh(dn, 0.0);
                      if (gh_set) {
                          const std::vector<double>& g = h_final.grad();
                          std::copy(g.begin(), g.end(), gh.begin());
                      }
                      const double* gy = gy_set ? y.grad().data() : nullptr;

                      const double* vx = tokens.values().data();
                      const double* vdt = dt.values().data();
                      const double* va = a_exp.values().data();
                      const double* vb = b_seq.values().data();
                      const double* vc = c_seq.values().data();
                      const double* vd = d_skip.values().data();
                      const double* ht = h_trace->data();
                      const double* gt = gate_trace->data();

                      double* gx = tokens.requires_grad() ? tokens.grad_mut().data() : nullptr;
                      double* gdt = dt.requires_grad() ? dt.grad_mut().data() : nullptr;
                      double* ga = a_exp.requires_grad() ? a_exp.grad_mut().data() : nullptr;
                      double* gb = b_seq.requires_grad() ? b_seq.grad_mut().data() : nullptr;
                      double* gc = c_seq.requires_grad() ? c_seq.grad_mut().data() : nullptr;
                      double* gd = d_skip.requires_grad() ? d_skip.grad_mut().data() : nullptr;

                      for (int i = N - 1; i >= 0; --i) {
                          const double* xi = vx + static_cast<std::size_t>(i) * d;
                          const double* dti = vdt + static_cast<std::size_t>(i) * d;
                          const double* bi = vb + static_cast<std::size_t>(i) * n;
                          const double* ci = vc + static_cast<std::size_t>(i) * n;
                          const double* hi = ht + static_cast<std::size_t>(i + 1) * dn;
                          const double* hprev = ht + static_cast<std::size_t>(i) * dn;
                          const double* gates = gt + static_cast<std::size_t>(i) * dn;

                          for (int p = 0; p < d; ++p) {
                              const double gyi = gy ? gy[static_cast<std::size_t>(i) * d + p] : 0.0;
                              const double* hrow = hi + static_cast<std::size_t>(p) * n;
                              const double* hprow = hprev + static_cast<std::size_t>(p) * n;
                              const double* grow = gates + static_cast<std::size_t>(p) * n;
                              const double* arow = va + static_cast<std::size_t>(p) * n;
                              double* ghrow = gh.data() + static_cast<std::size_t>(p) * n;

                              if (gyi != 0.0) {
                                  // y(i,p) = sum_q C(i,q) h(i,p,q) + D(p) x(i,p)
                                  if (gd) gd[p] += gyi * xi[p];
                                  if (gx) gx[static_cast<std::size_t>(i) * d + p] += gyi * vd[p];
                                  for (int q = 0; q < n; ++q) {
                                      ghrow[q] += gyi * ci[q];
                                      if (gc) gc[static_cast<std::size_t>(i) * n + q] += gyi * hrow[q];
                                  }
                              }

                              // h(i) = gate (.) h(i-1) + B(i,q) dt(i,p) x(i,p)
                              double s = 0.0;
                              double gdt_p = 0.0;
                              for (int q = 0; q < n; ++q) {
                                  const double ghv = ghrow[q];
                                  const double gate = grow[q];
                                  const double g_gate = ghv * hprow[q];
                                  gdt_p += g_gate * (-arow[q]) * gate;
                                  if (ga) ga[static_cast<std::size_t>(p) * n + q] += g_gate * (-dti[p]) * gate;
                                  if (gb) gb[static_cast<std::size_t>(i) * n + q] += ghv * dti[p] * xi[p];
                                  s += ghv * bi[q];
                                  ghrow[q] = ghv * gate;  // becomes dL/dh(i-1)
                              }
                              if (gdt) gdt[static_cast<std::size_t>(i) * d + p] += gdt_p + s * xi[p];
                              if (gx) gx[static_cast<std::size_t>(i) * d + p] += s * dti[p];
                          }
                      }
                  });
    }

    ScanResult res;
    res.outputs = y;
    res.final_state = h_final;
    res.trace = std::move(trace);
    return res;
}

ScanResult ssm_scan(const Tensor& tokens, const SsmBlockParams& params) {
    Tensor dt = softplus(add(matmul(tokens, params.W_dt), params.b_dt));
    Tensor b_seq = matmul(tokens, params.W_B);
    Tensor c_seq = matmul(tokens, params.W_C);
    Tensor a_exp = exp(params.A_log);
    return mamba_recurrence(tokens, dt, a_exp, b_seq, c_seq, params.D);
}

ScanGates compute_gates(const Tensor& tokens, const SsmBlockParams& params) {
    NoGradGuard no_grad;
    ScanGates g;
    g.num_steps = tokens.shape()[0];
    g.d = tokens.shape()[1];
    g.n = params.W_B.shape()[1];
    g.dt = softplus(add(matmul(tokens, params.W_dt), params.b_dt)).values();
    g.b_seq = matmul(tokens, params.W_B).values();
    g.c_seq = matmul(tokens, params.W_C).values();
    return g;
}

ForwardResult forward_from_tokens(const VimModel& m, const Tensor& tokens) {
    ForwardResult res;
    res.tokens = tokens;
    Tensor x = tokens;
    for (const SsmBlockParams& blk : m.blocks) {
        ScanResult scan = ssm_scan(x, blk);
        x = add(scan.outputs, x);  // plain residual, no normalization
        res.scans.push_back(std::move(scan));
    }
    const ScanResult& last = res.scans.back();
    // The classifier reads an RMS-normalized copy of h(N); that same bounded
    // vector is the "final hidden state" everything downstream aligns against.
    res.final_state = rms_normalize(last.final_state);
    const int dn = m.config.embed_dim * m.config.state_dim;
    Tensor flat = reshape(res.final_state, {1, dn});
    Tensor logits = add(matmul(flat, m.head_weight), m.head_bias);
    res.logits = reshape(logits, {m.config.num_classes});
    return res;
}

ForwardResult forward(const VimModel& m, const Tensor& image) {
    return forward_from_tokens(m, embed(m, image));
}

int predict(const VimModel& m, const Tensor& image) {
    NoGradGuard no_grad;
    ForwardResult res = forward(m, image);
    const std::vector<double>& z = res.logits.values();
    int best = 0;
    for (std::size_t i = 1; i < z.size(); ++i) {
        if (z[i] > z[best]) best = static_cast<int>(i);
    }
    return best;
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[8] = {'R', 'F', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t read_u64(std::istream& is) {
    const std::uint64_t lo = read_u32(is);
    const std::uint64_t hi = read_u32(is);
    return lo | (hi << 32);
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t, Precision prec) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int dim : t.shape()) write_u32(os, static_cast<std::uint32_t>(dim));
    const std::vector<double>& v = t.values();
    if (prec == Precision::f32) {
        for (double x : v) {
            const float f = static_cast<float>(x);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            write_u32(os, bits);
        }
    } else {
        for (double x : v) {
            std::uint64_t bits;
            std::memcpy(&bits, &x, 8);
            write_u64(os, bits);
        }
    }
}

Tensor read_tensor(std::istream& is, std::string& name, Precision prec) {
    const std::uint32_t name_len = read_u32(is);
    name.assign(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t ndim = read_u32(is);
    std::vector<int> shape(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<int>(read_u32(is));
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
    if (prec == Precision::f32) {
        for (double& x : v) {
            const std::uint32_t bits = read_u32(is);
            float f;
            std::memcpy(&f, &bits, 4);
            x = static_cast<double>(f);
        }
    } else {
        for (double& x : v) {
            const std::uint64_t bits = read_u64(is);
            std::memcpy(&x, &bits, 8);
        }
    }
    return Tensor::from(std::move(shape), std::move(v), prec, /*requires_grad=*/true);
}

nlohmann::json config_to_json(const VimConfig& c) {
    return nlohmann::json{{"image_h", c.image_h},       {"image_w", c.image_w},
                          {"channels", c.channels},     {"patch_size", c.patch_size},
                          {"embed_dim", c.embed_dim},   {"state_dim", c.state_dim},
                          {"num_blocks", c.num_blocks}, {"num_classes", c.num_classes}};
}

VimConfig config_from_json(const nlohmann::json& j) {
    VimConfig c;
    c.image_h = j.at("image_h");
    c.image_w = j.at("image_w");
    c.channels = j.at("channels");
    c.patch_size = j.at("patch_size");
    c.embed_dim = j.at("embed_dim");
    c.state_dim = j.at("state_dim");
    c.num_blocks = j.at("num_blocks");
    c.num_classes = j.at("num_classes");
    return c;
}

}  // namespace

void save_checkpoint(const VimModel& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kMagic, 8);
    write_u32(os, 1);  // format version
    os.put(m.precision == Precision::f32 ? 0 : 1);
    const std::string cfg = config_to_json(m.config).dump();
    write_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const auto named = m.named_parameters();
    write_u32(os, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) write_tensor(os, name, t, m.precision);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

VimModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
    }
    const std::uint32_t version = read_u32(is);
    if (version != 1) {
        throw std::runtime_error("load_checkpoint: unsupported format version " +
                                 std::to_string(version));
    }
    const int prec_byte = is.get();
    const Precision prec = prec_byte == 0 ? Precision::f32 : Precision::f64;
    const std::uint32_t cfg_len = read_u32(is);
    std::string cfg_str(cfg_len, '\0');
    is.read(cfg_str.data(), cfg_len);
    const VimConfig cfg = config_from_json(nlohmann::json::parse(cfg_str));

    VimModel m = VimModel::init(cfg, Rng(0), prec);
    const std::uint32_t count = read_u32(is);
    auto named = m.named_parameters();
    if (count != named.size()) {
        throw std::runtime_error("load_checkpoint: expected " + std::to_string(named.size()) +
                                 " tensors, file has " + std::to_string(count));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name;
        Tensor t = read_tensor(is, name, prec);
        if (name != named[i].first) {
            throw std::runtime_error("load_checkpoint: unexpected tensor '" + name + "', wanted '" +
                                     named[i].first + "'");
        }
        if (t.shape() != named[i].second.shape()) {
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        }
        named[i].second.values_mut() = t.values();
    }
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
    return m;
}

}  // namespace rftlab
