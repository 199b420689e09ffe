#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "rftlab/model.hpp"
#include "rftlab/rng.hpp"
#include "rftlab/tensor.hpp"
#include "rftlab/theory.hpp"

using namespace rftlab;
namespace fs = std::filesystem;

namespace {

Tensor rand_positive(std::vector<int> shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(shape, std::move(v));
}

}  // namespace

TEST_CASE("one-step linear attention returns the first value row exactly") {
    // With a single step, y(1) = Q K^T V / Q K^T = V(1) whatever Q,K are.
    Rng rng(3);
    Tensor q = rand_positive({1, 4}, rng);
    Tensor k = rand_positive({1, 4}, rng);
    Tensor v = Tensor::from({1, 3}, {0.2, -0.7, 1.5});
    Tensor y = linear_attention_scan(q, k, v);
    for (int j = 0; j < 3; ++j) CHECK(y.values()[j] == doctest::Approx(v.values()[j]).epsilon(1e-12));
}

TEST_CASE("identical values pass through attention untouched") {
    // If every V(j) is the same row v, y(i) is a convex combination of v: v itself.
    const int N = 6, dk = 4, dv = 2;
    Rng rng(5);
    Tensor q = rand_positive({N, dk}, rng);
    Tensor k = rand_positive({N, dk}, rng);
    std::vector<double> vv;
    for (int i = 0; i < N; ++i) {
        vv.push_back(0.3);
        vv.push_back(-1.1);
    }
    Tensor y = linear_attention_scan(q, k, Tensor::from({N, dv}, std::move(vv)));
    for (int i = 0; i < N; ++i) {
        CHECK(y.values()[static_cast<std::size_t>(i) * dv] == doctest::Approx(0.3).epsilon(1e-9));
        CHECK(y.values()[static_cast<std::size_t>(i) * dv + 1] ==
              doctest::Approx(-1.1).epsilon(1e-9));
    }
}

TEST_CASE("a vanishing normalizer aborts attention naming the step") {
    // Orthogonal Q(2) against the accumulated K rows zeroes the denominator.
    Tensor q = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor k = Tensor::from({2, 2}, {1.0, 0.0, 1.0, 0.0});
    Tensor v = Tensor::from({2, 1}, {1.0, 2.0});
    CHECK_THROWS_WITH_AS(linear_attention_scan(q, k, v), doctest::Contains("step 2"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(linear_attention_direct(q, k, v), doctest::Contains("step 2"),
                         std::runtime_error);
}

TEST_CASE("the recurrent scan equals the quadratic form within 1e-9") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const int N = 1 + static_cast<int>(rng.uniform_int(12));
        const int dk = 1 + static_cast<int>(rng.uniform_int(6));
        const int dv = 1 + static_cast<int>(rng.uniform_int(5));
        Tensor q = rand_positive({N, dk}, rng);
        Tensor k = rand_positive({N, dk}, rng);
        Tensor v = rand_positive({N, dv}, rng, -1.0, 1.0);
        Tensor ys = linear_attention_scan(q, k, v);
        Tensor yd = linear_attention_direct(q, k, v);
        for (std::size_t i = 0; i < ys.values().size(); ++i) {
            CHECK(std::fabs(ys.values()[i] - yd.values()[i]) < 1e-9);
        }
    }
    CHECK(linear_attention_max_error(50, 12, 11) < 1e-9);
}

TEST_CASE("a one-step recurrence equals its expansion exactly") {
    const int d = 3, n = 2;
    Rng rng(13);
    Tensor tokens = rand_positive({1, d}, rng, -1.0, 1.0);
    Tensor dt = rand_positive({1, d}, rng);
    Tensor a_exp = rand_positive({d, n}, rng);
    Tensor b_seq = rand_positive({1, n}, rng, -1.0, 1.0);
    Tensor c_seq = rand_positive({1, n}, rng);
    Tensor unrolled = unrolled_state(tokens, dt, a_exp, b_seq, c_seq);
    ScanResult scan = mamba_recurrence(tokens, dt, a_exp, b_seq, c_seq, Tensor::zeros({d}));
    for (std::size_t i = 0; i < unrolled.values().size(); ++i) {
        CHECK(unrolled.values()[i] == doctest::Approx(scan.final_state.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("a fully closed gate forgets everything but the last step") {
    const int N = 5, d = 2, n = 2;
    Tensor tokens = Tensor::from({N, d}, std::vector<double>(N * d, 1.0));
    Tensor dt = Tensor::from({N, d}, std::vector<double>(N * d, 1.0));
    // exp(-1 * 1e300) underflows to exactly zero: the gate is fully closed.
    Tensor a_exp = Tensor::from({d, n}, std::vector<double>(d * n, 1e300));
    Tensor b_seq = Tensor::from({N, n}, std::vector<double>(N * n, 0.5));
    Tensor c_seq = Tensor::from({N, n}, std::vector<double>(N * n, 1.0));
    Tensor h = unrolled_state(tokens, dt, a_exp, b_seq, c_seq);
    // h(N) = B(N)(dt(N) . x(N)) alone = 0.5 everywhere.
    for (double x : h.values()) CHECK(x == doctest::Approx(0.5).epsilon(1e-12));
    ScanResult scan = mamba_recurrence(tokens, dt, a_exp, b_seq, c_seq, Tensor::zeros({d}));
    for (std::size_t i = 0; i < h.values().size(); ++i) {
        CHECK(scan.final_state.values()[i] == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("scan and expansion stay within 1e-9 over many random systems") {
    CHECK(scan_unroll_max_error(60, 12, 17) < 1e-9);
}

TEST_CASE("profile statistics match a hand computation") {
    InfluenceProfile prof;
    prof.influence = {1.0, 2.0, 4.0};
    fit_profile_stats(prof);
    // log I against distance from the end: points (2, log 1), (1, log 2), (0, log 4)
    // have slope -log 2.
    CHECK(prof.decay_slope == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    // Population stats: mean 7/3, var = (16/9 + 1/9 + 25/9)/3 = 14/9.
    const double mean = 7.0 / 3.0;
    const double cv = std::sqrt(14.0 / 9.0) / mean;
    CHECK(prof.cv == doctest::Approx(cv).epsilon(1e-12));

    InfluenceProfile flat;
    flat.influence = {3.0, 3.0, 3.0};
    fit_profile_stats(flat);
    CHECK(flat.decay_slope == doctest::Approx(0.0));
    CHECK(flat.cv == doctest::Approx(0.0));

    InfluenceProfile degenerate;
    degenerate.influence = {5.0};
    fit_profile_stats(degenerate);
    CHECK(degenerate.decay_slope == 0.0);
}

TEST_CASE("a forced gate of alpha decays influence at log alpha per step") {
    const double alpha = 0.5;
    InfluenceProfile prof = influence_forced_gate(alpha, 24, 8, 4, Rng(19), 16);
    CHECK(prof.mode == "forced_gate");
    CHECK(prof.decay_slope < 0.0);
    CHECK(std::fabs(prof.decay_slope - std::log(alpha)) < 0.05);

    // A nearly open gate should barely decay.
    InfluenceProfile open = influence_forced_gate(0.999, 24, 8, 4, Rng(23), 16);
    CHECK(std::fabs(open.decay_slope) < 0.05);
}

TEST_CASE("a distributed perturbation injects evenly across steps") {
    VimConfig cfg;
    cfg.image_h = cfg.image_w = 16;
    cfg.channels = 1;
    cfg.patch_size = 4;
    cfg.embed_dim = 16;
    cfg.state_dim = 4;
    cfg.num_blocks = 2;
    cfg.num_classes = 2;
    VimModel m = VimModel::init(cfg, Rng(29), Precision::f64);

    Rng rng(31);
    std::vector<Tensor> probes;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> v(16 * 16);
        for (double& x : v) x = 0.35 + 0.3 * rng.uniform();
        probes.push_back(Tensor::from({16, 16, 1}, std::move(v)));
    }
    // A global low-frequency ripple touches every patch with similar energy.
    std::vector<double> dv(16 * 16);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            dv[static_cast<std::size_t>(y) * 16 + x] =
                (8.0 / 255.0) * std::cos(2.0 * 3.14159265358979 * (y + x) / 16.0);
        }
    }
    InfluenceProfile dist = influence_distributed(m, probes, Tensor::from({16, 16, 1}, std::move(dv)));
    CHECK(dist.mode == "distributed");
    CHECK(static_cast<int>(dist.influence.size()) == cfg.num_patches());
    CHECK(dist.cv < 1.0);
    for (double inj : dist.influence) CHECK(inj > 0.0);
}

TEST_CASE("localized probes agree between perturbation and gradient readings") {
    VimConfig cfg;
    cfg.image_h = cfg.image_w = 16;
    cfg.channels = 1;
    cfg.patch_size = 4;
    cfg.embed_dim = 16;
    cfg.state_dim = 4;
    cfg.num_blocks = 1;
    cfg.num_classes = 2;
    VimModel m = VimModel::init(cfg, Rng(37), Precision::f64);

    Rng rng(41);
    std::vector<Tensor> probes;
    for (int i = 0; i < 3; ++i) {
        std::vector<double> v(16 * 16);
        for (double& x : v) x = 0.3 + 0.4 * rng.uniform();
        probes.push_back(Tensor::from({16, 16, 1}, std::move(v)));
    }
    InfluenceProfile pert = influence_localized(m, probes);
    InfluenceProfile grad = influence_localized_grad(m, probes, Rng(43));
    REQUIRE(pert.influence.size() == grad.influence.size());
    CHECK(pert.mode == "localized");
    CHECK(grad.mode == "localized_grad");

    // Both probes must rank the token positions the same way at the extremes:
    // the argmax position of one is near the top of the other.
    const auto argmax = [](const std::vector<double>& v) {
        return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    CHECK(argmax(pert.influence) == argmax(grad.influence));
}

TEST_CASE("profile CSVs carry one row per position") {
    InfluenceProfile prof;
    prof.mode = "localized";
    prof.influence = {0.5, 0.25, 0.125};
    fit_profile_stats(prof);
    const std::string path = (fs::temp_directory_path() / "rftlab_profile.csv").string();
    save_profile_csv(prof, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header.find("position") != std::string::npos);
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 3);
    fs::remove(path);
}
