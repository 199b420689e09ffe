#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>
#include <vector>

#include "rftlab/fft.hpp"
#include "rftlab/rng.hpp"
#include "rftlab/trigger.hpp"

using namespace rftlab;
namespace fs = std::filesystem;

namespace {

std::vector<std::pair<Tensor, int>> gray_probes(int h, int w, int n) {
    std::vector<std::pair<Tensor, int>> probes;
    for (int i = 0; i < n; ++i) {
        probes.emplace_back(
            Tensor::from({h, w, 1}, std::vector<double>(static_cast<std::size_t>(h) * w, 0.5)), 0);
    }
    return probes;
}

std::set<std::pair<int, int>> mask_bins(const std::vector<std::uint8_t>& mask, int h, int w) {
    std::set<std::pair<int, int>> bins;
    for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
            if (mask[static_cast<std::size_t>(u) * w + v]) bins.insert({u, v});
        }
    }
    return bins;
}

}  // namespace

TEST_CASE("sinusoid probes take their closed forms") {
    Tensor dc = sinusoid_probe(0, 0, 4, 4);
    for (double v : dc.values()) CHECK(v == 1.0);

    // (u,v)=(1,0): cos(2 pi a / 4) per row a = 1, 0, -1, 0.
    Tensor row = sinusoid_probe(1, 0, 4, 4);
    const double expect[4] = {1.0, 0.0, -1.0, 0.0};
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            CHECK(row.values()[static_cast<std::size_t>(a) * 4 + b] ==
                  doctest::Approx(expect[a]).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(sinusoid_probe(4, 0, 4, 4), std::invalid_argument);
    CHECK_THROWS_AS(sinusoid_probe(0, -1, 4, 4), std::invalid_argument);
}

TEST_CASE("a loss-indifferent model yields a zero heatmap, as does epsilon zero") {
    const int H = 4, W = 4;
    auto flat_loss = [](const Tensor&, int) { return 3.25; };
    FrequencyHeatmap hm = estimate_heatmap(flat_loss, gray_probes(H, W, 3), H, W, 0.05);
    for (double s : hm.s) CHECK(s == doctest::Approx(0.0));

    auto any_loss = [](const Tensor& img, int) { return img.values()[0] * 2.0; };
    FrequencyHeatmap zero_eps = estimate_heatmap(any_loss, gray_probes(H, W, 2), H, W, 0.0);
    for (double s : zero_eps.s) CHECK(s == doctest::Approx(0.0));
}

TEST_CASE("the heatmap peaks at the frequency the loss actually responds to") {
    const int H = 8, W = 8;
    // Loss = projection of the image onto the (1,0) sinusoid; only that bin
    // (and its conjugate) moves the loss when probed from mid-gray.
    Tensor basis = sinusoid_probe(1, 0, H, W);
    auto tuned_loss = [&](const Tensor& img, int) {
        double acc = 0.0;
        for (std::size_t i = 0; i < img.values().size(); ++i) {
            acc += img.values()[i] * basis.values()[i];
        }
        return acc;
    };
    FrequencyHeatmap hm = estimate_heatmap(tuned_loss, gray_probes(H, W, 4), H, W, 0.01);
    int bu = -1, bv = -1;
    double best = -1.0;
    for (int u = 0; u < H; ++u) {
        for (int v = 0; v < W; ++v) {
            if (hm.at(u, v) > best) {
                best = hm.at(u, v);
                bu = u;
                bv = v;
            }
        }
    }
    const bool at_target = (bu == 1 && bv == 0) || (bu == H - 1 && bv == 0);
    INFO("peak at (" << bu << "," << bv << ")");
    CHECK(at_target);
    CHECK(hm.probe_count == 4);
}

TEST_CASE("heatmap estimation is deterministic") {
    const int H = 4, W = 4;
    Rng rng(17);
    std::vector<std::pair<Tensor, int>> probes;
    for (int i = 0; i < 3; ++i) {
        std::vector<double> v(static_cast<std::size_t>(H) * W);
        for (double& x : v) x = rng.uniform();
        probes.emplace_back(Tensor::from({H, W, 1}, std::move(v)), i % 2);
    }
    auto loss = [](const Tensor& img, int label) {
        double acc = 0.0;
        for (double p : img.values()) acc += p * p;
        return acc + label;
    };
    FrequencyHeatmap a = estimate_heatmap(loss, probes, H, W, 0.03);
    FrequencyHeatmap b = estimate_heatmap(loss, probes, H, W, 0.03);
    CHECK(a.s == b.s);
}

TEST_CASE("mask selection keeps conjugate pairs and breaks ties by index") {
    const int H = 4, W = 4;
    FrequencyHeatmap hm;
    hm.height = H;
    hm.width = W;
    hm.s.assign(16, 0.0);

    SUBCASE("k=100 selects every bin") {
        auto mask = build_mask(hm, 100.0);
        CHECK(std::count(mask.begin(), mask.end(), 1) == 16);
        CHECK_THROWS_AS(build_mask(hm, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(build_mask(hm, 100.5), std::invalid_argument);
    }

    SUBCASE("a single strict maximum brings exactly its conjugate partner") {
        hm.s[3 * W + 2] = 5.0;  // (3,2); partner is (1,2)
        auto mask = build_mask(hm, 0.01);
        CHECK(mask_bins(mask, H, W) == std::set<std::pair<int, int>>{{3, 2}, {1, 2}});
    }

    SUBCASE("an all-equal heatmap falls back to index order, pair-complete") {
        // 50% of 16 = 8 bins. Visit order (0,0),(0,1),... adding pairs:
        // (0,0) self; (0,1)+(0,3); (0,2) self; (1,0)+(3,0); (1,1)+(3,3).
        auto mask = build_mask(hm, 50.0);
        const std::set<std::pair<int, int>> expect = {{0, 0}, {0, 1}, {0, 3}, {0, 2},
                                                      {1, 0}, {3, 0}, {1, 1}, {3, 3}};
        CHECK(mask_bins(mask, H, W) == expect);
    }
}

TEST_CASE("triggers are seed-deterministic, in-budget, and on-mask") {
    const int H = 8, W = 8;
    FrequencyHeatmap hm;
    hm.height = H;
    hm.width = W;
    hm.s.assign(static_cast<std::size_t>(H) * W, 0.0);
    Rng heat_rng(5);
    for (double& s : hm.s) s = heat_rng.uniform();
    auto mask = build_mask(hm, 0.1);

    TriggerSpec a = generate_trigger(mask, H, W, Rng(7), 8.0 / 255.0, 1);
    TriggerSpec b = generate_trigger(mask, H, W, Rng(7), 8.0 / 255.0, 1);
    TriggerSpec c = generate_trigger(mask, H, W, Rng(8), 8.0 / 255.0, 1);
    CHECK(a.delta.values() == b.delta.values());
    CHECK(a.delta.values() != c.delta.values());

    // The L-infinity norm equals the budget exactly.
    double linf = 0.0;
    for (double v : a.delta.values()) linf = std::max(linf, std::fabs(v));
    CHECK(linf == 8.0 / 255.0);

    // Spectral energy off the mask is numerically zero relative to the peak.
    ComplexGrid spec = dft2(Tensor::from({H, W}, a.delta.values()));
    double peak = 0.0;
    for (int u = 0; u < H; ++u) {
        for (int v = 0; v < W; ++v) peak = std::max(peak, spec.energy(u, v));
    }
    for (int u = 0; u < H; ++u) {
        for (int v = 0; v < W; ++v) {
            if (!a.mask_at(u, v)) CHECK(spec.energy(u, v) <= 1e-9 * peak);
        }
    }
}

TEST_CASE("a DC-only mask produces a constant delta and channels replicate") {
    const int H = 4, W = 4;
    std::vector<std::uint8_t> mask(16, 0);
    mask[0] = 1;
    TriggerSpec t = generate_trigger(mask, H, W, Rng(3), 0.02, 3);
    REQUIRE(t.delta.shape() == std::vector<int>{H, W, 3});
    const auto& v = t.delta.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(std::fabs(v[i]) == doctest::Approx(0.02).epsilon(1e-12));
        CHECK(v[i] == v[0]);  // same value in every pixel and channel
    }
}

TEST_CASE("degenerate masks are rejected") {
    const int H = 4, W = 4;
    CHECK_THROWS_AS(generate_trigger(std::vector<std::uint8_t>(16, 0), H, W, Rng(1), 0.05, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_trigger(std::vector<std::uint8_t>(16, 1), H, W, Rng(1), 0.0, 1),
                    std::invalid_argument);
    std::vector<std::uint8_t> asym(16, 0);
    asym[1] = 1;  // (0,1) without its partner (0,3)
    CHECK_THROWS_AS(generate_trigger(asym, H, W, Rng(1), 0.05, 1), std::invalid_argument);
}

TEST_CASE("poison adds the delta then clips to the pixel range") {
    Tensor img = Tensor::from({1, 2, 1}, {0.5, 0.99});
    Tensor delta = Tensor::from({1, 2, 1}, {-0.1, 0.1});
    Tensor out = poison(img, delta);
    CHECK(out.values()[0] == doctest::Approx(0.4));
    CHECK(out.values()[1] == doctest::Approx(1.0));

    Tensor zero = Tensor::zeros({1, 2, 1});
    CHECK(poison(img, zero).values() == img.values());

    // The poisoned image never moves further than the delta's sup norm.
    Rng rng(9);
    std::vector<double> xv(64), dv(64);
    for (double& x : xv) x = rng.uniform();
    for (double& d : dv) d = 0.05 * (rng.uniform() - 0.5);
    Tensor x = Tensor::from({8, 8, 1}, std::move(xv));
    Tensor d = Tensor::from({8, 8, 1}, std::move(dv));
    double dmax = 0.0;
    for (double q : d.values()) dmax = std::max(dmax, std::fabs(q));
    Tensor p = poison(x, d);
    for (std::size_t i = 0; i < p.values().size(); ++i) {
        CHECK(p.values()[i] >= 0.0);
        CHECK(p.values()[i] <= 1.0);
        CHECK(std::fabs(p.values()[i] - x.values()[i]) <= dmax + 1e-15);
    }

    CHECK_THROWS_AS(poison(img, Tensor::zeros({2, 2, 1})), std::invalid_argument);
}

TEST_CASE("trigger deltas round-trip exactly through the binary format") {
    const int H = 8, W = 8;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(H) * W, 1);
    TriggerSpec t = generate_trigger(mask, H, W, Rng(21), 8.0 / 255.0, 3);
    const std::string path = (fs::temp_directory_path() / "rftlab_trig.bin").string();
    save_trigger_delta(t, path);
    TriggerSpec back = load_trigger_delta(path);
    CHECK(back.delta.values() == t.delta.values());
    CHECK(back.delta.shape() == t.delta.shape());
    CHECK(back.budget == t.budget);
    CHECK(back.mask == t.mask);
    fs::remove(path);
}

TEST_CASE("heatmap CSV lists every bin under a header") {
    FrequencyHeatmap hm;
    hm.height = 2;
    hm.width = 3;
    hm.s = {0.0, 1.5, 2.0, 0.25, 0.125, 3.0};
    const std::string path = (fs::temp_directory_path() / "rftlab_hm.csv").string();
    save_heatmap_csv(hm, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "u,v,S");
    int rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 6);
    fs::remove(path);
}
