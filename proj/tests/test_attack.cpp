#include <doctest.h>

#include <cmath>
#include <vector>

#include "rftlab/attack.hpp"
#include "rftlab/data.hpp"
#include "rftlab/model.hpp"
#include "rftlab/rng.hpp"
#include "rftlab/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace rftlab;
using rftlab::testing::gradcheck;

namespace {

VimConfig micro_config(int hw = 8) {
    VimConfig cfg;
    cfg.image_h = cfg.image_w = hw;
    cfg.channels = 1;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.state_dim = 4;
    cfg.num_blocks = 2;
    cfg.num_classes = 2;
    return cfg;
}

Tensor state_of(int d, int n, double base) {
    std::vector<double> v(static_cast<std::size_t>(d) * n);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = base + 0.1 * static_cast<double>(i);
    return Tensor::from({d, n}, std::move(v));
}

PoisonFn identity_poison() {
    return [](const Tensor& img) { return img; };
}

}  // namespace

TEST_CASE("the centroid follows the documented EMA against a scalar oracle") {
    const int d = 2, n = 2;
    CentroidTracker t;
    t.momentum = 0.9;

    update_centroid(t, {});  // empty input is a no-op
    CHECK_FALSE(t.initialized());

    // First call seeds with the plain mean.
    update_centroid(t, {state_of(d, n, 0.0), state_of(d, n, 1.0)});
    REQUIRE(t.initialized());
    std::vector<double> oracle(static_cast<std::size_t>(d) * n);
    for (std::size_t i = 0; i < oracle.size(); ++i) oracle[i] = 0.5 + 0.1 * static_cast<double>(i);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        CHECK(t.h_t.values()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    }

    // Later calls blend: h <- 0.9 h + 0.1 mean.
    update_centroid(t, {state_of(d, n, 3.0)});
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        oracle[i] = 0.9 * oracle[i] + 0.1 * (3.0 + 0.1 * static_cast<double>(i));
        CHECK(t.h_t.values()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    }

    // Momentum one freezes the estimate.
    CentroidTracker frozen;
    frozen.momentum = 1.0;
    update_centroid(frozen, {state_of(d, n, 2.0)});
    update_centroid(frozen, {state_of(d, n, 9.0)});
    CHECK(frozen.h_t.values()[0] == doctest::Approx(2.0).epsilon(1e-12));

    // Momentum zero tracks the latest batch mean.
    CentroidTracker fresh;
    fresh.momentum = 0.0;
    update_centroid(fresh, {state_of(d, n, 2.0)});
    update_centroid(fresh, {state_of(d, n, 9.0)});
    CHECK(fresh.h_t.values()[0] == doctest::Approx(9.0).epsilon(1e-12));

    CHECK_THROWS_AS(update_centroid(t, {Tensor::zeros({3, 3})}), std::invalid_argument);
}

TEST_CASE("the composite loss decomposes into its three parts") {
    VimConfig mc = micro_config();
    VimModel model = VimModel::init(mc, Rng(41), Precision::f64);
    Dataset ds = make_synthetic(2, 30, mc.image_h, mc.image_w, 7);
    const std::vector<int> batch = {0, 1, 2, 3};
    const int target = 0;

    CentroidTracker tracker;
    tracker.momentum = 0.9;
    update_centroid(tracker, {state_of(mc.embed_dim, mc.state_dim, 0.2)});

    auto shift = [](const Tensor& img) {
        std::vector<double> v = img.values();
        for (double& x : v) x = std::min(1.0, x + 0.03);
        return Tensor::from(img.shape(), std::move(v));
    };

    CompositeLossParts parts =
        composite_loss(model, ds, batch, shift, target, tracker, 0.25);
    CHECK(parts.total.item() == doctest::Approx(parts.clean_ce + parts.poison_ce +
                                                0.25 * parts.state_align)
                                    .epsilon(1e-9));

    SUBCASE("lambda zero leaves only the two cross-entropies") {
        CompositeLossParts no_align =
            composite_loss(model, ds, batch, shift, target, tracker, 0.0);
        CHECK(no_align.total.item() ==
              doctest::Approx(no_align.clean_ce + no_align.poison_ce).epsilon(1e-12));
        CHECK(no_align.clean_ce == doctest::Approx(parts.clean_ce).epsilon(1e-12));
        CHECK(no_align.poison_ce == doctest::Approx(parts.poison_ce).epsilon(1e-12));
    }

    SUBCASE("the state term is the mean squared distance to the centroid") {
        double oracle = 0.0;
        {
            NoGradGuard ng;
            for (int i : batch) {
                ForwardResult fw = forward(model, shift(ds.image(i)));
                for (std::size_t k = 0; k < fw.final_state.values().size(); ++k) {
                    const double diff = fw.final_state.values()[k] - tracker.h_t.values()[k];
                    oracle += diff * diff;
                }
            }
            oracle /= static_cast<double>(batch.size());
        }
        CHECK(parts.state_align == doctest::Approx(oracle).epsilon(1e-9));
    }

    SUBCASE("aligning to a sample's own state zeroes its distance") {
        std::vector<int> one = {2};
        CentroidTracker own;
        own.momentum = 0.0;
        {
            NoGradGuard ng;
            ForwardResult fw = forward(model, shift(ds.image(2)));
            update_centroid(own, {fw.final_state});
        }
        CompositeLossParts p = composite_loss(model, ds, one, shift, target, own, 1.0);
        CHECK(p.state_align == doctest::Approx(0.0).epsilon(1e-15));
    }

    SUBCASE("the centroid is a gradient stop") {
        model.zero_grad();
        Tape tape;
        CompositeLossParts p = composite_loss(model, ds, batch, shift, target, tracker, 0.5);
        tape.backward(p.total);
        CHECK_FALSE(tracker.h_t.has_grad());
        CHECK(model.patch_weight.has_grad());
    }

    SUBCASE("degenerate inputs are rejected") {
        CHECK_THROWS_AS(
            composite_loss(model, ds, {}, shift, target, tracker, 0.1),
            std::invalid_argument);
        CentroidTracker empty;
        CHECK_THROWS_AS(
            composite_loss(model, ds, batch, shift, target, empty, 0.1),
            std::logic_error);
    }
}

TEST_CASE("composite-loss gradients match finite differences") {
    VimConfig mc = micro_config();
    VimModel model = VimModel::init(mc, Rng(43), Precision::f64);
    Dataset ds = make_synthetic(2, 20, mc.image_h, mc.image_w, 11);
    const std::vector<int> batch = {0, 1};
    CentroidTracker tracker;
    update_centroid(tracker, {state_of(mc.embed_dim, mc.state_dim, 0.1)});
    auto shift = [](const Tensor& img) {
        std::vector<double> v = img.values();
        for (double& x : v) x = std::min(1.0, x + 0.05);
        return Tensor::from(img.shape(), std::move(v));
    };
    const auto res = gradcheck(
        [&] {
            return composite_loss(model, ds, batch, shift, 0, tracker, 0.3).total;
        },
        model.named_parameters(), 1e-5, 7);
    INFO("worst " << res.worst << " over " << res.checked << " components");
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gradient clipping rescales only above the ceiling") {
    Tensor a = Tensor::zeros({2});
    Tensor b = Tensor::zeros({2});
    a.grad_mut() = {3.0, 0.0};
    b.grad_mut() = {0.0, 4.0};  // global norm 5

    SUBCASE("below/at the ceiling is untouched") {
        CHECK(clip_grad_norm({a, b}, 5.0) == doctest::Approx(5.0));
        CHECK(a.grad()[0] == 3.0);
        CHECK(b.grad()[1] == 4.0);
    }
    SUBCASE("above the ceiling scales to max_norm") {
        CHECK(clip_grad_norm({a, b}, 1.0) == doctest::Approx(5.0));
        CHECK(a.grad()[0] == doctest::Approx(0.6));
        CHECK(b.grad()[1] == doctest::Approx(0.8));
    }
    SUBCASE("non-positive ceiling disables clipping") {
        CHECK(clip_grad_norm({a, b}, 0.0) == doctest::Approx(5.0));
        CHECK(a.grad()[0] == 3.0);
    }
}

TEST_CASE("one Adam step moves each parameter by roughly the learning rate") {
    Tensor p = Tensor::from({2}, {1.0, -1.0});
    p.grad_mut() = {0.5, -0.5};
    Adam opt({p}, 0.01);
    opt.step();
    // With bias correction the first step is lr * g/|g| (+eps slack).
    CHECK(p.values()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-3));
    CHECK(p.values()[1] == doctest::Approx(-1.0 + 0.01).epsilon(1e-3));
}

TEST_CASE("clean training is deterministic and zero epochs is the identity") {
    VimConfig mc = micro_config();
    VimModel start = VimModel::init(mc, Rng(47), Precision::f64);
    Dataset ds = make_synthetic(2, 40, mc.image_h, mc.image_w, 13);

    TrainResult zero = train_clean(start, ds, 0, 1e-3, 8, 99);
    CHECK(zero.log.empty());
    for (std::size_t i = 0; i < start.parameters().size(); ++i) {
        CHECK(zero.model.parameters()[i].values() == start.parameters()[i].values());
    }

    TrainResult a = train_clean(start, ds, 2, 1e-3, 8, 99, 0.9);
    TrainResult b = train_clean(start, ds, 2, 1e-3, 8, 99, 0.9);
    TrainResult c = train_clean(start, ds, 2, 1e-3, 8, 100, 0.9);
    bool all_equal = true, any_diff_seed = false;
    for (std::size_t i = 0; i < a.model.parameters().size(); ++i) {
        all_equal &= a.model.parameters()[i].values() == b.model.parameters()[i].values();
        any_diff_seed |= a.model.parameters()[i].values() != c.model.parameters()[i].values();
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);
    CHECK(a.log.size() == 2);
}

TEST_CASE("a zero-round attack returns the model unchanged") {
    VimConfig mc = micro_config();
    VimModel start = VimModel::init(mc, Rng(53), Precision::f64);
    Dataset ds = make_synthetic(2, 40, mc.image_h, mc.image_w, 17);
    AttackConfig cfg;
    cfg.rounds = 0;
    cfg.heatmap_probes = 4;
    cfg.seed = 3;
    AttackResult res = run_attack(start, ds, cfg);
    CHECK(res.log.empty());
    CHECK(res.triggers.empty());
    CHECK(res.selected_round == -1);
    for (std::size_t i = 0; i < start.parameters().size(); ++i) {
        CHECK(res.model.parameters()[i].values() == start.parameters()[i].values());
    }
}

TEST_CASE("attack config validation rejects out-of-range knobs") {
    AttackConfig cfg;
    cfg.validate();
    AttackConfig bad = cfg;
    bad.poison_rate = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.target_label = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.budget = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.lambda = -0.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    VimConfig mc = micro_config();
    VimModel start = VimModel::init(mc, Rng(59), Precision::f64);
    Dataset ds = make_synthetic(2, 10, mc.image_h, mc.image_w, 19);
    AttackConfig oob;
    oob.target_label = 5;  // dataset has 2 classes
    oob.rounds = 1;
    oob.epochs_per_round = 1;
    CHECK_THROWS_AS(run_attack(start, ds, oob), std::invalid_argument);
}

TEST_CASE("a zero-poison attack walks the clean-training trajectory bit for bit") {
    VimConfig mc = micro_config();
    VimModel start = VimModel::init(mc, Rng(61), Precision::f64);
    Dataset ds = make_synthetic(2, 40, mc.image_h, mc.image_w, 23);

    AttackConfig cfg;
    cfg.poison_rate = 0.0;
    cfg.rounds = 1;
    cfg.epochs_per_round = 2;
    cfg.lr = 1e-3;
    cfg.lr_decay = 0.93;
    cfg.batch_size = 8;
    cfg.heatmap_probes = 4;
    cfg.seed = 77;

    AttackResult attacked = run_attack(start, ds, cfg);
    TrainResult clean = train_clean(start, ds, 2, cfg.lr, cfg.batch_size, cfg.seed, cfg.lr_decay);

    // run_attack returns its best-validation snapshot; with two epochs that is
    // one of the two logged epochs, so compare the full trajectory by rerunning
    // clean training epoch by epoch and matching the attack's final log entry.
    REQUIRE(attacked.log.size() == 2);
    REQUIRE(clean.log.size() == 2);
    for (std::size_t e = 0; e < 2; ++e) {
        CHECK(attacked.log[e].l_clean == clean.log[e].l_clean);
        CHECK(attacked.log[e].l_poison_ce == 0.0);
        CHECK(attacked.log[e].l_state == 0.0);
    }
}

TEST_CASE("accuracy agrees with an explicit prediction loop") {
    VimConfig mc = micro_config();
    VimModel m = VimModel::init(mc, Rng(67), Precision::f64);
    Dataset ds = make_synthetic(2, 20, mc.image_h, mc.image_w, 29);
    long hits = 0, total = 0;
    for (int i : ds.indices(Split::test)) {
        hits += predict(m, ds.image(i)) == ds.labels[i] ? 1 : 0;
        ++total;
    }
    CHECK(accuracy(m, ds, Split::test) ==
          doctest::Approx(static_cast<double>(hits) / static_cast<double>(total)));
}
