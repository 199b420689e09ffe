#include "rftlab/commands.hpp"

#include <filesystem>
#include <fstream>

#include "rftlab/theory.hpp"

namespace rftlab {

namespace fs = std::filesystem;

Dataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset_kind == "synthetic") {
        return make_synthetic(cfg.synth_classes, cfg.synth_per_class, cfg.synth_height,
                              cfg.synth_width, Rng(cfg.seed).sub("dataset").seed(),
                              cfg.synth_amplitude);
    }
    Dataset ds;
    if (cfg.dataset_kind == "cifar10") {
        ds = load_cifar10(cfg.dataset_dir);
    } else if (cfg.dataset_kind == "mnist_idx") {
        ds = load_mnist_idx(cfg.dataset_dir);
    } else {
        ds = load_dataset_raw(cfg.dataset_dir);
    }
    if (ds.indices(Split::val).empty()) {
        carve_val(ds, cfg.val_fraction, Rng(cfg.seed).sub("valsplit"));
    }
    return ds;
}

VimConfig resolve_model_config(const ExperimentConfig& cfg, const Dataset& ds) {
    VimConfig mc = cfg.model;
    mc.image_h = ds.height;
    mc.image_w = ds.width;
    mc.channels = ds.channels;
    mc.num_classes = ds.num_classes;
    mc.validate();
    return mc;
}

namespace {

void ensure_out_dir(const ExperimentConfig& cfg) { fs::create_directories(cfg.out_dir); }

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << "\n";
}

void write_attack_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    for (const EpochLog& e : log) {
        os << nlohmann::json{{"round", e.round},   {"epoch", e.epoch},
                             {"L_c", e.l_clean},   {"L_CE_poison", e.l_poison_ce},
                             {"L_st", e.l_state},  {"CDA", e.cda},
                             {"ASR", e.asr}}
                  .dump()
           << "\n";
    }
}

VimModel initial_model(const ExperimentConfig& cfg, const Dataset& ds) {
    if (!cfg.warm_start.empty()) return load_checkpoint(cfg.warm_start);
    return VimModel::init(resolve_model_config(cfg, ds), Rng(cfg.seed).sub("init"),
                          cfg.parsed_precision());
}

PoisonFn rft_poison_fn(const Tensor& delta) {
    return [delta](const Tensor& img) { return poison(img, delta); };
}

}  // namespace

void cmd_train_clean(const ExperimentConfig& cfg) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg);
    ensure_out_dir(cfg);
    VimModel model = initial_model(cfg, ds);
    TrainResult res = train_clean(model, ds, cfg.clean_epochs, cfg.attack.lr,
                                  cfg.attack.batch_size, cfg.seed, cfg.attack.lr_decay);
    save_checkpoint(res.model, out_path(cfg, "clean.ckpt"));
    {
        std::ofstream os(out_path(cfg, "clean_log.jsonl"));
        for (const EpochLog& e : res.log) {
            os << nlohmann::json{{"epoch", e.epoch}, {"loss", e.l_clean}, {"val_accuracy", e.cda}}
                      .dump()
               << "\n";
        }
    }
    write_json(out_path(cfg, "clean_metrics.json"),
               {{"config_digest", config_digest(cfg)},
                {"epochs", cfg.clean_epochs},
                {"val_accuracy", cfg.clean_epochs > 0 ? res.log.back().cda
                                                      : accuracy(res.model, ds, Split::val)},
                {"test_accuracy", accuracy(res.model, ds, Split::test)}});
}

void cmd_attack(const ExperimentConfig& cfg) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg);
    ensure_out_dir(cfg);
    VimModel model = initial_model(cfg, ds);

    AttackResult res = run_attack(model, ds, cfg.attack, [&](int round, const VimModel& m,
                                                             const TriggerSpec& trig) {
        save_checkpoint(m, out_path(cfg, "round_" + std::to_string(round) + ".ckpt"));
        if (trig.delta.defined()) {
            save_trigger_delta(trig, out_path(cfg, "trigger_round_" + std::to_string(round) + ".bin"));
        }
    });
    save_checkpoint(res.model, out_path(cfg, "attack.ckpt"));
    write_attack_log(out_path(cfg, "attack_log.jsonl"), res.log);

    PoisonFn poison_fn;
    if (cfg.attack.trigger_mode == AttackConfig::TriggerMode::rft) {
        // rounds = 0 still exports artifacts: build round-0 heatmap + trigger
        // from the (unchanged) model via the same substreams an attack uses.
        FrequencyHeatmap hm;
        TriggerSpec trig;
        if (!res.triggers.empty()) {
            const std::size_t pick = res.selected_round >= 0
                                         ? static_cast<std::size_t>(res.selected_round)
                                         : res.triggers.size() - 1;
            hm = res.heatmaps[pick];
            trig = res.triggers[pick];
        } else {
            const Rng root(cfg.attack.seed);
            std::vector<int> probe_idx = ds.indices(Split::val);
            root.sub("heatmap").sub(0).shuffle(probe_idx);
            probe_idx.resize(std::min<std::size_t>(probe_idx.size(), cfg.attack.heatmap_probes));
            hm = estimate_heatmap(res.model, ds, probe_idx, cfg.attack.epsilon);
            trig = generate_trigger(build_mask(hm, cfg.attack.k_percent), ds.height, ds.width,
                                    root.sub("trigger").sub(0), cfg.attack.budget, ds.channels);
        }
        save_heatmap_csv(hm, out_path(cfg, "heatmap.csv"));
        save_trigger_pixmap(trig, out_path(cfg, ds.channels == 3 ? "trigger.ppm" : "trigger.pgm"));
        save_trigger_delta(trig, out_path(cfg, "trigger_delta.bin"));
        poison_fn = rft_poison_fn(trig.delta);
    } else {
        const int px = cfg.attack.stamp_px;
        poison_fn = [px](const Tensor& img) { return stamp_corner(img, px); };
    }

    const EvalReport final_rep = evaluate(res.model, ds, Split::test, poison_fn,
                                          cfg.attack.target_label, DefenseSpec{},
                                          Rng(cfg.seed).sub("defense"));
    write_json(out_path(cfg, "attack_metrics.json"),
               {{"config_digest", config_digest(cfg)},
                {"rounds", cfg.attack.rounds},
                {"target_label", cfg.attack.target_label},
                {"CDA", final_rep.cda},
                {"ASR", final_rep.asr},
                {"val_CDA", res.log.empty() ? 0.0 : res.log.back().cda},
                {"val_ASR", res.log.empty() ? 0.0 : res.log.back().asr}});
}

void cmd_eval(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.defenses.empty()) throw std::invalid_argument("eval: defense list is empty");
    if (cfg.eval_checkpoint.empty()) throw std::invalid_argument("eval: checkpoint not set");
    if (!fs::exists(cfg.eval_checkpoint)) {
        throw std::invalid_argument("eval: missing checkpoint " + cfg.eval_checkpoint);
    }
    const Dataset ds = load_dataset(cfg);
    ensure_out_dir(cfg);

    struct Row {
        std::string attack;
        EvalReport rep;
    };
    std::vector<Row> rows;

    auto eval_grid = [&](const std::string& name, const VimModel& model, const PoisonFn& fn) {
        for (const std::string& spec_text : cfg.defenses) {
            const DefenseSpec spec = DefenseSpec::parse(spec_text);
            rows.push_back({name, evaluate(model, ds, Split::test, fn, cfg.attack.target_label,
                                           spec, Rng(cfg.seed).sub("defense"))});
        }
    };

    const VimModel model = load_checkpoint(cfg.eval_checkpoint);
    PoisonFn fn;
    if (cfg.attack.trigger_mode == AttackConfig::TriggerMode::rft) {
        if (cfg.eval_trigger.empty()) throw std::invalid_argument("eval: trigger not set");
        if (!fs::exists(cfg.eval_trigger)) {
            throw std::invalid_argument("eval: missing trigger " + cfg.eval_trigger);
        }
        fn = rft_poison_fn(load_trigger_delta(cfg.eval_trigger).delta);
    } else {
        const int px = cfg.attack.stamp_px;
        fn = [px](const Tensor& img) { return stamp_corner(img, px); };
    }
    eval_grid(cfg.attack_name, model, fn);

    if (!cfg.baseline_checkpoint.empty()) {
        const VimModel baseline = load_checkpoint(cfg.baseline_checkpoint);
        const int px = cfg.attack.stamp_px;
        eval_grid("localized", baseline,
                  [px](const Tensor& img) { return stamp_corner(img, px); });
    }

    {
        std::ofstream os(out_path(cfg, "eval_grid.csv"));
        os << "attack,defense,CDA,ASR\n";
        char buf[160];
        for (const Row& r : rows) {
            std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f\n", r.attack.c_str(),
                          r.rep.defense.c_str(), r.rep.cda, r.rep.asr);
            os << buf;
        }
    }
    nlohmann::json out = {{"config_digest", config_digest(cfg)}, {"rows", nlohmann::json::array()}};
    for (const Row& r : rows) {
        out["rows"].push_back({{"attack", r.attack},
                               {"defense", r.rep.defense},
                               {"CDA", r.rep.cda},
                               {"ASR", r.rep.asr},
                               {"clean_total", r.rep.clean_total},
                               {"asr_total", r.rep.asr_total}});
    }
    write_json(out_path(cfg, "eval.json"), out);
}

void cmd_probe(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg);
    const Rng root(cfg.seed);

    const double scan_err = scan_unroll_max_error(cfg.probe_trials, cfg.probe_max_n,
                                                  root.sub("probe.scan").seed());
    const double attn_err = linear_attention_max_error(cfg.probe_trials, cfg.probe_seq_len,
                                                       root.sub("probe.attn").seed());

    // The influence probes run on a randomly initialized stable model over
    // dataset images: the attenuation mechanism is architectural, not learned.
    const Dataset ds = load_dataset(cfg);
    const VimConfig mc = resolve_model_config(cfg, ds);
    const VimModel model = VimModel::init(mc, root.sub("probe.model"), Precision::f64);
    std::vector<int> val_idx = ds.indices(Split::val);
    root.sub("probe.images").shuffle(val_idx);
    val_idx.resize(std::min<std::size_t>(val_idx.size(), cfg.probe_images));
    std::vector<Tensor> probes;
    for (int i : val_idx) probes.push_back(ds.image(i));

    InfluenceProfile loc = influence_localized(model, probes);
    InfluenceProfile loc_grad = influence_localized_grad(model, probes, root.sub("probe.proj"));
    InfluenceProfile forced = influence_forced_gate(cfg.probe_alpha, cfg.probe_positions,
                                                    mc.embed_dim, mc.state_dim,
                                                    root.sub("probe.gate"), cfg.probe_repeats);

    // Distributed injection uses a genuine resonant-band trigger for this model.
    std::vector<int> hm_idx = val_idx;
    FrequencyHeatmap hm = estimate_heatmap(model, ds, hm_idx, cfg.attack.epsilon);
    TriggerSpec trig = generate_trigger(build_mask(hm, cfg.attack.k_percent), ds.height, ds.width,
                                        root.sub("probe.trigger"), cfg.attack.budget, ds.channels);
    InfluenceProfile dist = influence_distributed(model, probes, trig.delta);

    save_profile_csv(loc, out_path(cfg, "influence_localized.csv"));
    save_profile_csv(loc_grad, out_path(cfg, "influence_localized_grad.csv"));
    save_profile_csv(dist, out_path(cfg, "influence_distributed.csv"));
    save_profile_csv(forced, out_path(cfg, "influence_forced_gate.csv"));

    write_json(out_path(cfg, "probe_report.json"),
               {{"config_digest", config_digest(cfg)},
                {"scan_equivalence",
                 {{"trials", cfg.probe_trials},
                  {"max_n", cfg.probe_max_n},
                  {"max_error", scan_err}}},
                {"linear_attention",
                 {{"trials", cfg.probe_trials},
                  {"seq_len", cfg.probe_seq_len},
                  {"max_error", attn_err}}},
                {"influence",
                 {{"forced_gate",
                   {{"alpha", cfg.probe_alpha},
                    {"fitted_slope", forced.decay_slope},
                    {"expected_slope", std::log(cfg.probe_alpha)}}},
                  {"localized", {{"decay_slope", loc.decay_slope}, {"cv", loc.cv}}},
                  {"localized_grad", {{"decay_slope", loc_grad.decay_slope}, {"cv", loc_grad.cv}}},
                  {"distributed", {{"cv", dist.cv}}}}}});
}

void cmd_heatmap(const ExperimentConfig& cfg) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg);
    ensure_out_dir(cfg);
    VimModel model = cfg.eval_checkpoint.empty() ? initial_model(cfg, ds)
                                                 : load_checkpoint(cfg.eval_checkpoint);
    const Rng root(cfg.attack.seed);
    std::vector<int> probe_idx = ds.indices(Split::val);
    root.sub("heatmap").sub(0).shuffle(probe_idx);
    probe_idx.resize(std::min<std::size_t>(probe_idx.size(), cfg.attack.heatmap_probes));
    FrequencyHeatmap hm = estimate_heatmap(model, ds, probe_idx, cfg.attack.epsilon);
    save_heatmap_csv(hm, out_path(cfg, "heatmap.csv"));
    TriggerSpec trig = generate_trigger(build_mask(hm, cfg.attack.k_percent), ds.height, ds.width,
                                        root.sub("trigger").sub(0), cfg.attack.budget, ds.channels);
    save_trigger_pixmap(trig, out_path(cfg, ds.channels == 3 ? "trigger.ppm" : "trigger.pgm"));
    save_trigger_delta(trig, out_path(cfg, "trigger_delta.bin"));
}

}  // namespace rftlab
