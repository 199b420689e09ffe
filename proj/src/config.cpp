#include "rftlab/config.hpp"

#include <fstream>
#include <stdexcept>

namespace rftlab {

Precision ExperimentConfig::parsed_precision() const {
    if (precision == "f32") return Precision::f32;
    if (precision == "f64") return Precision::f64;
    throw std::invalid_argument("config: precision must be f32 or f64, got '" + precision + "'");
}

void ExperimentConfig::validate() const {
    parsed_precision();
    if (dataset_kind != "synthetic" && dataset_kind != "cifar10" && dataset_kind != "mnist_idx" &&
        dataset_kind != "raw") {
        throw std::invalid_argument("config: unknown dataset kind '" + dataset_kind + "'");
    }
    if (dataset_kind != "synthetic" && dataset_dir.empty()) {
        throw std::invalid_argument("config: dataset kind '" + dataset_kind +
                                    "' requires dataset.dir");
    }
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
        throw std::invalid_argument("config: val_fraction must be in (0,1)");
    }
    if (clean_epochs < 0) throw std::invalid_argument("config: clean_epochs must be >= 0");
    attack.validate();
    for (const std::string& d : defenses) DefenseSpec::parse(d);
    if (out_dir.empty()) throw std::invalid_argument("config: out_dir must be set");
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    return nlohmann::json{
        {"seed", c.seed},
        {"out_dir", c.out_dir},
        {"dataset",
         {{"kind", c.dataset_kind},
          {"dir", c.dataset_dir},
          {"classes", c.synth_classes},
          {"per_class", c.synth_per_class},
          {"height", c.synth_height},
          {"width", c.synth_width},
          {"amplitude", c.synth_amplitude},
          {"val_fraction", c.val_fraction}}},
        {"model",
         {{"patch_size", c.model.patch_size},
          {"embed_dim", c.model.embed_dim},
          {"state_dim", c.model.state_dim},
          {"num_blocks", c.model.num_blocks},
          {"precision", c.precision}}},
        {"train", {{"clean_epochs", c.clean_epochs}}},
        {"attack",
         {{"target_label", c.attack.target_label},
          {"poison_rate", c.attack.poison_rate},
          {"lambda", c.attack.lambda},
          {"k_percent", c.attack.k_percent},
          {"epsilon", c.attack.epsilon},
          {"budget", c.attack.budget},
          {"rounds", c.attack.rounds},
          {"epochs_per_round", c.attack.epochs_per_round},
          {"lr", c.attack.lr},
          {"lr_decay", c.attack.lr_decay},
          {"batch_size", c.attack.batch_size},
          {"centroid_momentum", c.attack.centroid_momentum},
          {"heatmap_probes", c.attack.heatmap_probes},
          {"poison_ce_on_clean", c.attack.poison_ce_on_clean},
          {"trigger_mode",
           c.attack.trigger_mode == AttackConfig::TriggerMode::rft ? "rft" : "localized"},
          {"stamp_px", c.attack.stamp_px},
          {"warm_start", c.warm_start}}},
        {"eval",
         {{"defenses", c.defenses},
          {"checkpoint", c.eval_checkpoint},
          {"trigger", c.eval_trigger},
          {"baseline_checkpoint", c.baseline_checkpoint},
          {"attack_name", c.attack_name}}},
        {"probe",
         {{"trials", c.probe_trials},
          {"max_n", c.probe_max_n},
          {"seq_len", c.probe_seq_len},
          {"alpha", c.probe_alpha},
          {"positions", c.probe_positions},
          {"repeats", c.probe_repeats},
          {"images", c.probe_images}}},
    };
}

namespace {

void merge_checked(nlohmann::json& base, const nlohmann::json& user, const std::string& prefix) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) {
            throw std::invalid_argument("config: unknown key '" + path + "'");
        }
        if (base[it.key()].is_object() && it.value().is_object()) {
            merge_checked(base[it.key()], it.value(), path);
        } else {
            base[it.key()] = it.value();
        }
    }
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& user) {
    nlohmann::json j = config_to_json(ExperimentConfig{});  // defaults
    merge_checked(j, user, "");

    ExperimentConfig c;
    c.seed = j.at("seed");
    c.out_dir = j.at("out_dir");
    const auto& ds = j.at("dataset");
    c.dataset_kind = ds.at("kind");
    c.dataset_dir = ds.at("dir");
    c.synth_classes = ds.at("classes");
    c.synth_per_class = ds.at("per_class");
    c.synth_height = ds.at("height");
    c.synth_width = ds.at("width");
    c.synth_amplitude = ds.at("amplitude");
    c.val_fraction = ds.at("val_fraction");
    const auto& m = j.at("model");
    c.model.patch_size = m.at("patch_size");
    c.model.embed_dim = m.at("embed_dim");
    c.model.state_dim = m.at("state_dim");
    c.model.num_blocks = m.at("num_blocks");
    c.precision = m.at("precision");
    c.clean_epochs = j.at("train").at("clean_epochs");
    const auto& a = j.at("attack");
    c.attack.target_label = a.at("target_label");
    c.attack.poison_rate = a.at("poison_rate");
    c.attack.lambda = a.at("lambda");
    c.attack.k_percent = a.at("k_percent");
    c.attack.epsilon = a.at("epsilon");
    c.attack.budget = a.at("budget");
    c.attack.rounds = a.at("rounds");
    c.attack.epochs_per_round = a.at("epochs_per_round");
    c.attack.lr = a.at("lr");
    c.attack.lr_decay = a.at("lr_decay");
    c.attack.batch_size = a.at("batch_size");
    c.attack.centroid_momentum = a.at("centroid_momentum");
    c.attack.heatmap_probes = a.at("heatmap_probes");
    c.attack.poison_ce_on_clean = a.at("poison_ce_on_clean");
    const std::string mode = a.at("trigger_mode");
    if (mode == "rft") {
        c.attack.trigger_mode = AttackConfig::TriggerMode::rft;
    } else if (mode == "localized") {
        c.attack.trigger_mode = AttackConfig::TriggerMode::localized;
    } else {
        throw std::invalid_argument("config: attack.trigger_mode must be rft or localized");
    }
    c.attack.stamp_px = a.at("stamp_px");
    c.attack.seed = c.seed;  // one seed drives every substream
    c.warm_start = a.at("warm_start");
    const auto& e = j.at("eval");
    c.defenses = e.at("defenses").get<std::vector<std::string>>();
    c.eval_checkpoint = e.at("checkpoint");
    c.eval_trigger = e.at("trigger");
    c.baseline_checkpoint = e.at("baseline_checkpoint");
    c.attack_name = e.at("attack_name");
    const auto& p = j.at("probe");
    c.probe_trials = p.at("trials");
    c.probe_max_n = p.at("max_n");
    c.probe_seq_len = p.at("seq_len");
    c.probe_alpha = p.at("alpha");
    c.probe_positions = p.at("positions");
    c.probe_repeats = p.at("repeats");
    c.probe_images = p.at("images");
    c.validate();
    return c;
}

namespace {

// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& item) {
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("config: override '" + item + "' is not key=value");
    }
    const std::string key = item.substr(0, eq);
    const std::string raw = item.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;

    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = key.find('.', start);
        const std::string part = key.substr(start, dot - start);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

}  // namespace

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    nlohmann::json user = nlohmann::json::object();
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw std::invalid_argument("config: cannot open " + path);
        user = nlohmann::json::parse(is);
    }
    for (const std::string& item : overrides) apply_override(user, item);
    return config_from_json(user);
}

std::string config_digest(const ExperimentConfig& cfg) {
    nlohmann::json j = config_to_json(cfg);
    j.erase("out_dir");  // where results land is not part of the experiment
    const std::uint64_t h = fnv1a64(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace rftlab
