#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rftlab/attack.hpp"
#include "rftlab/model.hpp"

namespace rftlab {

/// One experiment, fully described. Every command reads exactly one of these;
/// all randomness flows from `seed` through named substreams.
struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "out";

    // dataset
    std::string dataset_kind = "synthetic";  // synthetic | cifar10 | mnist_idx | raw
    std::string dataset_dir;
    int synth_classes = 2;
    int synth_per_class = 1000;
    int synth_height = 32;
    int synth_width = 32;
    double synth_amplitude = 0.25;
    double val_fraction = 0.15;  // carved from train when the corpus has no val split

    // model (image extents are overwritten from the dataset)
    VimConfig model;
    std::string precision = "f32";

    // clean training
    int clean_epochs = 10;

    AttackConfig attack;

    // evaluation
    std::vector<std::string> defenses = {"none", "patch_drop:0.25", "patch_shuffle", "jpeg:75"};
    std::string eval_checkpoint;
    std::string eval_trigger;
    std::string baseline_checkpoint;  // optional localized-trigger model for comparison rows
    std::string attack_name = "rft";
    std::string warm_start;  // optional checkpoint to start the attack from

    // theory probes
    int probe_trials = 200;
    int probe_max_n = 16;
    int probe_seq_len = 16;
    double probe_alpha = 0.5;
    int probe_positions = 24;
    int probe_repeats = 16;
    int probe_images = 8;

    Precision parsed_precision() const;
    void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Loads `path` (empty -> all defaults), then applies "dotted.key=value"
/// overrides. Unknown keys are errors.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

/// 16-hex-digit digest of the canonical serialized config.
std::string config_digest(const ExperimentConfig& cfg);

}  // namespace rftlab
