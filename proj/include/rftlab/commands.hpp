#pragma once

#include "rftlab/config.hpp"
#include "rftlab/data.hpp"

namespace rftlab {

/// Loads the dataset a config describes, carving a validation split for
/// corpora that ship without one.
Dataset load_dataset(const ExperimentConfig& cfg);

/// Model dimensions from config + dataset extents.
VimConfig resolve_model_config(const ExperimentConfig& cfg, const Dataset& ds);

// Each command validates its config, runs one experiment, and writes its
// artifacts under cfg.out_dir. Failures surface as exceptions.
void cmd_train_clean(const ExperimentConfig& cfg);
void cmd_attack(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_probe(const ExperimentConfig& cfg);
void cmd_heatmap(const ExperimentConfig& cfg);

}  // namespace rftlab
