#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rftlab/commands.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "JSON config file (defaults apply when omitted)");
    cmd->add_option("-s,--set", args.overrides, "Override a config key, e.g. --set attack.rounds=1");
    cmd->add_option("-o,--out", args.out_dir, "Output directory (overrides config out_dir)");
    cmd->add_option("--seed", args.seed, "Top-level seed (overrides config seed)");
}

rftlab::ExperimentConfig resolve(const CommonArgs& args) {
    std::vector<std::string> overrides = args.overrides;
    if (!args.out_dir.empty()) overrides.push_back("out_dir=" + args.out_dir);
    if (!args.seed.empty()) overrides.push_back("seed=" + args.seed);
    return rftlab::load_config(args.config_path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Frequency-trigger backdoor laboratory for a miniature selective-SSM classifier"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string checkpoint, trigger, baseline;

    CLI::App* train = app.add_subcommand("train-clean", "Train a clean baseline model");
    add_common(train, args);

    CLI::App* attack = app.add_subcommand("attack", "Run the backdoor injection loop");
    add_common(attack, args);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a model/trigger against the defense grid");
    add_common(eval, args);
    eval->add_option("--checkpoint", checkpoint, "Model checkpoint to evaluate");
    eval->add_option("--trigger", trigger, "Trigger delta file");
    eval->add_option("--baseline-checkpoint", baseline,
                     "Optional localized-trigger model for comparison rows");

    CLI::App* probe = app.add_subcommand("probe", "Run the recurrence/attention/influence probes");
    add_common(probe, args);

    CLI::App* heatmap = app.add_subcommand("heatmap", "Export a sensitivity heatmap and trigger");
    add_common(heatmap, args);
    heatmap->add_option("--checkpoint", checkpoint, "Model checkpoint (fresh init when omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        rftlab::ExperimentConfig cfg = [&] {
            std::vector<std::string> extra;
            if (!checkpoint.empty()) extra.push_back("eval.checkpoint=" + checkpoint);
            if (!trigger.empty()) extra.push_back("eval.trigger=" + trigger);
            if (!baseline.empty()) extra.push_back("eval.baseline_checkpoint=" + baseline);
            CommonArgs merged = args;
            merged.overrides.insert(merged.overrides.end(), extra.begin(), extra.end());
            return resolve(merged);
        }();
        if (train->parsed()) rftlab::cmd_train_clean(cfg);
        if (attack->parsed()) rftlab::cmd_attack(cfg);
        if (eval->parsed()) rftlab::cmd_eval(cfg);
        if (probe->parsed()) rftlab::cmd_probe(cfg);
        if (heatmap->parsed()) rftlab::cmd_heatmap(cfg);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "%s\n", nlohmann::json{{"error", e.what()}, {"kind", "config"}}.dump().c_str());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", nlohmann::json{{"error", e.what()}, {"kind", "runtime"}}.dump().c_str());
        return 1;
    }
    return 0;
}
