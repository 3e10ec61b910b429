// rpnet: point-cloud aggregator experiments.
//
//   rpnet <command> --config <path> [--seed N] [--out DIR] [--preset NAME]
//         [--override key=value ...]
//
// Commands: train, eval, gradcheck, bench, ablate, robustness. Every command
// writes its resolved configuration next to its outputs; re-running from that
// file reproduces the results.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rpnet/cli.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string preset;
    std::string checkpoint;
    std::string scope_or_axis;
    long long seed = -1;
    long long epochs = -1;
    long long votes = -1;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON run configuration");
    cmd->add_option("--seed", args.seed, "RNG seed (overrides config)");
    cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
    cmd->add_option("--preset", args.preset, "model preset, e.g. W3 or D4");
    cmd->add_option("--checkpoint", args.checkpoint, "checkpoint path (eval/robustness)");
    cmd->add_option("--epochs", args.epochs, "training epochs (overrides config)");
    cmd->add_option("--votes", args.votes, "prediction votes (overrides config)");
    cmd->add_option("--override", args.overrides,
                    "dotted-path config override, e.g. model.gra.attention_maps=1");
}

int run(const std::string& command, const CommonArgs& args) {
    rpnet::json j = rpnet::json::object();
    if (!args.config_path.empty()) {
        std::ifstream is(args.config_path);
        if (!is) {
            std::cerr << "io error: cannot open config " << args.config_path << "\n";
            return 3;
        }
        try {
            is >> j;
        } catch (const rpnet::json::exception& e) {
            std::cerr << "parse error: " << args.config_path << ": " << e.what() << "\n";
            return 3;
        }
    }
    try {
        for (const std::string& kv : args.overrides) rpnet::apply_override(j, kv);
        j["command"] = command;
        if (args.seed >= 0) j["seed"] = args.seed;
        if (args.epochs >= 0) j["epochs"] = args.epochs;
        if (args.votes >= 0) j["votes"] = args.votes;
        if (!args.out_dir.empty()) j["out"] = args.out_dir;
        if (!args.preset.empty()) j["preset"] = args.preset;
        if (!args.checkpoint.empty()) j["checkpoint"] = args.checkpoint;
        if (!args.scope_or_axis.empty()) {
            if (command == "gradcheck") j["gradcheck_scope"] = args.scope_or_axis;
            if (command == "ablate") j["ablate_axis"] = args.scope_or_axis;
        }
        if (!j.contains("out")) j["out"] = "runs/" + command;
        rpnet::RunConfig cfg = rpnet::config_from_json(j);
        return rpnet::run_command_with_exit_codes(cfg);
    } catch (const rpnet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"point-cloud aggregator experiments"};
    app.require_subcommand(1);

    CommonArgs args;
    CLI::App* train = app.add_subcommand("train", "train a model and write metrics + checkpoint");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference certification of backward passes");
    CLI::App* bench = app.add_subcommand("bench", "parameter/MAC counts and forward wall time");
    CLI::App* ablate = app.add_subcommand("ablate", "train across one configuration axis");
    CLI::App* robustness =
        app.add_subcommand("robustness", "evaluate under permutation, rigid transforms, noise");
    for (CLI::App* cmd : {train, eval, gradcheck, bench, ablate, robustness}) add_common(cmd, args);
    gradcheck->add_option("--scope", args.scope_or_axis, "primitives|gra|model|all");
    ablate->add_option("--axis", args.scope_or_axis,
                       "geometric|semantic|aggregation|cross_channel");

    CLI11_PARSE(app, argc, argv);

    for (CLI::App* cmd : {train, eval, gradcheck, bench, ablate, robustness})
        if (cmd->parsed()) return run(cmd->get_name(), args);
    return 2;
}
