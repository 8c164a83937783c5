#include <CLI11.hpp>
#include <iostream>
#include <sstream>

#include "mae/experiment.hpp"

namespace {

struct GlobalOpts {
    std::string config;
    std::string out;
    std::string dataset;
    std::int64_t seed = -1;
    bool force = false;
    bool dry_run = false;
};

mae::ExperimentConfig load_config(const GlobalOpts& g) {
    mae::TomlTable table;
    if (!g.config.empty()) table = mae::parse_toml_file(g.config);
    mae::ExperimentConfig cfg = mae::ExperimentConfig::from_toml(table);
    if (g.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(g.seed);
        cfg.dataset.seed = cfg.seed;
        cfg.network.seed = cfg.seed;
        cfg.trainer.seed = cfg.seed;
    }
    if (!g.out.empty()) cfg.out_dir = g.out;
    if (!g.dataset.empty()) cfg.dataset_path = g.dataset;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* app, GlobalOpts& g) {
    app->add_option("--config", g.config, "TOML config file");
    app->add_option("--seed", g.seed, "override the experiment seed");
    app->add_option("--out", g.out, "output directory");
    app->add_option("--dataset", g.dataset, "dataset directory");
    app->add_flag("--force", g.force, "overwrite existing outputs");
    app->add_flag("--dry-run", g.dry_run, "validate config and exit");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-attribute person search pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;
    std::string checkpoint, resume_from, report_out = "report";
    std::vector<std::string> report_runs;

    std::int64_t identities = -1, train_scenes = -1, test_scenes = -1;
    std::string sweep_arg;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth, g);
    synth->add_option("--identities", identities, "number of identities");
    synth->add_option("--train-scenes", train_scenes, "training scene count");
    synth->add_option("--test-scenes", test_scenes, "test scene count");
    auto* train = app.add_subcommand("train", "train a model");
    add_common(train, g);
    train->add_option("--resume", resume_from, "checkpoint to resume from");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, g);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--gallery-sweep", sweep_arg, "comma-separated gallery sizes");
    auto* ablate = app.add_subcommand("ablate", "run the ablation grid");
    add_common(ablate, g);
    auto* report = app.add_subcommand("report", "aggregate run directories");
    report->add_option("runs", report_runs, "run directories with metrics.json");
    report->add_option("--out", report_out, "report output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);  // prints the usage message
        return rc == 0 ? mae::kOk : mae::kConfigError;
    }

    try {
        if (synth->parsed()) {
            mae::ExperimentConfig cfg = load_config(g);
            if (identities >= 0) cfg.dataset.identities = static_cast<int>(identities);
            if (train_scenes >= 0) cfg.dataset.train_scenes = static_cast<int>(train_scenes);
            if (test_scenes >= 0) cfg.dataset.test_scenes = static_cast<int>(test_scenes);
            cfg.validate();
            if (g.dry_run) {
                std::cout << "config ok\n";
                return mae::kOk;
            }
            return mae::cmd_synth(cfg, g.force);
        }
        if (train->parsed()) return mae::cmd_train(load_config(g), g.dry_run, resume_from);
        if (eval->parsed()) {
            mae::ExperimentConfig cfg = load_config(g);
            if (!sweep_arg.empty()) {
                cfg.protocol.gallery_sizes.clear();
                std::stringstream ss(sweep_arg);
                std::string item;
                while (std::getline(ss, item, ','))
                    cfg.protocol.gallery_sizes.push_back(std::stoi(item));
            }
            if (g.dry_run) {
                std::cout << "config ok\n";
                return mae::kOk;
            }
            return mae::cmd_eval(cfg, checkpoint);
        }
        if (ablate->parsed()) {
            mae::ExperimentConfig cfg = load_config(g);
            if (g.dry_run) {
                std::cout << "config ok\n";
                return mae::kOk;
            }
            return mae::cmd_ablate(cfg);
        }
        if (report->parsed()) return mae::cmd_report(report_runs, report_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return mae::kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return mae::kRuntimeError;
    }
    return mae::kConfigError;
}
