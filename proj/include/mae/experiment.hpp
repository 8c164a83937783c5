#pragma once

#include <chrono>
#include <iostream>

#include "mae/dataset.hpp"
#include "mae/metrics.hpp"
#include "mae/objectives.hpp"
#include "mae/toml.hpp"

namespace mae {

constexpr const char* kCodeVersion = "mae-0.1.0";
constexpr int kRunSchemaVersion = 1;

// Exit code contract: 0 success, 1 runtime failure, 2 configuration error.
enum ExitCode { kOk = 0, kRuntimeError = 1, kConfigError = 2 };

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/default";
    std::string dataset_path = "data/synth";
    DatasetSpec dataset;
    NetworkConfig network;
    TrainerConfig trainer;
    ProtocolConfig protocol;
    int checkpoint_every = 0;  // epochs between mid-run checkpoints, 0 = final only

    // ablation axes
    std::vector<int> ablate_k = {3, 4, 5};
    std::vector<bool> ablate_mask = {true, false};
    std::vector<std::uint64_t> ablate_seeds = {1, 2, 3, 4, 5};
    bool ablate_global_only = true;

    static ExperimentConfig from_toml(const TomlTable& t) {
        ExperimentConfig c;
        c.seed = static_cast<std::uint64_t>(t.get_int("seed", 1));
        c.out_dir = t.get_string("out", c.out_dir);
        c.dataset_path = t.get_string("dataset.path", c.dataset_path);
        c.dataset.identities = static_cast<int>(t.get_int("dataset.identities", 16));
        c.dataset.train_scenes = static_cast<int>(t.get_int("dataset.train_scenes", 200));
        c.dataset.test_scenes = static_cast<int>(t.get_int("dataset.test_scenes", 80));
        c.dataset.scene.width = static_cast<int>(t.get_int("dataset.width", 96));
        c.dataset.scene.height = static_cast<int>(t.get_int("dataset.height", 160));
        c.dataset.scene.min_persons = static_cast<int>(t.get_int("dataset.min_persons", 1));
        c.dataset.scene.max_persons = static_cast<int>(t.get_int("dataset.max_persons", 4));
        c.dataset.scene.clutter_shapes = static_cast<int>(t.get_int("dataset.clutter_shapes", 12));
        c.dataset.scene.noise_level = t.get_double("dataset.noise_level", 12.0);
        c.dataset.seed = c.seed;

        c.network.c1 = static_cast<int>(t.get_int("network.c1", 64));
        c.network.c3 = static_cast<int>(t.get_int("network.c3", 10));
        c.network.c5 = static_cast<int>(t.get_int("network.c5", 16));
        c.network.k = static_cast<int>(t.get_int("network.k", 5));
        c.network.embed_dim = static_cast<int>(t.get_int("network.embed_dim", 32));
        c.network.stem_stride = static_cast<int>(t.get_int("network.stem_stride", 4));
        c.network.use_global_mask = t.get_bool("network.use_global_mask", true);
        c.network.use_local = t.get_bool("network.use_local", true);
        c.network.seed = c.seed;

        c.trainer.epochs = static_cast<int>(t.get_int("train.epochs", 9));
        c.trainer.seed = c.seed;
        c.trainer.optim.base_lr = t.get_double("train.base_lr", 0.003);
        c.trainer.optim.momentum = t.get_double("train.momentum", 0.9);
        c.trainer.optim.weight_decay = t.get_double("train.weight_decay", 5e-4);
        c.trainer.optim.lr_decay_epochs = static_cast<int>(t.get_int("train.lr_decay_epochs", 8));
        c.trainer.optim.warmup = t.get_bool("train.warmup", true);
        c.trainer.optim.accum_window = static_cast<int>(t.get_int("train.accum_window", 6));
        c.trainer.optim.lambda_oim = t.get_double("train.lambda_oim", 1.0);
        c.trainer.bn_freeze_epoch = static_cast<int>(t.get_int("train.bn_freeze_epoch", 1));
        c.checkpoint_every = static_cast<int>(t.get_int("train.checkpoint_every", 0));
        c.trainer.oim_tau = t.get_double("oim.tau", 1.0 / 30.0);
        c.trainer.oim_gamma = t.get_double("oim.gamma", 0.5);
        c.trainer.oim_queue = static_cast<int>(t.get_int("oim.queue", 64));
        c.trainer.proposals.jitters = static_cast<int>(t.get_int("proposals.jitters", 3));
        c.trainer.proposals.backgrounds = static_cast<int>(t.get_int("proposals.backgrounds", 4));
        c.trainer.proposals.jitter_frac = t.get_double("proposals.jitter_frac", 0.1);

        c.protocol.iou_thr = t.get_double("protocol.iou_thr", 0.5);
        c.protocol.det_thr = t.get_double("protocol.det_thr", 0.5);
        c.protocol.nms_thr = t.get_double("protocol.nms_thr", 0.5);
        c.protocol.max_rank = static_cast<int>(t.get_int("protocol.max_rank", 10));
        c.protocol.score_empty_queries_zero = t.get_bool("protocol.score_empty_queries_zero", false);
        c.protocol.gallery_sizes.clear();
        for (auto v : t.get_int_array("protocol.gallery_sizes", {20, 40, 80}))
            c.protocol.gallery_sizes.push_back(static_cast<int>(v));

        c.ablate_k.clear();
        for (auto v : t.get_int_array("ablate.k_values", {3, 4, 5}))
            c.ablate_k.push_back(static_cast<int>(v));
        c.ablate_seeds.clear();
        for (auto v : t.get_int_array("ablate.seeds", {1, 2, 3, 4, 5}))
            c.ablate_seeds.push_back(static_cast<std::uint64_t>(v));
        c.ablate_global_only = t.get_bool("ablate.global_only", true);
        if (t.has("ablate.mask_off_only") && t.get_bool("ablate.mask_off_only", false))
            c.ablate_mask = {false};
        return c;
    }

    void validate() const {
        network.validate();
        if (dataset.identities < 1) throw std::invalid_argument("config: dataset.identities must be >= 1");
        if (trainer.epochs < 1) throw std::invalid_argument("config: train.epochs must be >= 1");
        if (trainer.optim.accum_window < 1)
            throw std::invalid_argument("config: train.accum_window must be >= 1");
    }

    nlohmann::json to_json() const {
        return {
            {"seed", seed},
            {"out", out_dir},
            {"dataset",
             {{"path", dataset_path},
              {"identities", dataset.identities},
              {"train_scenes", dataset.train_scenes},
              {"test_scenes", dataset.test_scenes},
              {"width", dataset.scene.width},
              {"height", dataset.scene.height},
              {"min_persons", dataset.scene.min_persons},
              {"max_persons", dataset.scene.max_persons},
              {"clutter_shapes", dataset.scene.clutter_shapes},
              {"noise_level", dataset.scene.noise_level}}},
            {"network", ckpt_detail::config_json(network)},
            {"train",
             {{"epochs", trainer.epochs},
              {"base_lr", trainer.optim.base_lr},
              {"momentum", trainer.optim.momentum},
              {"weight_decay", trainer.optim.weight_decay},
              {"lr_decay_epochs", trainer.optim.lr_decay_epochs},
              {"warmup", trainer.optim.warmup},
              {"accum_window", trainer.optim.accum_window},
              {"lambda_oim", trainer.optim.lambda_oim},
              {"bn_freeze_epoch", trainer.bn_freeze_epoch},
              {"checkpoint_every", checkpoint_every}}},
            {"oim",
             {{"tau", trainer.oim_tau}, {"gamma", trainer.oim_gamma}, {"queue", trainer.oim_queue}}},
            {"proposals",
             {{"jitters", trainer.proposals.jitters},
              {"backgrounds", trainer.proposals.backgrounds},
              {"jitter_frac", trainer.proposals.jitter_frac}}},
            {"protocol",
             {{"iou_thr", protocol.iou_thr},
              {"det_thr", protocol.det_thr},
              {"nms_thr", protocol.nms_thr},
              {"gallery_sizes", protocol.gallery_sizes},
              {"max_rank", protocol.max_rank}}},
            {"code_version", kCodeVersion},
            {"schema_version", kRunSchemaVersion},
        };
    }
};

namespace exp_detail {

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    return nlohmann::json::parse(f);
}

inline double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
}

inline double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
}

}  // namespace exp_detail

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

inline int cmd_synth(const ExperimentConfig& cfg, bool force) {
    cfg.validate();
    fs::path dir = cfg.dataset_path;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) {
            std::cerr << "error: dataset directory " << dir
                      << " is not empty (use --force to overwrite)\n";
            return kConfigError;
        }
        fs::remove_all(dir);
    }
    Dataset ds = make_dataset(cfg.dataset);
    write_dataset(ds, dir);
    std::cout << "wrote " << ds.scenes.size() << " scenes (" << cfg.dataset.identities
              << " identities) to " << dir << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutputs {
    fs::path checkpoint;
    fs::path run_record;
    fs::path log;
};

inline TrainOutputs train_to_dir(const ExperimentConfig& cfg, const Dataset& ds,
                                 const fs::path& out, const std::string& resume_from = "") {
    fs::create_directories(out);
    MaeParams params = MaeParams::make(cfg.network);
    Trainer trainer(params, AttributePartition::make(cfg.network.k), cfg.trainer,
                    cfg.dataset.identities);
    if (!resume_from.empty()) trainer.restore(load_checkpoint(resume_from));

    TrainOutputs paths{out / "checkpoint.ckpt", out / "run.json", out / "train_log.jsonl"};
    std::ofstream log(paths.log, resume_from.empty() ? std::ios::trunc : std::ios::app);
    trainer.log = [&log](const nlohmann::json& j) { log << j.dump() << "\n"; };

    auto train_scenes = ds.split("train");
    auto t0 = std::chrono::steady_clock::now();
    if (cfg.checkpoint_every > 0) {
        while (trainer.completed_epochs < cfg.trainer.epochs) {
            trainer.cfg.epochs = std::min(cfg.trainer.epochs,
                                          trainer.completed_epochs + cfg.checkpoint_every);
            trainer.run(train_scenes);
            char name[48];
            std::snprintf(name, sizeof name, "checkpoint_epoch_%03d.ckpt",
                          trainer.completed_epochs);
            save_checkpoint(trainer.checkpoint(), (out / name).string());
        }
        trainer.cfg.epochs = cfg.trainer.epochs;
    } else {
        trainer.run(train_scenes);
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_checkpoint(trainer.checkpoint(), paths.checkpoint.string());
    nlohmann::json record = {{"schema_version", kRunSchemaVersion},
                             {"code_version", kCodeVersion},
                             {"config", cfg.to_json()},
                             {"checkpoint", paths.checkpoint.string()},
                             {"epochs", trainer.completed_epochs},
                             {"wall_clock_seconds", secs}};
    exp_detail::write_json(paths.run_record, record);
    return paths;
}

inline int cmd_train(const ExperimentConfig& cfg, bool dry_run, const std::string& resume_from) {
    cfg.validate();
    if (dry_run) {
        std::cout << "config ok\n";
        return kOk;
    }
    Dataset ds = read_dataset(cfg.dataset_path);
    TrainOutputs outs = train_to_dir(cfg, ds, cfg.out_dir, resume_from);
    std::cout << "checkpoint: " << outs.checkpoint << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOutputs {
    MetricsReport report;
    std::vector<SweepRow> sweep;
};

inline EvalOutputs eval_to_dir(const ExperimentConfig& cfg, const Dataset& ds,
                               const std::string& checkpoint_path, const fs::path& out) {
    MaeParams params = MaeParams::make(cfg.network);
    restore_params(params, load_checkpoint(checkpoint_path));
    auto test = ds.split("test");
    AttributePartition partition = AttributePartition::make(cfg.network.k);
    EvalData data = extract_eval_data(params, partition, test, cfg.trainer.proposals,
                                      cfg.protocol, cfg.seed);
    EvalOutputs outs;
    outs.report = compute_report(data, cfg.protocol);
    outs.sweep = gallery_sweep(data, cfg.protocol, cfg.protocol.gallery_sizes, cfg.seed);

    fs::create_directories(out);
    nlohmann::json mj = outs.report.to_json();
    mj["config"] = cfg.to_json();
    mj["checkpoint"] = checkpoint_path;
    exp_detail::write_json(out / "metrics.json", mj);

    std::ofstream csv(out / "sweep.csv");
    csv << "size,map,rank1,rank5,rank10\n";
    for (const auto& row : outs.sweep)
        csv << row.size << "," << row.map << "," << row.rank1 << "," << row.rank5 << ","
            << row.rank10 << "\n";
    nlohmann::json sj = nlohmann::json::array();
    for (const auto& row : outs.sweep)
        sj.push_back({{"size", row.size},
                      {"map", row.map},
                      {"rank1", row.rank1},
                      {"per_query_ap", row.per_query_ap}});
    exp_detail::write_json(out / "sweep.json", sj);
    return outs;
}

inline int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
    cfg.validate();
    Dataset ds = read_dataset(cfg.dataset_path);
    EvalOutputs outs = eval_to_dir(cfg, ds, checkpoint_path, cfg.out_dir);
    std::cout << "mAP " << outs.report.map << " rank-1 "
              << (outs.report.cmc_curve.empty() ? 0.0 : outs.report.cmc_curve[0]) << " (see "
              << cfg.out_dir << "/metrics.json)\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationRun {
    std::string variant;
    std::uint64_t seed = 0;
    double map = 0, rank1 = 0;
};

inline ExperimentConfig variant_config(const ExperimentConfig& base, const std::string& name,
                                       int k, bool mask, bool local, std::uint64_t seed) {
    ExperimentConfig c = base;
    c.seed = seed;
    c.network.k = k;
    c.network.use_global_mask = mask;
    c.network.use_local = local;
    c.network.seed = seed;
    c.trainer.seed = seed;
    c.out_dir = (fs::path(base.out_dir) / name / ("seed" + std::to_string(seed))).string();
    return c;
}

inline std::vector<std::pair<std::string, ExperimentConfig>> ablation_variants(
    const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, ExperimentConfig>> out;
    for (int k : cfg.ablate_k)
        for (bool mask : cfg.ablate_mask)
            for (std::uint64_t seed : cfg.ablate_seeds) {
                std::string name = "k" + std::to_string(k) + (mask ? "_mask" : "_nomask");
                out.emplace_back(name, variant_config(cfg, name, k, mask, true, seed));
            }
    if (cfg.ablate_global_only)
        for (std::uint64_t seed : cfg.ablate_seeds)
            out.emplace_back("global_only",
                             variant_config(cfg, "global_only", cfg.network.k, true, false, seed));
    return out;
}

inline int cmd_ablate(const ExperimentConfig& cfg) {
    cfg.validate();
    Dataset ds = read_dataset(cfg.dataset_path);
    std::vector<AblationRun> runs;
    for (auto& [name, vcfg] : ablation_variants(cfg)) {
        fs::path vout = vcfg.out_dir;
        TrainOutputs t = train_to_dir(vcfg, ds, vout);
        EvalOutputs e = eval_to_dir(vcfg, ds, t.checkpoint.string(), vout);
        AblationRun run;
        run.variant = name;
        run.seed = vcfg.seed;
        run.map = e.report.map;
        run.rank1 = e.report.cmc_curve.empty() ? 0.0 : e.report.cmc_curve[0];
        runs.push_back(run);
        std::cout << name << " seed " << run.seed << ": mAP " << run.map << " rank-1 "
                  << run.rank1 << "\n";
    }

    // aggregate: mean +/- sd per variant, deltas vs the k=5 masked baseline
    std::map<std::string, std::vector<double>> maps, rank1s;
    for (const auto& r : runs) {
        maps[r.variant].push_back(r.map);
        rank1s[r.variant].push_back(r.rank1);
    }
    std::string baseline = "k" + std::to_string(cfg.network.k) + "_mask";
    double base_map = maps.count(baseline) ? exp_detail::mean(maps[baseline]) : 0.0;
    double base_rank1 = rank1s.count(baseline) ? exp_detail::mean(rank1s[baseline]) : 0.0;

    fs::create_directories(cfg.out_dir);
    std::ofstream csv(fs::path(cfg.out_dir) / "ablation_table.csv");
    csv << "variant,seeds,map_mean,map_sd,map_delta,rank1_mean,rank1_sd,rank1_delta\n";
    nlohmann::json table = nlohmann::json::array();
    for (const auto& [variant, vmaps] : maps) {
        double mm = exp_detail::mean(vmaps), ms = exp_detail::sample_sd(vmaps);
        double rm = exp_detail::mean(rank1s[variant]), rs = exp_detail::sample_sd(rank1s[variant]);
        csv << variant << "," << vmaps.size() << "," << mm << "," << ms << "," << (mm - base_map)
            << "," << rm << "," << rs << "," << (rm - base_rank1) << "\n";
        table.push_back({{"variant", variant},
                         {"seeds", vmaps.size()},
                         {"map_mean", mm},
                         {"map_sd", ms},
                         {"map_delta", mm - base_map},
                         {"rank1_mean", rm},
                         {"rank1_sd", rs},
                         {"rank1_delta", rm - base_rank1}});
    }
    nlohmann::json aj = {{"schema_version", kRunSchemaVersion},
                         {"code_version", kCodeVersion},
                         {"config", cfg.to_json()},
                         {"baseline", baseline},
                         {"table", table}};
    nlohmann::json per_run = nlohmann::json::array();
    for (const auto& r : runs)
        per_run.push_back({{"variant", r.variant}, {"seed", r.seed}, {"map", r.map},
                           {"rank1", r.rank1}});
    aj["runs"] = per_run;
    exp_detail::write_json(fs::path(cfg.out_dir) / "ablation.json", aj);
    return kOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

inline int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    if (run_dirs.empty()) {
        std::cerr << "error: no run directories given\n";
        return kConfigError;
    }
    struct Entry {
        std::string dir;
        double map, rank1;
        nlohmann::json sweep;
    };
    std::vector<Entry> entries;
    for (const auto& d : run_dirs) {
        fs::path mp = fs::path(d) / "metrics.json";
        if (!fs::exists(mp)) {
            std::cerr << "error: missing run dir or metrics: " << mp << "\n";
            return kConfigError;
        }
        nlohmann::json m = exp_detail::read_json(mp);
        Entry e;
        e.dir = d;
        e.map = m.at("search").at("map");
        e.rank1 = m.at("search").at("cmc")[0];
        fs::path sp = fs::path(d) / "sweep.json";
        if (fs::exists(sp)) e.sweep = exp_detail::read_json(sp);
        entries.push_back(std::move(e));
    }

    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "runs.csv");
    csv << "run,map,rank1\n";
    std::vector<double> maps, rank1s;
    for (const auto& e : entries) {
        csv << e.dir << "," << e.map << "," << e.rank1 << "\n";
        maps.push_back(e.map);
        rank1s.push_back(e.rank1);
    }

    // gallery-size series aggregated across runs (Fig. 8 style data)
    std::map<int, std::vector<double>> size_map, size_rank1;
    for (const auto& e : entries)
        if (e.sweep.is_array())
            for (const auto& row : e.sweep) {
                size_map[row.at("size")].push_back(row.at("map"));
                size_rank1[row.at("size")].push_back(row.at("rank1"));
            }
    if (!size_map.empty()) {
        std::ofstream scsv(fs::path(out_dir) / "gallery_sweep_series.csv");
        scsv << "size,map_mean,map_sd,rank1_mean,rank1_sd,runs\n";
        for (const auto& [size, v] : size_map)
            scsv << size << "," << exp_detail::mean(v) << "," << exp_detail::sample_sd(v) << ","
                 << exp_detail::mean(size_rank1[size]) << ","
                 << exp_detail::sample_sd(size_rank1[size]) << "," << v.size() << "\n";
    }

    std::ofstream summary(fs::path(out_dir) / "summary.txt");
    summary << "runs: " << entries.size() << "\n"
            << "mAP mean " << exp_detail::mean(maps) << " sd " << exp_detail::sample_sd(maps)
            << "\n"
            << "rank-1 mean " << exp_detail::mean(rank1s) << " sd "
            << exp_detail::sample_sd(rank1s) << "\n";
    std::cout << "report written to " << out_dir << "\n";
    return kOk;
}

}  // namespace mae
