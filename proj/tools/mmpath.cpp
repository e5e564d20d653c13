// Command-line front end: dataset generation, pretraining, fine-tuning,
// evaluation, ablations, graph inspection and report rendering.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmpath/report.hpp"
#include "mmpath/train.hpp"
#include "mmpath/world_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError {
    int code;
    std::string message;
};

fs::path default_out(const std::string& command, const std::string& explicit_out) {
    if (!explicit_out.empty()) return explicit_out;
    const char* root = std::getenv("MMPATH_RUN_DIR");
    if (root && *root) return fs::path(root) / command;
    throw mmpath::ConfigError("no --out given and MMPATH_RUN_DIR is not set");
}

void ensure_writable(const fs::path& p, bool force) {
    if (fs::exists(p) && !force) {
        throw mmpath::Error("refusing to overwrite existing " + p.string() + " (use --force)");
    }
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw mmpath::InputError("cannot open config file: " + path);
    return json::parse(f);
}

// Precedence: flag > config file > built-in default. The config file may
// carry "train" and "world" sections.
mmpath::TrainConfig train_config_from(const json& file_cfg) {
    mmpath::TrainConfig cfg;
    if (file_cfg.contains("train")) cfg = mmpath::TrainConfig::from_json(file_cfg.at("train"));
    return cfg;
}

mmpath::WorldConfig world_config_from(const json& file_cfg) {
    mmpath::WorldConfig w;
    if (!file_cfg.contains("world")) return w;
    const json& j = file_cfg.at("world");
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("cols", w.cols);
    get("rows", w.rows);
    get("origin_x", w.origin_x);
    get("origin_y", w.origin_y);
    get("r", w.r);
    get("meters_per_pixel", w.meters_per_pixel);
    get("channels", w.channels);
    get("node_count", w.node_count);
    get("target_edge_len", w.target_edge_len);
    get("path_count", w.path_count);
    get("path_min_nodes", w.path_min_nodes);
    get("path_max_nodes", w.path_max_nodes);
    return w;
}

json world_config_json(const mmpath::WorldConfig& w) {
    return {{"cols", w.cols},
            {"rows", w.rows},
            {"origin_x", w.origin_x},
            {"origin_y", w.origin_y},
            {"r", w.r},
            {"meters_per_pixel", w.meters_per_pixel},
            {"channels", w.channels},
            {"node_count", w.node_count},
            {"target_edge_len", w.target_edge_len},
            {"path_count", w.path_count},
            {"path_min_nodes", w.path_min_nodes},
            {"path_max_nodes", w.path_max_nodes}};
}

void write_resolved_config(const fs::path& dir, json resolved, bool force) {
    fs::create_directories(dir);
    fs::path file = dir / "config.resolved.json";
    ensure_writable(file, force);
    std::ofstream f(file);
    if (!f) throw mmpath::InputError("cannot write " + file.string());
    f << resolved.dump(2) << "\n";
}

void add_train_flags(CLI::App* cmd, mmpath::TrainConfig& cfg) {
    cmd->add_option("--d", cfg.d, "embedding dimension");
    cmd->add_option("--layers", cfg.layers, "encoder layers");
    cmd->add_option("--heads", cfg.heads, "attention heads");
    cmd->add_option("--ffn-mult", cfg.ffn_mult, "feed-forward width multiplier");
    cmd->add_option("--dropout", cfg.dropout, "dropout rate");
    cmd->add_option("--mask-ratio", cfg.mask_ratio, "masked-node ratio");
    cmd->add_option("--lambda-mask", cfg.lambda_mask, "weight of the masked-node loss");
    cmd->add_option("--lambda-multi", cfg.lambda_multi, "weight of the alignment loss");
    cmd->add_option("--lambda-fuse", cfg.lambda_fuse, "weight of the fusion loss");
    cmd->add_option("--beta", cfg.beta, "quadruplet margin");
    cmd->add_option("--sigma-init", cfg.sigma_init, "initial contrastive temperature");
    cmd->add_option("--lr", cfg.lr, "learning rate");
    cmd->add_option("--epochs", cfg.epochs, "pretraining epochs");
    cmd->add_option("--batch-size", cfg.batch_size, "batch size");
    cmd->add_option("--seed", cfg.seed, "master seed");
    cmd->add_option("--ablation", cfg.ablation, "variant flag");
    cmd->add_option("--optimizer", cfg.optimizer, "adam or sgd");
    cmd->add_option("--patch-o", cfg.patch_o, "patch side in pixels");
    cmd->add_option("--max-path-nodes", cfg.max_path_nodes, "position table capacity");
    cmd->add_option("--node-init", cfg.node_init, "node table init: random or file:<path>");
    cmd->add_option("--patch-init", cfg.patch_init, "patch projection init: random or file:<path>");
    cmd->add_option("--finetune-epochs", cfg.finetune_epochs, "fine-tuning epochs");
    cmd->add_option("--finetune-lr", cfg.finetune_lr, "fine-tuning learning rate");
    cmd->add_flag("--freeze-encoder", cfg.freeze_encoder, "train only the task head");
    cmd->add_option("--train-frac", cfg.train_frac, "fraction of paths used for training");
    cmd->add_option("--workers", cfg.workers, "data preparation workers");
}

json resolved_train_json(const std::string& command, const mmpath::TrainConfig& cfg,
                         const json& extra) {
    json out = {{"command", command}, {"train", cfg.effective().to_json()}};
    for (auto it = extra.begin(); it != extra.end(); ++it) out[it.key()] = it.value();
    return out;
}

int run_cli(int argc, char** argv) {
    // --config is resolved before building the app so file values become
    // the defaults the flags override.
    std::string config_path;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    }
    json file_cfg = load_config_file(config_path);

    CLI::App app{"multi-modal multi-granularity path representation learning"};
    app.require_subcommand(0, 1);
    std::string config_opt;
    app.add_option("--config", config_opt, "JSON config file (sections: train, world)")
        ->expected(1);

    mmpath::TrainConfig cfg = train_config_from(file_cfg);
    mmpath::WorldConfig wcfg = world_config_from(file_cfg);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic world dataset");
    std::string gen_out;
    uint64_t gen_seed = 42;
    double gen_noise = 0.0;
    std::string gen_noise_task = "travel_time";
    bool gen_force = false;
    gen->add_option("--out", gen_out, "output dataset directory");
    gen->add_option("--seed", gen_seed, "world seed");
    gen->add_option("--cols", wcfg.cols, "tile columns");
    gen->add_option("--rows", wcfg.rows, "tile rows");
    gen->add_option("--r", wcfg.r, "pixels per tile side");
    gen->add_option("--meters-per-pixel", wcfg.meters_per_pixel, "meters per pixel");
    gen->add_option("--channels", wcfg.channels, "raster channels");
    gen->add_option("--nodes", wcfg.node_count, "road network nodes");
    gen->add_option("--edge-len", wcfg.target_edge_len, "target edge length (m)");
    gen->add_option("--paths", wcfg.path_count, "number of paths");
    gen->add_option("--path-min", wcfg.path_min_nodes, "minimum nodes per path");
    gen->add_option("--path-max", wcfg.path_max_nodes, "maximum nodes per path");
    gen->add_option("--noise", gen_noise, "label noise level");
    gen->add_option("--noise-task", gen_noise_task, "task the noise applies to");
    gen->add_flag("--force", gen_force, "overwrite existing artifacts");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
    std::string pre_data, pre_out;
    bool pre_force = false;
    pre->add_option("--data", pre_data, "dataset directory")->required();
    pre->add_option("--out", pre_out, "run directory");
    pre->add_flag("--force", pre_force, "overwrite existing artifacts");
    add_train_flags(pre, cfg);

    // finetune
    auto* ft = app.add_subcommand("finetune", "attach and train a task head");
    std::string ft_data, ft_ckpt, ft_out, ft_task = "travel_time";
    bool ft_force = false;
    ft->add_option("--data", ft_data, "dataset directory")->required();
    ft->add_option("--ckpt", ft_ckpt, "pretrained checkpoint")->required();
    ft->add_option("--task", ft_task, "travel_time or ranking");
    ft->add_option("--out", ft_out, "run directory");
    ft->add_flag("--force", ft_force, "overwrite existing artifacts");
    add_train_flags(ft, cfg);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
    std::string ev_data, ev_ckpt, ev_out, ev_split = "test";
    bool ev_force = false;
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--ckpt", ev_ckpt, "fine-tuned checkpoint")->required();
    ev->add_option("--split", ev_split, "train or test");
    ev->add_option("--out", ev_out, "run directory (metrics.csv appended)");
    ev->add_flag("--force", ev_force, "overwrite existing artifacts");

    // ablate
    auto* ab = app.add_subcommand("ablate", "run ablation variants end to end");
    std::string ab_data, ab_out, ab_task = "travel_time", ab_variants = "all";
    bool ab_force = false;
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--variants", ab_variants, "comma list or 'all'");
    ab->add_option("--task", ab_task, "travel_time or ranking");
    ab->add_option("--out", ab_out, "run directory");
    ab->add_flag("--force", ab_force, "overwrite existing artifacts");
    add_train_flags(ab, cfg);

    // graph-dump
    auto* gd = app.add_subcommand("graph-dump", "dump one path's cross-modal graph as JSON");
    std::string gd_data, gd_out;
    int gd_path_id = 0;
    int gd_patch_o = cfg.patch_o;
    bool gd_force = false;
    gd->add_option("--data", gd_data, "dataset directory")->required();
    gd->add_option("--path-id", gd_path_id, "path id")->required();
    gd->add_option("--patch-o", gd_patch_o, "patch side in pixels");
    gd->add_option("--out", gd_out, "output JSON file")->required();
    gd->add_flag("--force", gd_force, "overwrite existing artifacts");

    // report
    auto* rep = app.add_subcommand("report", "render report.md and loss curves for a run");
    std::string rep_run;
    rep->add_option("--run", rep_run, "run directory")->required();

    auto* help_cmd = app.add_subcommand("help", "list all commands");

    auto root_help = [&] {
        return app.get_formatter()->make_help(&app, app.get_name(), CLI::AppFormatMode::Normal);
    };
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << root_help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << root_help();
        return 2;
    }

    if (help_cmd->parsed() || app.get_subcommands().empty()) {
        std::cout << root_help();
        return 0;
    }

    if (gen->parsed()) {
        fs::path out = default_out("gen", gen_out);
        mmpath::World world = mmpath::generate_synthetic_world(gen_seed, wcfg);
        fs::create_directories(out);
        for (const char* name : {"network.jsonl", "tiles.json", "paths.jsonl", "labels.csv",
                                 "vocab.json"}) {
            ensure_writable(out / name, gen_force);
        }
        mmpath::save_world(world, out);
        auto labels = mmpath::synth_labels(world, mmpath::parse_task(gen_noise_task), gen_seed,
                                           gen_noise);
        mmpath::save_labels(labels, out / "labels.csv");
        mmpath::save_vocab(mmpath::Vocab::from_world(world).ids, out / "vocab.json");
        write_resolved_config(out,
                              json{{"command", "gen"},
                                   {"seed", gen_seed},
                                   {"noise", gen_noise},
                                   {"noise_task", gen_noise_task},
                                   {"world", world_config_json(wcfg)}},
                              gen_force);
        std::cout << "wrote dataset to " << out.string() << "\n";
        return 0;
    }

    if (pre->parsed()) {
        cfg.validate();
        fs::path out = default_out("pretrain", pre_out);
        fs::create_directories(out);
        ensure_writable(out / "checkpoint.mmp", pre_force);
        ensure_writable(out / "loss_log.csv", pre_force);
        mmpath::World world = mmpath::load_world(pre_data);
        mmpath::Model model = mmpath::build_model(world, cfg);
        auto [train_idx, test_idx] = mmpath::split_paths(world, cfg.train_frac);
        mmpath::Dataset train = mmpath::prepare_dataset(world, model.dims, train_idx, cfg.workers);
        auto result = mmpath::pretrain(model, train);
        mmpath::write_loss_log(out / "loss_log.csv", result.log);
        mmpath::save_model(model, out / "checkpoint.mmp", json::object(), result.rng_state);
        write_resolved_config(out, resolved_train_json("pretrain", cfg, {{"data", pre_data}}),
                              pre_force);
        if (!result.log.empty()) {
            std::cout << "pretrained " << cfg.epochs << " epochs, final total loss "
                      << mmpath::format_num(result.log.back().total) << "\n";
        }
        std::cout << "checkpoint: " << (out / "checkpoint.mmp").string() << "\n";
        return 0;
    }

    if (ft->parsed()) {
        fs::path out = default_out("finetune", ft_out);
        fs::create_directories(out);
        ensure_writable(out / "checkpoint.mmp", ft_force);
        mmpath::Task task = mmpath::parse_task(ft_task);
        mmpath::World world = mmpath::load_world(ft_data);
        auto labels = mmpath::load_labels(fs::path(ft_data) / "labels.csv");
        auto lm = mmpath::load_model(ft_ckpt);
        // flags may adjust the fine-tuning schedule of a loaded model
        lm.model.cfg.finetune_epochs = cfg.finetune_epochs;
        lm.model.cfg.finetune_lr = cfg.finetune_lr;
        lm.model.cfg.freeze_encoder = cfg.freeze_encoder;
        lm.model.cfg.workers = cfg.workers;
        auto [train_idx, test_idx] = mmpath::split_paths(world, lm.model.cfg.train_frac);
        mmpath::Dataset train = mmpath::prepare_dataset(world, lm.model.dims, train_idx,
                                                        lm.model.cfg.workers);
        auto result = mmpath::finetune(lm.model, train, labels, task);
        json extras = {{"task", mmpath::task_name(task)},
                       {"label_mean", result.label_mean},
                       {"label_std", result.label_std},
                       {"head_d_in", (lm.model.cfg.ablation == "y_only" ||
                                      lm.model.cfg.ablation == "z_only")
                                         ? lm.model.cfg.d
                                         : 2 * lm.model.cfg.d}};
        mmpath::save_model(lm.model, out / "checkpoint.mmp", extras, lm.meta.rng_state);
        write_resolved_config(out,
                              resolved_train_json("finetune", lm.model.cfg,
                                                  {{"data", ft_data},
                                                   {"ckpt", ft_ckpt},
                                                   {"task", ft_task}}),
                              ft_force);
        if (!result.loss_log.empty()) {
            std::cout << "fine-tuned " << result.loss_log.size() << " epochs, final loss "
                      << mmpath::format_num(result.loss_log.back().second) << "\n";
        }
        std::cout << "checkpoint: " << (out / "checkpoint.mmp").string() << "\n";
        return 0;
    }

    if (ev->parsed()) {
        mmpath::World world = mmpath::load_world(ev_data);
        auto labels = mmpath::load_labels(fs::path(ev_data) / "labels.csv");
        auto lm = mmpath::load_model(ev_ckpt);
        if (!lm.meta.extras.contains("task")) {
            throw mmpath::ConfigError("checkpoint has no task head; run finetune first");
        }
        mmpath::Task task = mmpath::parse_task(lm.meta.extras.at("task").get<std::string>());
        mmpath::HeadScaling scaling{lm.meta.extras.at("label_mean").get<double>(),
                                    lm.meta.extras.at("label_std").get<double>()};
        auto [train_idx, test_idx] = mmpath::split_paths(world, lm.model.cfg.train_frac);
        const auto& idx = ev_split == "train" ? train_idx : test_idx;
        if (idx.empty()) throw mmpath::InputError("selected split '" + ev_split + "' is empty");
        mmpath::Dataset data = mmpath::prepare_dataset(world, lm.model.dims, idx,
                                                       lm.model.cfg.workers);
        mmpath::Metrics m = mmpath::evaluate(lm.model, data, labels, task, scaling);
        std::cout << "task=" << mmpath::task_name(task) << " split=" << ev_split
                  << " n=" << m.n << " mae=" << mmpath::format_num(m.mae)
                  << " mare=" << mmpath::format_num(m.mare)
                  << " mape=" << mmpath::format_num(m.mape)
                  << " tau=" << mmpath::format_num(m.tau)
                  << " rho=" << mmpath::format_num(m.rho) << "\n";
        if (!ev_out.empty()) {
            fs::create_directories(ev_out);
            mmpath::append_metrics_row(fs::path(ev_out) / "metrics.csv",
                                       lm.model.cfg.ablation, task, m);
        }
        return 0;
    }

    if (ab->parsed()) {
        cfg.validate();
        fs::path out = default_out("ablate", ab_out);
        fs::create_directories(out);
        ensure_writable(out / "metrics.csv", ab_force);
        fs::remove(out / "metrics.csv"); // append_metrics_row rebuilds it
        mmpath::Task task = mmpath::parse_task(ab_task);
        mmpath::World world = mmpath::load_world(ab_data);
        auto labels = mmpath::load_labels(fs::path(ab_data) / "labels.csv");
        std::vector<std::string> variants;
        if (ab_variants == "all") {
            variants = mmpath::kVariants;
        } else {
            std::stringstream ss(ab_variants);
            std::string v;
            while (std::getline(ss, v, ',')) {
                if (!v.empty()) variants.push_back(v);
            }
        }
        auto rows = mmpath::ablate(world, labels, variants, cfg, task);
        for (const auto& row : rows) {
            mmpath::append_metrics_row(out / "metrics.csv", row.variant, row.task, row.metrics);
            std::cout << row.variant << ": mae=" << mmpath::format_num(row.metrics.mae)
                      << " mape=" << mmpath::format_num(row.metrics.mape)
                      << " tau=" << mmpath::format_num(row.metrics.tau) << "\n";
        }
        write_resolved_config(out,
                              resolved_train_json("ablate", cfg,
                                                  {{"data", ab_data},
                                                   {"task", ab_task},
                                                   {"variants", ab_variants}}),
                              ab_force);
        return 0;
    }

    if (gd->parsed()) {
        mmpath::World world = mmpath::load_world(gd_data);
        const mmpath::RoadPath* path = nullptr;
        for (const auto& p : world.paths) {
            if (p.path_id == gd_path_id) path = &p;
        }
        if (!path) throw mmpath::DomainError("unknown path_id " + std::to_string(gd_path_id));
        auto image_path = mmpath::derive_image_path(*path, world.network, world.grid);
        auto road_seq = mmpath::tokenize_road(*path, image_path);
        auto image_seq = mmpath::tokenize_image(image_path, world.grid, gd_patch_o);
        auto corr = mmpath::build_correspondence(road_seq, image_seq, *path, world.network,
                                                 world.grid, gd_patch_o);
        auto graph = mmpath::build_graph(road_seq, image_seq, corr);
        ensure_writable(gd_out, gd_force);
        std::ofstream f(gd_out);
        if (!f) throw mmpath::InputError("cannot write " + gd_out);
        f << mmpath::graph_dump_json(graph);
        std::cout << "wrote " << gd_out << "\n";
        return 0;
    }

    if (rep->parsed()) {
        mmpath::write_report(rep_run);
        std::cout << "wrote " << (fs::path(rep_run) / "report.md").string() << "\n";
        return 0;
    }

    std::cout << app.help();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const mmpath::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const mmpath::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
