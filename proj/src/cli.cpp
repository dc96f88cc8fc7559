#include "fcdd/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "fcdd/data.hpp"
#include "fcdd/eval.hpp"
#include "fcdd/gradcheck.hpp"
#include "fcdd/pipeline.hpp"
#include "fcdd/scoring.hpp"
#include "fcdd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fcdd {

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }
    return j;
}

SynthConfig synth_from_json(const json& j) {
    SynthConfig cfg;
    cfg.n_normal = j.value("n_normal", cfg.n_normal);
    cfg.n_anomalous = j.value("n_anomalous", cfg.n_anomalous);
    cfg.n_test_normal = j.value("n_test_normal", cfg.n_test_normal);
    cfg.n_test_anomalous = j.value("n_test_anomalous", cfg.n_test_anomalous);
    cfg.channels = j.value("channels", cfg.channels);
    cfg.h = j.value("h", cfg.h);
    cfg.w = j.value("w", cfg.w);
    cfg.blob_sigma_min = j.value("blob_sigma_min", cfg.blob_sigma_min);
    cfg.blob_sigma_max = j.value("blob_sigma_max", cfg.blob_sigma_max);
    cfg.amplitude = j.value("amplitude", cfg.amplitude);
    cfg.smooth_radius = j.value("smooth_radius", cfg.smooth_radius);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

NetworkConfig model_from_json(const json& cfg) {
    json m = cfg.value("model", json::object());
    int c = 3, h = 64, w = 64;
    if (m.contains("input")) {
        c = m["input"].at(0).get<int>();
        h = m["input"].at(1).get<int>();
        w = m["input"].at(2).get<int>();
    }
    const std::string preset = m.value("preset", std::string("desk_default"));
    NetworkConfig net;
    if (m.contains("layers")) {
        json full = m;
        full["in"] = {c, h, w};
        net = NetworkConfig::from_json(full);
    } else if (preset == "desk_default") {
        net = NetworkConfig::desk_default(c, h, w);
    } else if (preset == "desk_small") {
        net = NetworkConfig::desk_small(c, h, w);
    } else {
        throw std::runtime_error("model.preset: unknown preset '" + preset + "'");
    }
    net.train_centre = m.value("train_centre", true);
    return net;
}

TrainConfig train_from_json(const json& cfg) {
    json t = cfg.value("train", json::object());
    TrainConfig tc;
    tc.mode = train_mode_from_string(t.value("mode", std::string("unsup_no_anom")));
    tc.gamma = t.value("gamma", tc.gamma);
    tc.lr = t.value("lr", tc.lr);
    tc.momentum = t.value("momentum", tc.momentum);
    tc.weight_decay = t.value("weight_decay", tc.weight_decay);
    tc.epochs = t.value("epochs", tc.epochs);
    tc.batch_size = t.value("batch_size", tc.batch_size);
    tc.n_instances = t.value("n_instances", tc.n_instances);
    tc.base_seed = t.value("base_seed", tc.base_seed);
    tc.skip_policy = skip_policy_from_string(t.value("skip_policy", std::string("error")));
    if (t.contains("sigma") && !t["sigma"].is_null()) tc.sigma = t["sigma"].get<double>();
    return tc;
}

DatasetSplit dataset_from_config(const json& cfg) {
    const json d = cfg.value("dataset", json::object());
    if (d.contains("root") && !d["root"].get<std::string>().empty())
        return load_dataset(d["root"].get<std::string>());
    if (d.contains("synth")) return synth_generate(synth_from_json(d["synth"]));
    throw std::runtime_error("config needs dataset.root or dataset.synth");
}

void set_if(json& j, const char* a, const char* b, const std::optional<std::string>& v) {
    if (v) j[a][b] = *v;
}

struct CommonOpts {
    std::string config_path;
    std::optional<std::string> data_root, out_dir, mode, skip_policy;
    std::optional<double> gamma, lr, sigma;
    std::optional<int> epochs, batch_size, instances;
    std::optional<std::uint64_t> base_seed;

    void add_to(CLI::App* app, bool with_train) {
        app->add_option("--config", config_path, "JSON config file");
        app->add_option("--data", data_root, "dataset root directory (overrides dataset.root)");
        app->add_option("--out", out_dir, "output directory (overrides out_dir)");
        if (with_train) {
            app->add_option("--mode", mode, "training mode (overrides train.mode)");
            app->add_option("--gamma", gamma, "focal gamma (overrides train.gamma)");
            app->add_option("--lr", lr, "learning rate (overrides train.lr)");
            app->add_option("--epochs", epochs, "epochs (overrides train.epochs)");
            app->add_option("--batch-size", batch_size, "batch size (overrides train.batch_size)");
            app->add_option("--instances", instances, "model instances (overrides train.n_instances)");
            app->add_option("--seed", base_seed, "base seed (overrides train.base_seed)");
            app->add_option("--skip-policy", skip_policy,
                            "error|skip_batch (overrides train.skip_policy)");
            app->add_option("--sigma", sigma, "heatmap upsampling sigma (overrides train.sigma)");
        }
    }

    json merged() const {
        json cfg = load_config(config_path);
        set_if(cfg, "dataset", "root", data_root);
        if (out_dir) cfg["out_dir"] = *out_dir;
        set_if(cfg, "train", "mode", mode);
        set_if(cfg, "train", "skip_policy", skip_policy);
        if (gamma) cfg["train"]["gamma"] = *gamma;
        if (lr) cfg["train"]["lr"] = *lr;
        if (sigma) cfg["train"]["sigma"] = *sigma;
        if (epochs) cfg["train"]["epochs"] = *epochs;
        if (batch_size) cfg["train"]["batch_size"] = *batch_size;
        if (instances) cfg["train"]["n_instances"] = *instances;
        if (base_seed) cfg["train"]["base_seed"] = *base_seed;
        return cfg;
    }
};

fs::path require_out_dir(const json& cfg) {
    if (!cfg.contains("out_dir")) throw std::runtime_error("out_dir is required (--out)");
    fs::path p = cfg["out_dir"].get<std::string>();
    fs::create_directories(p);
    return p;
}

int run_train(const json& cfg, bool ae_mode) {
    const fs::path out = require_out_dir(cfg);
    DatasetSplit split = dataset_from_config(cfg);
    const TrainConfig tc = train_from_json(cfg);

    std::vector<TrainLog> logs;
    if (ae_mode) {
        const DatasetSplit normals = normals_only_train(split);
        AutoencoderConfig acfg = AutoencoderConfig::desk_default(
            normals.train.at(0).image.shape().c, model_from_json(cfg).in_h,
            model_from_json(cfg).in_w);
        auto trained = train_autoencoder(normals, acfg, tc);
        for (std::size_t k = 0; k < trained.size(); ++k) {
            const fs::path enc = out / ("ckpt_" + std::to_string(k) + "_enc.occm");
            const fs::path dec = out / ("ckpt_" + std::to_string(k) + "_dec.occm");
            save_checkpoint(enc, trained[k].ae.encoder, trained[k].meta);
            save_checkpoint(dec, trained[k].ae.decoder, trained[k].meta);
            trained[k].log.checkpoint_path = enc.string();
            logs.push_back(trained[k].log);
            std::cout << "instance " << k << ": final reconstruction loss "
                      << trained[k].log.epochs.back().mean_loss << "\n";
        }
    } else {
        const NetworkConfig netcfg = model_from_json(cfg);
        auto trained = train(split, netcfg, tc);
        for (std::size_t k = 0; k < trained.size(); ++k) {
            const fs::path p = out / ("ckpt_" + std::to_string(k) + ".occm");
            save_checkpoint(p, trained[k].net, trained[k].meta);
            trained[k].log.checkpoint_path = p.string();
            logs.push_back(trained[k].log);
            std::cout << "instance " << k << ": final mean loss "
                      << trained[k].log.epochs.back().mean_loss << "\n";
        }
    }
    write_train_log_jsonl(out / "train_log.jsonl", logs);
    std::cout << "checkpoints and train_log.jsonl written to " << out << "\n";
    return 0;
}

int run_eval(const json& cfg, bool gtmap) {
    const fs::path out = require_out_dir(cfg);
    DatasetSplit split = dataset_from_config(cfg);

    // collect checkpoints: ckpt_<k>.occm or AE pairs ckpt_<k>_enc/_dec.occm
    std::vector<LoadedCheckpoint> models;
    std::vector<std::pair<LoadedCheckpoint, LoadedCheckpoint>> ae_models;
    for (int k = 0;; ++k) {
        const fs::path p = out / ("ckpt_" + std::to_string(k) + ".occm");
        const fs::path enc = out / ("ckpt_" + std::to_string(k) + "_enc.occm");
        if (fs::exists(p)) {
            models.push_back(load_checkpoint(p));
        } else if (fs::exists(enc)) {
            const fs::path dec = out / ("ckpt_" + std::to_string(k) + "_dec.occm");
            ae_models.emplace_back(load_checkpoint(enc), load_checkpoint(dec));
        } else {
            break;
        }
    }
    if (models.empty() && ae_models.empty())
        throw std::runtime_error("no checkpoints found under " + out.string());

    std::vector<Autoencoder> aes;
    for (auto& [enc, dec] : ae_models) aes.push_back(Autoencoder{enc.net, dec.net});

    std::vector<SampleScorer> scorers;
    for (auto& m : models) scorers.push_back(make_fcdd_scorer(m.net, m.meta));
    for (std::size_t i = 0; i < aes.size(); ++i)
        scorers.push_back(make_ae_scorer(aes[i], ae_models[i].first.meta));

    json metadata;
    metadata["n_instances"] = scorers.size();
    metadata["kind"] = models.empty() ? "autoencoder" : "fcdd";
    if (cfg.contains("train")) metadata["mode"] = cfg["train"].value("mode", "");

    EvalReport report = evaluate_experiment(scorers, split.test, metadata);

    for (std::size_t k = 0; k < scorers.size(); ++k) {
        std::vector<double> scores;
        for (const Sample& s : split.test) scores.push_back(scorers[k](s));
        write_scores_csv(out / ("scores_" + std::to_string(k) + ".csv"), split.test, scores);
    }

    if (gtmap && !models.empty()) {
        json gt = json::array();
        for (auto& m : models) {
            std::vector<Raster> heatmaps, maps;
            for (const Sample& s : split.test) {
                if (!s.map) continue;
                const Raster input =
                    preprocess_image(s.image, m.meta.channel_mean, m.meta.channel_std,
                                     m.net.config().in_h, m.net.config().in_w);
                heatmaps.push_back(fcdd_heatmaps(m.net, input, m.meta.sigma));
                maps.push_back(preprocess_map(*s.map, m.net.config().in_h, m.net.config().in_w));
            }
            gt.push_back(gtmap_auc(heatmaps, maps));
        }
        report.metadata["gtmap_auc"] = gt;
    }

    std::ofstream os(out / "eval_report.json");
    os << report.to_json().dump(2) << "\n";
    std::cout << "mean AUC " << report.auc_mean << " (std " << report.auc_std
              << "), mean optimal accuracy " << report.acc_mean << "\n";
    std::cout << "eval_report.json and score CSVs written to " << out << "\n";
    return 0;
}

int run_sweep(const json& cfg, const std::vector<int>& counts) {
    const fs::path out = require_out_dir(cfg);
    DatasetSplit split = dataset_from_config(cfg);
    const NetworkConfig netcfg = model_from_json(cfg);
    const TrainConfig tc = train_from_json(cfg);

    json summary = json::array();
    for (int count : counts) {
        const DatasetSplit sub = with_train_anomaly_count(split, count);
        auto trained = train(sub, netcfg, tc);

        std::vector<SampleScorer> scorers;
        for (auto& t : trained) scorers.push_back(make_fcdd_scorer(t.net, t.meta));
        json metadata;
        metadata["train_anomalies"] = count;
        metadata["mode"] = to_string(tc.mode);
        EvalReport report = evaluate_experiment(scorers, sub.test, metadata);

        const fs::path dir = out / ("sweep_" + std::to_string(count));
        fs::create_directories(dir);
        std::ofstream os(dir / "eval_report.json");
        os << report.to_json().dump(2) << "\n";

        summary.push_back({{"train_anomalies", count},
                           {"auc_mean", report.auc_mean},
                           {"auc_std", report.auc_std},
                           {"accuracy_mean", report.acc_mean}});
        std::cout << "anomalies " << count << ": mean AUC " << report.auc_mean << "\n";
    }
    std::ofstream os(out / "sweep_summary.json");
    os << summary.dump(2) << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Two-stage insulator inspection: one-class anomaly detection stage"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic blob dataset");
    CommonOpts synth_opts;
    synth_opts.add_to(synth, false);
    std::optional<std::uint64_t> synth_seed;
    synth->add_option("--seed", synth_seed, "generator seed (overrides dataset.synth.seed)");

    // train
    auto* train_cmd = app.add_subcommand("train", "train model instances");
    CommonOpts train_opts;
    train_opts.add_to(train_cmd, true);
    bool train_ae = false;
    train_cmd->add_flag("--ae", train_ae, "train the autoencoder baseline (normals only)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on the test split");
    CommonOpts eval_opts;
    eval_opts.add_to(eval_cmd, true);
    bool eval_gtmap = false;
    eval_cmd->add_flag("--gtmap", eval_gtmap, "also compute pixel-level GTMAP AUC");

    // inspect
    auto* inspect_cmd = app.add_subcommand("inspect", "score detector crops of one aerial image");
    std::string image_path, boxes_path, checkpoint_path, inspect_out;
    double threshold = 0.0;
    std::string threshold_source = "user";
    inspect_cmd->add_option("--image", image_path, "aerial image (png)")->required();
    inspect_cmd->add_option("--boxes", boxes_path, "detector boxes file")->required();
    inspect_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    inspect_cmd->add_option("--threshold", threshold, "decision threshold")->required();
    inspect_cmd->add_option("--threshold-source", threshold_source,
                            "where the threshold came from (recorded in the report)");
    inspect_cmd->add_option("--out", inspect_out, "output directory")->required();

    // gradcheck
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "run the finite-difference suite");
    int gc_instances = 20;
    gradcheck_cmd->add_option("--instances", gc_instances, "random instances per check");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "train/eval across anomaly counts");
    CommonOpts sweep_opts;
    sweep_opts.add_to(sweep_cmd, true);
    std::vector<int> sweep_counts;
    sweep_cmd->add_option("--anomalies", sweep_counts, "training anomaly counts")
        ->required()
        ->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) {
            const json cfg = synth_opts.merged();
            const fs::path out = require_out_dir(cfg);
            SynthConfig sc = synth_from_json(cfg.value("dataset", json::object())
                                                 .value("synth", json::object()));
            if (synth_seed) sc.seed = *synth_seed;
            const DatasetSplit split = synth_generate(sc);
            save_dataset(split, out, sc.seed);
            std::cout << "dataset written to " << out << " (" << split.train.size()
                      << " train / " << split.test.size() << " test samples)\n";
            return 0;
        }
        if (train_cmd->parsed()) return run_train(train_opts.merged(), train_ae);
        if (eval_cmd->parsed()) return run_eval(eval_opts.merged(), eval_gtmap);
        if (inspect_cmd->parsed()) {
            const InspectionReport report = inspect(image_path, boxes_path, checkpoint_path,
                                                    threshold, threshold_source, inspect_out);
            std::cout << "inspected " << report.image_id << ": " << report.disks.size()
                      << " disks, " << report.n_anomalous << " anomalous\n";
            return 0;
        }
        if (gradcheck_cmd->parsed()) {
            const auto cases = nd::run_gradcheck_suite(gc_instances);
            bool all = true;
            for (const auto& c : cases) {
                std::cout << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << ": max rel err "
                          << c.max_rel_err << " (tol " << c.tolerance << ")\n";
                all = all && c.passed;
            }
            return all ? 0 : 1;
        }
        if (sweep_cmd->parsed()) return run_sweep(sweep_opts.merged(), sweep_counts);
    } catch (const TrainPathologyError& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace fcdd
