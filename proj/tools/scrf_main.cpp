// Command-line front end for the cross-receiver adaptation lab.
//
// Exit codes: 0 success, 2 config errors, 3 data-format errors, 4 runtime
// failures. CLI usage errors use CLI11's own nonzero codes.

#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "scrf/adapt_engine.hpp"
#include "scrf/harness.hpp"
#include "scrf/nn_core.hpp"
#include "scrf/signal_sim.hpp"

namespace {

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const scrf::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const scrf::FormatError& e) {
        std::fprintf(stderr, "data format error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
}

void print_summary(const scrf::harness::RunResult& result) {
    std::printf("results written to %s\n", result.output_dir.c_str());
    for (const auto& s : result.summary)
        std::printf("  %-12s seeds=%zu  acc %s%% +- %s%%\n", s.variant.c_str(), s.n_seeds,
                    scrf::harness::format_pct(s.mean_pct).c_str(), scrf::harness::format_pct(s.std_pct).c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"source-data-free cross-receiver RF fingerprint adaptation lab"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, data_path, out_path, dir_path, axis;
    std::string values_csv;

    auto* generate = app.add_subcommand("generate", "synthesize SCRF dataset files from a config");
    generate->add_option("--config", config_path, "experiment config file")->required();

    auto* train = app.add_subcommand("train-source", "train the source classifier and save a checkpoint");
    train->add_option("--config", config_path)->required();
    std::uint64_t train_seed = 1;
    train->add_option("--seed", train_seed, "training seed");
    train->add_option("--out", out_path, "checkpoint path")->required();

    auto* adapt_cmd = app.add_subcommand("adapt", "adapt a source checkpoint to a target receiver");
    adapt_cmd->add_option("--config", config_path)->required();
    std::string source_ckpt, variant_name = "ms_shot";
    std::uint64_t adapt_seed = 1;
    adapt_cmd->add_option("--source-ckpt", source_ckpt, "source model checkpoint")->required();
    adapt_cmd->add_option("--variant", variant_name, "ms_shot|shot|nn_l1|soft|nn_l1_soft");
    adapt_cmd->add_option("--seed", adapt_seed);
    adapt_cmd->add_option("--out-dir", out_path, "directory for the adapted model and trace")->required();

    auto* evaluate = app.add_subcommand("evaluate", "accuracy of a checkpoint on a labeled SCRF file");
    evaluate->add_option("--ckpt", ckpt_path)->required();
    evaluate->add_option("--data", data_path)->required();

    auto* run = app.add_subcommand("run", "variant x seed grid: train, adapt, evaluate, persist tables");
    run->add_option("--config", config_path)->required();

    auto* ablate = app.add_subcommand("ablate", "the five-row component ablation on shared data and seeds");
    ablate->add_option("--config", config_path)->required();

    auto* sweep = app.add_subcommand("sweep", "one-factor-at-a-time hyper-parameter sweep");
    sweep->add_option("--config", config_path)->required();
    sweep->add_option("--axis", axis, "lambda1|lambda2|lambda3|beta|tau|snr|num_classes")->required();
    sweep->add_option("--values", values_csv, "comma-separated sweep values")->required();

    auto* exportf = app.add_subcommand("export-features", "eval-mode feature matrix as delimited text");
    exportf->add_option("--ckpt", ckpt_path)->required();
    exportf->add_option("--data", data_path)->required();
    exportf->add_option("--out", out_path)->required();

    auto* verify = app.add_subcommand("verify-results", "recompute result rows from persisted traces");
    verify->add_option("--dir", dir_path, "output directory of a previous run")->required();

    CLI11_PARSE(app, argc, argv);

    if (generate->parsed()) {
        return guarded([&] {
            scrf::harness::run_generate(scrf::harness::load_config(config_path));
            return 0;
        });
    }
    if (train->parsed()) {
        return guarded([&] {
            const auto cfg = scrf::harness::load_config(config_path);
            const auto data = scrf::harness::build_datasets(cfg);
            scrf::adapt::SourceTrainConfig scfg;
            scfg.epochs = cfg.source_epochs;
            scfg.lr = cfg.source_lr;
            scfg.batch_size = cfg.source_batch;
            scfg.seed = train_seed;
            scfg.arch.input_len = cfg.record_len;
            scfg.arch.num_classes = static_cast<std::uint32_t>(cfg.k);
            auto model = scrf::adapt::train_source(data.source_train, scfg);
            scrf::nn::save_checkpoint(model, out_path);
            std::printf("source accuracy (in-domain eval): %.4f\n",
                        scrf::adapt::evaluate_accuracy(model, data.source_eval));
            std::printf("checkpoint: %s\n", out_path.c_str());
            return 0;
        });
    }
    if (adapt_cmd->parsed()) {
        return guarded([&] {
            auto cfg = scrf::harness::load_config(config_path);
            cfg.variants = {variant_name};
            cfg.seeds = {adapt_seed};
            cfg.output_dir = out_path;
            // reuse the provided checkpoint instead of retraining when arch matches
            const auto data = scrf::harness::build_datasets(cfg);
            auto source = scrf::nn::load_checkpoint(source_ckpt);
            scrf::adapt::AdaptConfig acfg = cfg.adapt_cfg;
            acfg.seed = adapt_seed;
            acfg.gamma = cfg.gamma_frac * static_cast<double>(data.target_adapt.size());
            if (acfg.prior_mode == scrf::adapt::PriorMode::Known) {
                scrf::losses::PriorVector p;
                p.counts = cfg.known_prior_counts;
                acfg.known_prior = p;
            }
            auto res = scrf::adapt::adapt(source, data.target_adapt, acfg,
                                          scrf::harness::variant_by_name(variant_name), &data.target_eval);
            std::filesystem::create_directories(out_path);
            scrf::nn::save_checkpoint(res.model, out_path + "/adapted.ckpt");
            std::vector<double> accs;
            for (const auto& r : res.reports)
                if (r.accuracy) accs.push_back(*r.accuracy);
            const auto stats = scrf::harness::window_stats(accs);
            std::printf("adapted accuracy (last-5 window): %s%% +- %s%%\n",
                        scrf::harness::format_pct(stats.mean_pct).c_str(),
                        scrf::harness::format_pct(stats.std_pct).c_str());
            return 0;
        });
    }
    if (evaluate->parsed()) {
        return guarded([&] {
            auto model = scrf::nn::load_checkpoint(ckpt_path);
            const auto ds = scrf::sim::read_dataset(data_path);
            std::printf("accuracy: %.4f\n", scrf::adapt::evaluate_accuracy(model, ds.records));
            return 0;
        });
    }
    if (run->parsed()) {
        return guarded([&] {
            print_summary(scrf::harness::run_experiment(scrf::harness::load_config(config_path)));
            return 0;
        });
    }
    if (ablate->parsed()) {
        return guarded([&] {
            print_summary(scrf::harness::run_ablation(scrf::harness::load_config(config_path)));
            return 0;
        });
    }
    if (sweep->parsed()) {
        return guarded([&] {
            std::vector<double> values;
            for (const auto& part : [&] {
                     std::vector<std::string> parts;
                     std::string cur;
                     for (char c : values_csv) {
                         if (c == ',') {
                             parts.push_back(cur);
                             cur.clear();
                         } else
                             cur.push_back(c);
                     }
                     parts.push_back(cur);
                     return parts;
                 }())
                values.push_back(std::stod(part));
            const auto cells = scrf::harness::run_sweep(scrf::harness::load_config(config_path), axis, values);
            for (const auto& c : cells)
                std::printf("%s=%g  acc %s%% +- %s%%\n", axis.c_str(), c.value,
                            scrf::harness::format_pct(c.summary.mean_pct).c_str(),
                            scrf::harness::format_pct(c.summary.std_pct).c_str());
            return 0;
        });
    }
    if (exportf->parsed()) {
        return guarded([&] {
            scrf::harness::export_features(ckpt_path, data_path, out_path);
            return 0;
        });
    }
    if (verify->parsed()) {
        return guarded([&] {
            std::string report;
            const bool ok = scrf::harness::verify_results(dir_path, &report);
            if (!ok) {
                std::fprintf(stderr, "verification FAILED:\n%s", report.c_str());
                return 4;
            }
            std::printf("all result rows match their traces\n");
            return 0;
        });
    }
    return 0;
}
