#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scrf/adapt_engine.hpp"
#include "scrf/signal_sim.hpp"

namespace scrf::harness {

// Per-class sample counts: either one value applied to every class or an
// explicit length-K list.
struct CountSpec {
    std::vector<std::uint32_t> values = {100};
    std::vector<std::uint32_t> resolve(int k) const;
};

struct ExperimentConfig {
    std::string task_id;
    int k = 6;
    std::uint32_t record_len = 256;
    sim::Modulation modulation = sim::Modulation::BFSK;
    std::uint64_t data_seed = 1;
    double emitter_scale = 1.0;
    double emitter_min_sep = 1e-4;
    std::vector<sim::cplx> channel_taps = {sim::cplx(1.0, 0.0)};
    bool channel_normalize = false;
    sim::ReceiverProfile source_rx;
    sim::ReceiverProfile target_rx;
    CountSpec source_counts{{100}};
    CountSpec target_counts{{100}};
    CountSpec eval_counts{{50}};
    CountSpec source_eval_counts{{50}};

    int source_epochs = 7;
    double source_lr = 0.0006;
    int source_batch = 64;

    adapt::AdaptConfig adapt_cfg; // paper defaults; seed filled per run
    double gamma_frac = 0.05;     // gamma = gamma_frac * N^t
    std::vector<double> known_prior_counts; // required iff prior_mode = known

    double vc_dim = 64.0;
    double rho = 0.05;

    std::vector<std::string> variants = {"source_only", "ms_shot"};
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string output_dir;
    int workers = 1;
};

// key = value lines, '#' comments, unknown keys rejected with line numbers.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
ExperimentConfig load_config(const std::string& path);

// Deterministic emitter fingerprint table used when profiles are not given
// explicitly: classes are spread across the polynomial, imbalance, skew and
// CFO axes, scaled by `scale`.
sim::EmitterProfile auto_emitter(int class_index, int k, double scale);

struct TaskData {
    sim::DatasetSpec source_spec, target_spec;
    std::vector<sim::IQRecord> source_train;
    std::vector<sim::IQRecord> target_adapt;  // unlabeled
    std::vector<sim::IQRecord> target_eval;   // labeled, reporting only
    std::vector<sim::IQRecord> source_eval;   // labeled, in-domain reference
    std::string dataset_hash;                 // fnv over serialized bytes
};
TaskData build_datasets(const ExperimentConfig& cfg);

struct ResultRow {
    std::string task_id;
    std::string variant;
    std::uint64_t seed = 0;
    double acc_mean_pct = 0.0; // mean over the last-5-epoch window
    double acc_std_pct = 0.0;
    double final_epoch_pct = 0.0;
    std::string trace_ref; // relative to the output dir
    std::string dataset_hash;
};

struct SummaryRow {
    std::string variant;
    std::size_t n_seeds = 0;
    double mean_pct = 0.0; // mean over per-seed window means
    double std_pct = 0.0;  // std over per-seed window means
};

struct RunResult {
    std::vector<ResultRow> rows;
    std::vector<SummaryRow> summary;
    std::string output_dir;
    std::string dataset_hash;
};

struct WindowStats {
    double mean_pct = 0.0;
    double std_pct = 0.0;
    double final_pct = 0.0;
};
WindowStats window_stats(const std::vector<double>& accuracy_fractions, std::size_t window = 5);

adapt::AdaptVariant variant_by_name(const std::string& name);
bool variant_is_source_only(const std::string& name);

// generate / run / ablate / sweep subcommand cores. All of them honor the
// SCRF_OUTPUT_DIR and SCRF_WORKERS environment overrides and write result
// tables plus per-cell traces under the output dir.
void run_generate(const ExperimentConfig& cfg);
RunResult run_experiment(const ExperimentConfig& cfg);
RunResult run_ablation(const ExperimentConfig& cfg);

struct SweepCell {
    double value = 0.0;
    SummaryRow summary;
    std::string subdir;
};
std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                 const std::vector<double>& values);

void export_features(const std::string& ckpt_path, const std::string& data_path, const std::string& out_path);

// Recomputes every row's window statistics from its persisted trace and
// compares against the result table. Returns false on any mismatch.
bool verify_results(const std::string& dir, std::string* report = nullptr);

std::string format_pct(double pct);

}  // namespace scrf::harness
