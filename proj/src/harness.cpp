#include "scrf/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "scrf/nn_core.hpp"
#include "scrf/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace scrf::harness {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

[[noreturn]] void cfg_fail(const std::string& origin, int line, const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
}

double to_double(const std::string& v, const std::string& origin, int line) {
    const std::string t = trim(v);
    if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
    try {
        std::size_t used = 0;
        const double d = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        cfg_fail(origin, line, "cannot parse number '" + t + "'");
    }
}

long long to_int(const std::string& v, const std::string& origin, int line) {
    const std::string t = trim(v);
    try {
        std::size_t used = 0;
        const long long i = std::stoll(t, &used);
        if (used != t.size()) throw std::invalid_argument("trailing characters");
        return i;
    } catch (const std::exception&) {
        cfg_fail(origin, line, "cannot parse integer '" + t + "'");
    }
}

bool to_bool(const std::string& v, const std::string& origin, int line) {
    const std::string t = trim(v);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    cfg_fail(origin, line, "cannot parse boolean '" + t + "'");
}

sim::cplx to_complex(const std::string& v, const std::string& origin, int line) {
    std::string t = trim(v);
    if (t.empty()) cfg_fail(origin, line, "empty complex value");
    bool has_i = t.back() == 'i';
    if (has_i) t.pop_back();
    if (!has_i) return sim::cplx(to_double(t, origin, line), 0.0);
    // split a+bi into real and imaginary parts at the last sign not in an exponent
    for (std::size_t p = t.size(); p-- > 1;) {
        if ((t[p] == '+' || t[p] == '-') && t[p - 1] != 'e' && t[p - 1] != 'E') {
            const double re = to_double(t.substr(0, p), origin, line);
            const double im = to_double(t.substr(p), origin, line);
            return sim::cplx(re, im);
        }
    }
    return sim::cplx(0.0, to_double(t, origin, line)); // pure imaginary
}

CountSpec to_counts(const std::string& v, const std::string& origin, int line) {
    CountSpec spec;
    spec.values.clear();
    for (const auto& part : split(v, ',')) {
        const long long n = to_int(part, origin, line);
        if (n < 0) cfg_fail(origin, line, "sample counts must be >= 0");
        spec.values.push_back(static_cast<std::uint32_t>(n));
    }
    return spec;
}

void apply_snr(sim::ReceiverProfile& rx, const std::string& v, const std::string& origin, int line) {
    const auto parts = split(v, ',');
    if (parts.size() == 1) {
        rx.snr_lo_db = rx.snr_hi_db = to_double(parts[0], origin, line);
    } else if (parts.size() == 2) {
        rx.snr_lo_db = to_double(parts[0], origin, line);
        rx.snr_hi_db = to_double(parts[1], origin, line);
    } else {
        cfg_fail(origin, line, "snr_db wants 'value' or 'lo,hi'");
    }
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError("cannot open for writing: " + tmp);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw FormatError("short write: " + tmp);
    }
    fs::rename(tmp, path);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

int env_workers(int fallback) {
    if (const char* w = std::getenv("SCRF_WORKERS")) {
        const int v = std::atoi(w);
        if (v > 0) return v;
    }
    return fallback;
}

std::string env_output_dir(const std::string& fallback) {
    if (const char* d = std::getenv("SCRF_OUTPUT_DIR")) {
        if (*d) return d;
    }
    return fallback;
}

nn::ArchDescriptor make_arch(const ExperimentConfig& cfg) {
    nn::ArchDescriptor arch;
    arch.input_len = cfg.record_len;
    arch.in_channels = 2;
    arch.conv_channels = {8, 16, 32};
    arch.feat_dim = 64;
    arch.num_classes = static_cast<std::uint32_t>(cfg.k);
    return arch;
}

const char* prior_mode_name(adapt::PriorMode m) {
    switch (m) {
        case adapt::PriorMode::Known: return "known";
        case adapt::PriorMode::Uniform: return "uniform";
        case adapt::PriorMode::Estimate: return "estimate";
    }
    return "?";
}

}  // namespace

std::vector<std::uint32_t> CountSpec::resolve(int k) const {
    if (values.size() == 1) return std::vector<std::uint32_t>(static_cast<std::size_t>(k), values[0]);
    if (values.size() != static_cast<std::size_t>(k))
        throw ConfigError("count list must have 1 or K entries (got " + std::to_string(values.size()) + ", K=" +
                          std::to_string(k) + ")");
    return values;
}

std::string format_pct(double pct) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", pct);
    return buf;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    bool saw_task_id = false;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = raw;
        const std::size_t hash = s.find('#');
        if (hash != std::string::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos) cfg_fail(origin, line, "expected 'key = value'");
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (key.empty()) cfg_fail(origin, line, "empty key");

        if (key == "task_id") {
            if (value.empty()) cfg_fail(origin, line, "task_id must not be empty");
            cfg.task_id = value;
            saw_task_id = true;
        } else if (key == "k") {
            cfg.k = static_cast<int>(to_int(value, origin, line));
            if (cfg.k < 2) cfg_fail(origin, line, "k must be >= 2");
        } else if (key == "record_len") {
            cfg.record_len = static_cast<std::uint32_t>(to_int(value, origin, line));
        } else if (key == "modulation") {
            if (value == "bfsk") cfg.modulation = sim::Modulation::BFSK;
            else if (value == "qpsk") cfg.modulation = sim::Modulation::QPSK;
            else cfg_fail(origin, line, "modulation must be bfsk or qpsk");
        } else if (key == "data_seed") {
            cfg.data_seed = static_cast<std::uint64_t>(to_int(value, origin, line));
        } else if (key == "emitter_scale") {
            cfg.emitter_scale = to_double(value, origin, line);
        } else if (key == "emitter_min_sep") {
            cfg.emitter_min_sep = to_double(value, origin, line);
        } else if (key == "channel_taps") {
            cfg.channel_taps.clear();
            for (const auto& part : split(value, ',')) cfg.channel_taps.push_back(to_complex(part, origin, line));
        } else if (key == "channel_normalize") {
            cfg.channel_normalize = to_bool(value, origin, line);
        } else if (key == "source_rx.poly" || key == "target_rx.poly") {
            const auto parts = split(value, ',');
            if (parts.size() != 2) cfg_fail(origin, line, "poly wants 'b2,b3'");
            auto& rx = key[0] == 's' ? cfg.source_rx : cfg.target_rx;
            rx.b2 = to_double(parts[0], origin, line);
            rx.b3 = to_double(parts[1], origin, line);
        } else if (key == "source_rx.dc" || key == "target_rx.dc") {
            const auto parts = split(value, ',');
            if (parts.size() != 2) cfg_fail(origin, line, "dc wants 're,im'");
            auto& rx = key[0] == 's' ? cfg.source_rx : cfg.target_rx;
            rx.dc_offset = sim::cplx(to_double(parts[0], origin, line), to_double(parts[1], origin, line));
        } else if (key == "source_rx.phase" || key == "target_rx.phase") {
            (key[0] == 's' ? cfg.source_rx : cfg.target_rx).phase_rotation = to_double(value, origin, line);
        } else if (key == "source_rx.gain" || key == "target_rx.gain") {
            (key[0] == 's' ? cfg.source_rx : cfg.target_rx).gain = to_double(value, origin, line);
        } else if (key == "source_rx.snr_db" || key == "target_rx.snr_db") {
            apply_snr(key[0] == 's' ? cfg.source_rx : cfg.target_rx, value, origin, line);
        } else if (key == "source_counts") {
            cfg.source_counts = to_counts(value, origin, line);
        } else if (key == "target_counts") {
            cfg.target_counts = to_counts(value, origin, line);
        } else if (key == "eval_counts") {
            cfg.eval_counts = to_counts(value, origin, line);
        } else if (key == "source_eval_counts") {
            cfg.source_eval_counts = to_counts(value, origin, line);
        } else if (key == "source_epochs") {
            cfg.source_epochs = static_cast<int>(to_int(value, origin, line));
        } else if (key == "source_lr") {
            cfg.source_lr = to_double(value, origin, line);
        } else if (key == "source_batch") {
            cfg.source_batch = static_cast<int>(to_int(value, origin, line));
        } else if (key == "lambda1") {
            cfg.adapt_cfg.lambda1 = to_double(value, origin, line);
        } else if (key == "lambda2") {
            cfg.adapt_cfg.lambda2 = to_double(value, origin, line);
        } else if (key == "lambda3") {
            cfg.adapt_cfg.lambda3 = to_double(value, origin, line);
        } else if (key == "tau") {
            cfg.adapt_cfg.tau = to_double(value, origin, line);
        } else if (key == "beta") {
            cfg.adapt_cfg.beta = to_double(value, origin, line);
        } else if (key == "gamma_frac") {
            cfg.gamma_frac = to_double(value, origin, line);
        } else if (key == "lr") {
            cfg.adapt_cfg.lr = to_double(value, origin, line);
        } else if (key == "epochs") {
            cfg.adapt_cfg.epochs = static_cast<int>(to_int(value, origin, line));
        } else if (key == "batch_size") {
            cfg.adapt_cfg.batch_size = static_cast<int>(to_int(value, origin, line));
        } else if (key == "prior_mode") {
            if (value == "known") cfg.adapt_cfg.prior_mode = adapt::PriorMode::Known;
            else if (value == "uniform") cfg.adapt_cfg.prior_mode = adapt::PriorMode::Uniform;
            else if (value == "estimate") cfg.adapt_cfg.prior_mode = adapt::PriorMode::Estimate;
            else cfg_fail(origin, line, "prior_mode must be known, uniform or estimate");
        } else if (key == "known_prior") {
            cfg.known_prior_counts.clear();
            for (const auto& part : split(value, ',')) cfg.known_prior_counts.push_back(to_double(part, origin, line));
        } else if (key == "vc_dim") {
            cfg.vc_dim = to_double(value, origin, line);
        } else if (key == "rho") {
            cfg.rho = to_double(value, origin, line);
        } else if (key == "variants") {
            cfg.variants = split(value, ',');
        } else if (key == "seeds") {
            cfg.seeds.clear();
            for (const auto& part : split(value, ','))
                cfg.seeds.push_back(static_cast<std::uint64_t>(to_int(part, origin, line)));
        } else if (key == "output_dir") {
            cfg.output_dir = value;
        } else if (key == "workers") {
            cfg.workers = static_cast<int>(to_int(value, origin, line));
        } else {
            cfg_fail(origin, line, "unknown key '" + key + "'");
        }
    }
    if (!saw_task_id) throw ConfigError(origin + ": missing required field 'task_id'");
    if (cfg.seeds.empty()) throw ConfigError(origin + ": field 'seeds' must not be empty");
    if (cfg.variants.empty()) throw ConfigError(origin + ": field 'variants' must not be empty");
    for (const auto& v : cfg.variants) variant_by_name(v); // rejects unknown names early
    if (cfg.adapt_cfg.prior_mode == adapt::PriorMode::Known && cfg.known_prior_counts.empty())
        throw ConfigError(origin + ": prior_mode=known requires field 'known_prior'");
    if (cfg.output_dir.empty()) cfg.output_dir = "out_" + cfg.task_id;
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path);
}

sim::EmitterProfile auto_emitter(int class_index, int k, double scale) {
    sim::EmitterProfile e;
    e.id = class_index + 1;
    const double centered = static_cast<double>(class_index) - static_cast<double>(k - 1) / 2.0;
    // classes sit on an (a3 level, a5 sign) grid with linear imbalance/skew/CFO
    // spreads, so no class carries disproportionately heavy distortion
    e.a3 = scale * (0.07 + 0.013 * (class_index % 3));
    e.a5 = scale * 0.012 * ((class_index / 3) % 2 == 0 ? 1.0 : -1.0);
    e.iq_gain_imbalance = 1.0 + scale * 0.015 * centered;
    e.iq_phase_skew = scale * 0.03 * centered;
    e.carrier_freq_offset = scale * 0.003 * centered;
    return e;
}

TaskData build_datasets(const ExperimentConfig& cfg) {
    TaskData data;
    sim::DatasetSpec base;
    base.K = cfg.k;
    base.record_len = cfg.record_len;
    base.modulation = cfg.modulation;
    base.min_emitter_separation = cfg.emitter_min_sep;
    base.channel.fir_taps = cfg.channel_taps;
    base.channel.normalize = cfg.channel_normalize;
    for (int c = 0; c < cfg.k; ++c) base.emitters.push_back(auto_emitter(c, cfg.k, cfg.emitter_scale));

    data.source_spec = base;
    data.source_spec.receiver = cfg.source_rx;
    data.source_spec.receiver.id = 1;
    data.source_spec.per_class_counts = cfg.source_counts.resolve(cfg.k);
    data.source_spec.seed = derive_stream(cfg.data_seed, 1);

    data.target_spec = base;
    data.target_spec.receiver = cfg.target_rx;
    data.target_spec.receiver.id = 2;
    data.target_spec.per_class_counts = cfg.target_counts.resolve(cfg.k);
    data.target_spec.seed = derive_stream(cfg.data_seed, 2);

    sim::DatasetSpec eval_spec = data.target_spec;
    eval_spec.per_class_counts = cfg.eval_counts.resolve(cfg.k);
    eval_spec.seed = derive_stream(cfg.data_seed, 3);

    sim::DatasetSpec source_eval_spec = data.source_spec;
    source_eval_spec.per_class_counts = cfg.source_eval_counts.resolve(cfg.k);
    source_eval_spec.seed = derive_stream(cfg.data_seed, 4);

    data.source_train = sim::generate_dataset(data.source_spec, sim::Domain::Source);
    data.target_adapt = sim::generate_dataset(data.target_spec, sim::Domain::Target);
    // evaluation draws keep labels; they never feed gradients
    data.target_eval = sim::generate_dataset(eval_spec, sim::Domain::Source);
    data.source_eval = sim::generate_dataset(source_eval_spec, sim::Domain::Source);

    std::uint64_t h = fnv1a("SCRFDATA", 8);
    for (const auto* ds : {&data.source_train, &data.target_adapt, &data.target_eval, &data.source_eval}) {
        const auto bytes = sim::serialize_dataset(*ds, cfg.k);
        h = fnv1a(bytes.data(), bytes.size(), h);
    }
    data.dataset_hash = hex64(h);
    return data;
}

WindowStats window_stats(const std::vector<double>& accuracy_fractions, std::size_t window) {
    if (accuracy_fractions.empty()) throw std::invalid_argument("window_stats: empty accuracy trace");
    const std::size_t w = std::min(window, accuracy_fractions.size());
    double mean = 0.0;
    for (std::size_t i = accuracy_fractions.size() - w; i < accuracy_fractions.size(); ++i)
        mean += accuracy_fractions[i];
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t i = accuracy_fractions.size() - w; i < accuracy_fractions.size(); ++i) {
        const double d = accuracy_fractions[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(w);
    WindowStats s;
    s.mean_pct = 100.0 * mean;
    s.std_pct = 100.0 * std::sqrt(var);
    s.final_pct = 100.0 * accuracy_fractions.back();
    return s;
}

adapt::AdaptVariant variant_by_name(const std::string& name) {
    if (name == "ms_shot" || name == "full") return adapt::AdaptVariant::ms_shot();
    if (name == "shot") return adapt::AdaptVariant::shot_baseline();
    if (name == "nn_l1") return adapt::AdaptVariant::nn_l1_only();
    if (name == "soft") return adapt::AdaptVariant::soft_only();
    if (name == "nn_l1_soft") return adapt::AdaptVariant::nn_l1_soft();
    if (name == "source_only" || name == "none") return adapt::AdaptVariant{};
    throw ConfigError("unknown variant '" + name + "'");
}

bool variant_is_source_only(const std::string& name) { return name == "source_only" || name == "none"; }

namespace {

struct CellPlan {
    std::string variant;
    std::uint64_t seed;
};

json bound_to_json(const adapt::BoundReport& b) {
    json j;
    j["c1"] = b.c1;
    j["vc_dim"] = b.vc_dim;
    j["n_target"] = b.n_target;
    j["rho"] = b.rho;
    j["zeta"] = b.zeta; // serialized as null when the assumption is violated
    j["zeta_valid"] = b.zeta_valid;
    j["nuclear_norm"] = b.nuclear_norm;
    j["prior_l1_gap"] = b.prior_l1_gap;
    j["nn_feasible"] = b.nn_feasible;
    j["l1_feasible"] = b.l1_feasible;
    j["prior_mode"] = prior_mode_name(b.mode);
    j["eta_star"] = nullptr; // Theorem-2 quantity, not computable from data
    j["d_h"] = nullptr;
    return j;
}

RunResult run_cells(const ExperimentConfig& cfg_in, const std::vector<CellPlan>& cells) {
    ExperimentConfig cfg = cfg_in;
    cfg.output_dir = env_output_dir(cfg.output_dir);
    const int workers = env_workers(cfg.workers);
    fs::create_directories(cfg.output_dir);

    const TaskData data = build_datasets(cfg);
    const std::size_t n_target = data.target_adapt.size();

    sim::write_dataset(data.source_train, cfg.k, cfg.output_dir + "/data_source.scrf");
    sim::write_dataset(data.target_adapt, cfg.k, cfg.output_dir + "/data_target.scrf");
    sim::write_dataset(data.target_eval, cfg.k, cfg.output_dir + "/data_eval.scrf");
    sim::write_dataset(data.source_eval, cfg.k, cfg.output_dir + "/data_source_eval.scrf");

    // one source model per distinct seed, shared across variants
    std::vector<std::uint64_t> uniq_seeds;
    for (const auto& c : cells)
        if (std::find(uniq_seeds.begin(), uniq_seeds.end(), c.seed) == uniq_seeds.end()) uniq_seeds.push_back(c.seed);

    std::vector<nn::ModelState> source_models(uniq_seeds.size());
    parallel_for(uniq_seeds.size(), workers, [&](std::size_t i) {
        adapt::SourceTrainConfig scfg;
        scfg.epochs = cfg.source_epochs;
        scfg.lr = cfg.source_lr;
        scfg.batch_size = cfg.source_batch;
        scfg.seed = uniq_seeds[i];
        scfg.arch = make_arch(cfg);
        source_models[i] = adapt::train_source(data.source_train, scfg);
        nn::save_checkpoint(source_models[i], cfg.output_dir + "/source_s" + std::to_string(uniq_seeds[i]) + ".ckpt");
    });
    auto source_for_seed = [&](std::uint64_t seed) -> const nn::ModelState& {
        for (std::size_t i = 0; i < uniq_seeds.size(); ++i)
            if (uniq_seeds[i] == seed) return source_models[i];
        throw std::logic_error("seed lookup failure");
    };

    RunResult result;
    result.output_dir = cfg.output_dir;
    result.dataset_hash = data.dataset_hash;
    result.rows.resize(cells.size());

    parallel_for(cells.size(), workers, [&](std::size_t ci) {
        const CellPlan& cell = cells[ci];
        const std::string stem = cell.variant + "_s" + std::to_string(cell.seed);
        const std::string trace_ref = "trace_" + stem + ".jsonl";
        nn::ModelState model = source_for_seed(cell.seed); // working copy
        std::vector<double> accs;
        std::string trace;

        if (variant_is_source_only(cell.variant)) {
            const double target_acc = adapt::evaluate_accuracy(model, data.target_eval);
            const double source_acc = adapt::evaluate_accuracy(model, data.source_eval);
            json j;
            j["epoch"] = 0;
            j["accuracy"] = target_acc;
            j["source_accuracy"] = source_acc;
            trace = j.dump() + "\n";
            accs.push_back(target_acc);
        } else {
            adapt::AdaptConfig acfg = cfg.adapt_cfg;
            acfg.seed = cell.seed;
            acfg.gamma = cfg.gamma_frac * static_cast<double>(n_target);
            if (acfg.prior_mode == adapt::PriorMode::Known) {
                losses::PriorVector p;
                p.counts = cfg.known_prior_counts;
                acfg.known_prior = p;
            }
            const adapt::AdaptVariant variant = variant_by_name(cell.variant);
            auto res = adapt::adapt(source_for_seed(cell.seed), data.target_adapt, acfg, variant, &data.target_eval);
            model = std::move(res.model);

            std::string lines;
            for (const auto& rep : res.reports) {
                json j;
                j["epoch"] = rep.epoch;
                j["ce"] = rep.losses.ce;
                j["nn"] = rep.losses.nn;
                j["l1"] = rep.losses.l1;
                j["total"] = rep.losses.total;
                j["accuracy"] = rep.accuracy ? json(*rep.accuracy) : json(nullptr);
                j["prior"] = rep.prior_snapshot.counts;
                j["center_drift"] = rep.center_drift;
                lines += j.dump() + "\n";
                if (rep.accuracy) accs.push_back(*rep.accuracy);
            }
            trace = lines;

            nn::save_checkpoint(model, cfg.output_dir + "/adapted_" + stem + ".ckpt");

            // bound report on the final target predictions
            const std::vector<int> hard = adapt::hard_predictions(model, data.target_adapt);
            adapt::FullForward full = adapt::forward_dataset(model, data.target_adapt);
            const losses::PriorVector prior = adapt::resolve_prior(acfg.prior_mode, acfg.known_prior, full.probs,
                                                                   n_target, static_cast<std::size_t>(cfg.k));
            // c1 needs N >= d; small tasks still get the feasibility flags
            adapt::BoundReport bound;
            if (cfg.vc_dim >= 1.0 && static_cast<double>(n_target) >= cfg.vc_dim) {
                bound = adapt::make_bound_report(hard, cfg.k, prior, acfg.resolved_gamma(n_target), acfg.prior_mode,
                                                 cfg.vc_dim, cfg.rho);
            } else {
                bound = adapt::feasibility_check(hard, cfg.k, prior, acfg.resolved_gamma(n_target), acfg.prior_mode);
                bound.vc_dim = cfg.vc_dim;
                bound.rho = cfg.rho;
            }
            write_text_atomic(cfg.output_dir + "/bound_" + stem + ".json", bound_to_json(bound).dump(2) + "\n");
        }

        write_text_atomic(cfg.output_dir + "/" + trace_ref, trace);

        const WindowStats stats = window_stats(accs);
        ResultRow row;
        row.task_id = cfg.task_id;
        row.variant = cell.variant;
        row.seed = cell.seed;
        row.acc_mean_pct = stats.mean_pct;
        row.acc_std_pct = stats.std_pct;
        row.final_epoch_pct = stats.final_pct;
        row.trace_ref = trace_ref;
        row.dataset_hash = data.dataset_hash;
        result.rows[ci] = row;
    });

    // aggregate per variant in first-seen order
    std::vector<std::string> seen;
    for (const auto& c : cells)
        if (std::find(seen.begin(), seen.end(), c.variant) == seen.end()) seen.push_back(c.variant);
    for (const auto& v : seen) {
        SummaryRow s;
        s.variant = v;
        std::vector<double> means;
        for (const auto& row : result.rows)
            if (row.variant == v) means.push_back(row.acc_mean_pct);
        s.n_seeds = means.size();
        double mean = 0.0;
        for (double m : means) mean += m;
        mean /= static_cast<double>(means.size());
        double var = 0.0;
        for (double m : means) var += (m - mean) * (m - mean);
        var /= static_cast<double>(means.size());
        s.mean_pct = mean;
        s.std_pct = std::sqrt(var);
        result.summary.push_back(s);
    }

    std::string table = "task_id\tvariant\tseed\tacc_mean_pct\tacc_std_pct\tfinal_epoch_pct\ttrace\tdataset_hash\n";
    for (const auto& r : result.rows) {
        table += r.task_id + "\t" + r.variant + "\t" + std::to_string(r.seed) + "\t" + format_pct(r.acc_mean_pct) +
                 "\t" + format_pct(r.acc_std_pct) + "\t" + format_pct(r.final_epoch_pct) + "\t" + r.trace_ref + "\t" +
                 r.dataset_hash + "\n";
    }
    write_text_atomic(cfg.output_dir + "/results.tsv", table);

    std::string summary = "variant\tn_seeds\tmean_pct\tstd_pct\n";
    for (const auto& s : result.summary)
        summary += s.variant + "\t" + std::to_string(s.n_seeds) + "\t" + format_pct(s.mean_pct) + "\t" +
                   format_pct(s.std_pct) + "\n";
    write_text_atomic(cfg.output_dir + "/summary.tsv", summary);
    return result;
}

}  // namespace

void run_generate(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.output_dir = env_output_dir(cfg.output_dir);
    fs::create_directories(cfg.output_dir);
    const TaskData data = build_datasets(cfg);
    sim::write_dataset(data.source_train, cfg.k, cfg.output_dir + "/data_source.scrf");
    sim::write_dataset(data.target_adapt, cfg.k, cfg.output_dir + "/data_target.scrf");
    sim::write_dataset(data.target_eval, cfg.k, cfg.output_dir + "/data_eval.scrf");
    sim::write_dataset(data.source_eval, cfg.k, cfg.output_dir + "/data_source_eval.scrf");

    auto print_counts = [&](const char* name, const std::vector<sim::IQRecord>& recs) {
        std::printf("%s: %zu records", name, recs.size());
        const auto hist = sim::label_histogram(recs, cfg.k);
        bool any = false;
        for (auto h : hist) any = any || h > 0;
        if (any) {
            std::printf(" (per class:");
            for (auto h : hist) std::printf(" %u", h);
            std::printf(")");
        }
        std::printf("\n");
    };
    print_counts("source", data.source_train);
    print_counts("target", data.target_adapt);
    print_counts("eval", data.target_eval);
    print_counts("source_eval", data.source_eval);
    std::printf("dataset_hash: %s\n", data.dataset_hash.c_str());
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    std::vector<CellPlan> cells;
    for (const auto& v : cfg.variants)
        for (auto s : cfg.seeds) cells.push_back({v, s});
    return run_cells(cfg, cells);
}

RunResult run_ablation(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.variants = {"none", "nn_l1", "soft", "nn_l1_soft", "full"};
    std::vector<CellPlan> cells;
    for (const auto& v : cfg.variants)
        for (auto s : cfg.seeds) cells.push_back({v, s});
    return run_cells(cfg, cells);
}

std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg_in, const std::string& axis,
                                 const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("sweep needs a nonempty value list");
    ExperimentConfig base = cfg_in;
    base.output_dir = env_output_dir(base.output_dir);
    const std::string sweep_dir = base.output_dir + "/sweep_" + axis;
    fs::create_directories(sweep_dir);

    std::vector<SweepCell> out;
    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        const double v = values[vi];
        ExperimentConfig cfg = base;
        cfg.variants = {"ms_shot"};
        if (axis == "lambda1") cfg.adapt_cfg.lambda1 = v;
        else if (axis == "lambda2") cfg.adapt_cfg.lambda2 = v;
        else if (axis == "lambda3") cfg.adapt_cfg.lambda3 = v;
        else if (axis == "beta") cfg.adapt_cfg.beta = v;
        else if (axis == "tau") cfg.adapt_cfg.tau = v;
        else if (axis == "snr") {
            cfg.target_rx.snr_lo_db = v;
            cfg.target_rx.snr_hi_db = v;
        } else if (axis == "num_classes") {
            if (cfg.source_counts.values.size() != 1 || cfg.target_counts.values.size() != 1 ||
                cfg.eval_counts.values.size() != 1 || cfg.source_eval_counts.values.size() != 1)
                throw ConfigError("num_classes sweep requires scalar per-class counts");
            cfg.k = static_cast<int>(v);
            if (cfg.k < 2) throw ConfigError("num_classes sweep values must be >= 2");
        } else {
            throw ConfigError("unknown sweep axis '" + axis + "'");
        }
        char tag[64];
        std::snprintf(tag, sizeof(tag), "v%02zu_%g", vi, v);
        cfg.output_dir = sweep_dir + "/" + tag;
        const RunResult r = run_experiment(cfg);

        SweepCell cell;
        cell.value = v;
        cell.subdir = cfg.output_dir;
        cell.summary = r.summary.front();
        out.push_back(cell);
    }

    std::string grid = "axis\tvalue\tvariant\tn_seeds\tmean_pct\tstd_pct\tsubdir\n";
    for (const auto& c : out) {
        char valbuf[32];
        std::snprintf(valbuf, sizeof(valbuf), "%g", c.value);
        grid += axis + "\t" + valbuf + "\t" + c.summary.variant + "\t" + std::to_string(c.summary.n_seeds) + "\t" +
                format_pct(c.summary.mean_pct) + "\t" + format_pct(c.summary.std_pct) + "\t" + c.subdir + "\n";
    }
    write_text_atomic(sweep_dir + "/sweep.tsv", grid);
    return out;
}

void export_features(const std::string& ckpt_path, const std::string& data_path, const std::string& out_path) {
    nn::ModelState model = nn::load_checkpoint(ckpt_path);
    const sim::LoadedDataset ds = sim::read_dataset(data_path);
    if (!ds.records.empty() && ds.records.front().length != model.arch.input_len)
        throw FormatError("dataset record length does not match checkpoint architecture");
    const adapt::FullForward full = adapt::forward_dataset(model, ds.records);

    std::string out;
    char buf[64];
    for (std::size_t i = 0; i < full.features.rows; ++i) {
        for (std::size_t d = 0; d < full.features.cols; ++d) {
            std::snprintf(buf, sizeof(buf), "%.9g", full.features(i, d));
            out += buf;
            out += '\t';
        }
        const int label = ds.records[i].labeled() ? static_cast<int>(ds.records[i].label) : -1;
        out += std::to_string(label);
        out += '\n';
    }
    write_text_atomic(out_path, out);
}

bool verify_results(const std::string& dir, std::string* report) {
    std::ifstream table(dir + "/results.tsv");
    if (!table) throw FormatError("cannot open results table: " + dir + "/results.tsv");
    std::string line;
    if (!std::getline(table, line)) throw FormatError("empty results table");
    bool ok = true;
    std::string log;
    int row_index = 0;
    while (std::getline(table, line)) {
        ++row_index;
        if (trim(line).empty()) continue;
        const auto cols = split(line, '\t');
        if (cols.size() != 8) throw FormatError("results.tsv row " + std::to_string(row_index) + ": want 8 columns");
        const std::string& trace_ref = cols[6];
        std::ifstream trace(dir + "/" + trace_ref);
        if (!trace) throw FormatError("cannot open trace: " + trace_ref);
        std::vector<double> accs;
        std::string tline;
        while (std::getline(trace, tline)) {
            if (trim(tline).empty()) continue;
            const json j = json::parse(tline);
            if (j.contains("accuracy") && !j["accuracy"].is_null()) accs.push_back(j["accuracy"].get<double>());
        }
        if (accs.empty()) {
            ok = false;
            log += "row " + std::to_string(row_index) + ": trace has no accuracy entries\n";
            continue;
        }
        const WindowStats stats = window_stats(accs);
        if (format_pct(stats.mean_pct) != cols[3] || format_pct(stats.std_pct) != cols[4] ||
            format_pct(stats.final_pct) != cols[5]) {
            ok = false;
            log += "row " + std::to_string(row_index) + " (" + cols[1] + " seed " + cols[2] +
                   "): table says mean=" + cols[3] + " std=" + cols[4] + " final=" + cols[5] +
                   ", trace recomputes mean=" + format_pct(stats.mean_pct) + " std=" + format_pct(stats.std_pct) +
                   " final=" + format_pct(stats.final_pct) + "\n";
        }
    }
    if (report) *report = log;
    return ok;
}

}  // namespace scrf::harness
