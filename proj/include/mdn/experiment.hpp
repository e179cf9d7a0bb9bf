#pragma once

#include <atomic>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mdn/archive.hpp"
#include "mdn/checkpoint.hpp"
#include "mdn/config_io.hpp"
#include "mdn/report.hpp"

#ifndef MDN_VERSION
#define MDN_VERSION "0.0.0"
#endif

namespace mdn {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2 };

struct ExperimentConfig {
    std::optional<SyntheticSpec> synthetic; ///< exactly one of synthetic / archive
    std::optional<fs::path> archive;
    SplitOptions split;
    std::vector<TrainConfig> configs;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::optional<fs::path> output_dir;
    Json source; ///< the parsed document, for hashing
};

inline SyntheticSpec synthetic_from_json(const Json& j, const std::string& path) {
    detail::FieldReader r(j, path);
    SyntheticSpec s;
    r.read("n_subjects", s.n_subjects);
    r.read("n_classes", s.n_classes);
    r.read("channels", s.channels);
    r.read("timepoints", s.timepoints);
    r.read("trials_per_subject_class", s.trials_per_subject_class);
    r.read("noise_sd", s.noise_sd);
    r.read("subject_shift_sd", s.subject_shift_sd);
    if (r.has("base_freqs")) {
        const Json& f = r.at("base_freqs");
        if (!f.is_array()) throw ConfigError(r.where("base_freqs") + ": expected an array of numbers");
        s.base_freqs.clear();
        for (const auto& v : f) {
            if (!v.is_number()) throw ConfigError(r.where("base_freqs") + ": expected an array of numbers");
            s.base_freqs.push_back(v.get<double>());
        }
    } else if (s.n_classes != s.base_freqs.size()) {
        s.base_freqs.clear();
        for (std::size_t k = 0; k < s.n_classes; ++k) s.base_freqs.push_back(2.0 * static_cast<double>(k + 1));
    }
    r.read("seed", s.seed);
    r.reject_unknown();
    detail::with_field(path, [&] { s.validate(); });
    return s;
}

inline Json synthetic_to_json(const SyntheticSpec& s) {
    return {{"n_subjects", s.n_subjects},   {"n_classes", s.n_classes},
            {"channels", s.channels},       {"timepoints", s.timepoints},
            {"trials_per_subject_class", s.trials_per_subject_class},
            {"noise_sd", s.noise_sd},       {"subject_shift_sd", s.subject_shift_sd},
            {"base_freqs", s.base_freqs},   {"seed", s.seed}};
}

/// Parses an experiment document. Relative archive paths resolve against `base_dir`.
inline ExperimentConfig experiment_from_json(const Json& j, const fs::path& base_dir = {}) {
    detail::FieldReader r(j, "");
    ExperimentConfig e;
    e.source = j;
    if (!r.has("data")) throw ConfigError("data: required (\"synthetic\" or \"archive\")");
    {
        detail::FieldReader d(r.at("data"), "data");
        if (d.has("synthetic") == d.has("archive")) throw ConfigError("data: give exactly one of \"synthetic\" or \"archive\"");
        if (d.has("synthetic")) e.synthetic = synthetic_from_json(d.at("synthetic"), "data.synthetic");
        if (d.has("archive")) {
            fs::path p = d.get<std::string>("archive");
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            if (!fs::exists(p / "manifest.json")) {
                throw ConfigError("data.archive: no archive at " + p.string() + " (missing manifest.json)");
            }
            e.archive = p;
        }
        d.reject_unknown();
    }
    if (r.has("split")) {
        detail::FieldReader s(r.at("split"), "split");
        s.read("unseen_subjects", e.split.unseen_subject_ids);
        s.read("val_fraction", e.split.val_fraction);
        s.read("seen_test_fraction", e.split.seen_test_fraction);
        s.read("calibration_per_subject", e.split.calibration_per_subject);
        s.read("seed", e.split.seed);
        s.reject_unknown();
    }
    if (e.split.unseen_subject_ids.empty()) {
        if (!e.synthetic || e.synthetic->n_subjects < 3) {
            throw ConfigError("split.unseen_subjects: required for this data source");
        }
        e.split.unseen_subject_ids = {synthetic_subject_name(e.synthetic->n_subjects - 2),
                                      synthetic_subject_name(e.synthetic->n_subjects - 1)};
    }
    if (r.has("seeds")) {
        const Json& s = r.at("seeds");
        if (!s.is_array() || s.empty()) throw ConfigError("seeds: expected a nonempty array of integers");
        e.seeds.clear();
        for (const auto& v : s) {
            if (!v.is_number_unsigned()) throw ConfigError("seeds: expected a nonempty array of non-negative integers");
            e.seeds.push_back(v.get<std::uint64_t>());
        }
    }
    if (r.has("output_dir")) e.output_dir = fs::path(r.get<std::string>("output_dir"));
    TrainConfig defaults;
    if (r.has("defaults")) defaults = train_config_from_json(r.at("defaults"), "defaults");
    if (!r.has("configs")) {
        e.configs.push_back(defaults);
    } else {
        const Json& list = r.at("configs");
        if (!list.is_array() || list.empty()) throw ConfigError("configs: expected a nonempty array");
        std::set<std::string> names;
        for (std::size_t i = 0; i < list.size(); ++i) {
            const std::string where = "configs[" + std::to_string(i) + "]";
            TrainConfig c = train_config_from_json(list[i], where, defaults);
            if (!list[i].contains("name")) throw ConfigError(where + ".name: required");
            if (!names.insert(c.name).second) throw ConfigError(where + ".name: duplicate configuration name '" + c.name + "'");
            e.configs.push_back(std::move(c));
        }
    }
    r.reject_unknown();
    return e;
}

inline ExperimentConfig load_experiment(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
    return experiment_from_json(j, path.parent_path());
}

struct LoadedData {
    std::vector<LabeledTrial> trials;
    std::size_t n_classes = 0;
};

inline LoadedData load_data(const ExperimentConfig& e) {
    LoadedData d;
    if (e.synthetic) {
        d.trials = generate_synthetic(*e.synthetic);
        d.n_classes = e.synthetic->n_classes;
    } else {
        ArchiveInfo info;
        d.trials = load_archive(*e.archive, &info);
        d.n_classes = info.n_classes;
    }
    if (d.trials.empty()) throw ConfigError("data: the data source holds no trials");
    return d;
}

/// --out, then the config's output_dir, then $MDN_OUT_DIR, then ./mdn_out.
inline fs::path resolve_output_dir(const std::optional<fs::path>& flag, const std::optional<fs::path>& from_config) {
    if (flag && !flag->empty()) return *flag;
    if (from_config) return *from_config;
    if (const char* env = std::getenv("MDN_OUT_DIR"); env && *env) return env;
    return "mdn_out";
}

inline std::string safe_file_name(const std::string& s) {
    std::string out;
    for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_';
    return out.empty() ? "config" : out;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct RunOptions {
    std::optional<fs::path> out;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::size_t jobs = 1;
    bool verbose = false;
    bool write_checkpoints = true;
};

struct RunFailure {
    std::string config;
    std::uint64_t seed;
    std::string error;
};

struct RunOutcome {
    fs::path out_dir;
    std::vector<ResultRow> rows;
    std::vector<RunFailure> failures;
};

/// Trains and evaluates every (config, seed) pair; (config, seed) tasks may
/// run on `jobs` threads, each fully independent. Results are sorted before
/// writing so the CSV does not depend on completion order.
inline RunOutcome run_experiment(const ExperimentConfig& e, const RunOptions& opt, std::ostream& log) {
    RunOutcome outcome;
    outcome.out_dir = resolve_output_dir(opt.out, e.output_dir);
    const auto seeds = opt.seeds ? *opt.seeds : e.seeds;
    if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    const LoadedData data = load_data(e);
    const DatasetSplit split = make_splits(data.trials, e.split);
    for (const auto& c : e.configs) {
        c.validate();
        ModelBundle::create(c, data.trials[0].channels, data.trials[0].timepoints, data.n_classes);
    }
    fs::create_directories(outcome.out_dir);
    if (opt.write_checkpoints) fs::create_directories(outcome.out_dir / "checkpoints");

    struct Task {
        const TrainConfig* config;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (const auto& c : e.configs)
        for (auto s : seeds) tasks.push_back({&c, s});

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
            const Task& t = tasks[i];
            TrainConfig cfg = *t.config;
            cfg.seed = t.seed;
            std::vector<ResultRow> rows;
            try {
                EpochCallback cb;
                if (opt.verbose) {
                    cb = [&](const EpochRecord& r, const ModelBundle&) {
                        std::lock_guard lock(mu);
                        log << "[" << cfg.name << " seed " << cfg.seed << "] epoch " << r.epoch + 1 << "/" << cfg.epochs
                            << " loss " << r.loss.total << " ddpm " << r.ddpm_loss;
                        if (r.val_accuracy) log << " val_acc " << *r.val_accuracy;
                        log << "\n";
                    };
                }
                TrainResult tr = train(cfg, split, data.n_classes, cb);
                if (!split.test_seen.empty()) append_metric_rows(rows, cfg.name, cfg.seed, "seen", evaluate(tr.model, split.test_seen, StatsMode::seen));
                if (!split.test_unseen.empty()) append_metric_rows(rows, cfg.name, cfg.seed, "unseen", evaluate(tr.model, split.test_unseen, StatsMode::unseen));
                if (opt.write_checkpoints) {
                    save_checkpoint(tr.model, outcome.out_dir / "checkpoints" /
                                                  (safe_file_name(cfg.name) + "_seed" + std::to_string(cfg.seed) + ".ckpt"));
                }
                std::lock_guard lock(mu);
                outcome.rows.insert(outcome.rows.end(), rows.begin(), rows.end());
                log << "finished " << cfg.name << " seed " << cfg.seed << "\n";
            } catch (const std::exception& ex) {
                std::lock_guard lock(mu);
                outcome.failures.push_back({cfg.name, cfg.seed, ex.what()});
                log << "FAILED " << cfg.name << " seed " << cfg.seed << ": " << ex.what() << "\n";
            }
        }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, tasks.size()));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    std::sort(outcome.failures.begin(), outcome.failures.end(), [](const RunFailure& a, const RunFailure& b) {
        return std::tie(a.config, a.seed) < std::tie(b.config, b.seed);
    });
    write_results_csv(outcome.rows, outcome.out_dir / "results.csv");

    Json failures = Json::array();
    for (const auto& f : outcome.failures) failures.push_back({{"config", f.config}, {"seed", f.seed}, {"error", f.error}});
    Json configs = Json::array();
    for (const auto& c : e.configs) configs.push_back(train_config_to_json(c));
    const Json manifest = {{"software", "multidiffnet"},
                           {"version", MDN_VERSION},
                           {"config_hash", config_hash(e.source)},
                           {"timestamp", utc_timestamp()},
                           {"seeds", seeds},
                           {"configs", configs},
                           {"results", "results.csv"},
                           {"failures", failures},
                           {"status", outcome.failures.empty() ? "complete" : "partial"}};
    std::ofstream m(outcome.out_dir / "manifest.json");
    m << manifest.dump(2) << "\n";
    return outcome;
}

/// Experiment entry point with exit-code mapping: 0 success, 1 runtime failure, 2 configuration error.
inline int cmd_run(const fs::path& config_path, const RunOptions& opt, std::ostream& log, std::ostream& summary,
                   std::ostream& err) {
    try {
        const ExperimentConfig e = load_experiment(config_path);
        const RunOutcome out = run_experiment(e, opt, log);
        summary << "wrote " << (out.out_dir / "results.csv").string() << " (" << out.rows.size() << " rows)\n";
        if (!out.failures.empty()) {
            err << out.failures.size() << " run(s) failed; see " << (out.out_dir / "manifest.json").string() << "\n";
            return kExitRuntime;
        }
        return kExitOk;
    } catch (const ConfigError& ex) {
        err << "configuration error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const DimensionError& ex) {
        err << "configuration error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitRuntime;
    }
}

inline int cmd_compare(const fs::path& results_csv, const std::string& metric, const std::string& split,
                       const fs::path& out_dir, std::ostream& log, std::ostream& err) {
    try {
        if (split != "seen" && split != "unseen") {
            err << "configuration error: unknown split '" << split << "' (expected seen or unseen)\n";
            return kExitConfig;
        }
        const auto names = metric_names();
        if (std::find(names.begin(), names.end(), metric) == names.end()) {
            err << "configuration error: unknown metric '" << metric << "'\n";
            return kExitConfig;
        }
        const auto rows = read_results_csv(results_csv);
        const auto table = report::collect(rows, metric, split);
        if (table.configs.size() < 2) {
            err << "error: need >= 2 configurations, found " << table.configs.size() << "\n";
            return kExitConfig;
        }
        const auto analysis = report::analyze(table);
        for (const auto& p : report::write_reports(analysis, out_dir)) log << "wrote " << p.string() << "\n";
        return kExitOk;
    } catch (const stats::StatsError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const FormatError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitRuntime;
    }
}

/// Raw latent z (encoder + attention pooling) per trial.
inline Tensor encode_latents(const ModelBundle& m, const std::vector<LabeledTrial>& trials) {
    NoGradGuard guard;
    const Tensor x = stack_signals(trials);
    Tensor in = x;
    if (m.config.encoder_input == EncoderInput::x_hat) {
        Rng rng = evaluation_rng(m);
        in = refine_signals(m, x, rng);
    }
    return m.encoder.attention_pool(m.encoder.encode(Var::constant(in)).dn3).value();
}

inline std::string embeddings_csv(const ModelBundle& m, const std::vector<LabeledTrial>& trials) {
    const std::size_t d = m.config.encoder.latent_dim;
    std::string out = "subject,label";
    for (std::size_t i = 0; i < d; ++i) out += ",z" + std::to_string(i);
    out += "\n";
    if (trials.empty()) return out;
    for (const auto& t : trials) validate_trial(t, m.config.encoder.channels, m.config.encoder.timepoints, m.n_classes);
    const Tensor z = encode_latents(m, trials);
    for (std::size_t i = 0; i < trials.size(); ++i) {
        out += detail::csv_field(trials[i].subject_id) + "," + std::to_string(trials[i].label);
        for (std::size_t k = 0; k < d; ++k) out += "," + detail::format_double(z[i * d + k]);
        out += "\n";
    }
    return out;
}

inline int cmd_export_embeddings(const fs::path& checkpoint, const fs::path& trials_archive, const fs::path& out_path,
                                 std::ostream& log, std::ostream& err) {
    try {
        const ModelBundle m = load_checkpoint(checkpoint);
        ArchiveInfo info;
        const auto trials = load_archive(trials_archive, &info);
        if (info.channels != m.config.encoder.channels || info.timepoints != m.config.encoder.timepoints) {
            err << "error: checkpoint expects " << m.config.encoder.channels << "x" << m.config.encoder.timepoints
                << " trials, archive holds " << info.channels << "x" << info.timepoints << "\n";
            return kExitConfig;
        }
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        std::ofstream out(out_path, std::ios::binary);
        out << embeddings_csv(m, trials);
        if (!out) throw std::runtime_error("cannot write " + out_path.string());
        log << "wrote " << trials.size() << " embeddings to " << out_path.string() << "\n";
        return kExitOk;
    } catch (const FormatError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const DimensionError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitRuntime;
    }
}

/// Writes a synthetic archive. `config_path` may hold an experiment document
/// (its data.synthetic block is used) or a bare synthetic spec; empty = defaults.
inline int cmd_gen_data(const std::optional<fs::path>& config_path, const fs::path& out_dir, std::ostream& log,
                        std::ostream& err) {
    try {
        SyntheticSpec spec;
        if (config_path) {
            std::ifstream in(*config_path);
            if (!in) throw ConfigError("cannot open config file " + config_path->string());
            Json j;
            try {
                j = Json::parse(in);
            } catch (const Json::exception& e) {
                throw ConfigError(config_path->string() + ": invalid JSON (" + e.what() + ")");
            }
            if (j.contains("data")) {
                if (!j["data"].contains("synthetic")) throw ConfigError("data.synthetic: required for gen-data");
                spec = synthetic_from_json(j["data"]["synthetic"], "data.synthetic");
            } else {
                spec = synthetic_from_json(j, "");
            }
        }
        const auto trials = generate_synthetic(spec);
        save_archive(trials, out_dir, {spec.channels, spec.timepoints, spec.n_classes});
        log << "wrote " << trials.size() << " trials to " << out_dir.string() << "\n";
        return kExitOk;
    } catch (const ConfigError& ex) {
        err << "configuration error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace mdn
