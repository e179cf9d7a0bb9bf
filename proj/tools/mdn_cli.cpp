// mdn: run experiments, compare results, export latents, generate synthetic data.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mdn/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        const auto v = std::stoull(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        seeds.push_back(v);
    }
    if (seeds.empty()) throw std::invalid_argument(text);
    return seeds;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MultiDiffNet EEG pipeline and statistical reporting"};
    app.set_version_flag("--version", std::string(MDN_VERSION));
    app.require_subcommand(1);

    bool verbose = false;
    std::string config, out, seeds_text, metric = "accuracy", split = "unseen";
    std::string results, checkpoint, trials;
    std::size_t jobs = 1;

    auto* run = app.add_subcommand("run", "Train and evaluate every configuration of an experiment over its seeds");
    run->add_option("--config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Output directory (default: config output_dir, then $MDN_OUT_DIR, then ./mdn_out)");
    run->add_option("--seeds", seeds_text, "Comma-separated seeds overriding the config");
    run->add_option("--jobs", jobs, "Parallel (config, seed) runs")->check(CLI::PositiveNumber);
    run->add_flag("--verbose,-v", verbose, "Per-epoch progress");

    auto* compare = app.add_subcommand("compare", "Emit the four statistical tables from a results CSV");
    compare->add_option("results", results, "results.csv from 'run'")->required()->check(CLI::ExistingFile);
    compare->add_option("--metric", metric, "Metric column")->capture_default_str();
    compare->add_option("--split", split, "seen or unseen")->capture_default_str();
    compare->add_option("--out", out, "Report directory (default: $MDN_OUT_DIR/reports, else ./mdn_out/reports)");
    compare->add_flag("--verbose,-v", verbose);

    auto* exporter = app.add_subcommand("export-embeddings", "Write per-trial latent vectors from a checkpoint");
    exporter->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    exporter->add_option("trials", trials, "Trial archive directory")->required()->check(CLI::ExistingDirectory);
    exporter->add_option("--out", out, "Output CSV")->required();
    exporter->add_flag("--verbose,-v", verbose);

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic trial archive");
    gen->add_option("--config", config, "Synthetic data settings JSON or experiment JSON")->check(CLI::ExistingFile);
    gen->add_option("--out", out, "Archive directory (default: $MDN_OUT_DIR/data, else ./mdn_out/data)");
    gen->add_flag("--verbose,-v", verbose);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? mdn::kExitOk : mdn::kExitConfig;
    }

    std::ostringstream quiet;
    std::ostream& log = verbose ? std::cerr : static_cast<std::ostream&>(quiet);

    if (*run) {
        mdn::RunOptions opt;
        if (!out.empty()) opt.out = out;
        if (!seeds_text.empty()) {
            try {
                opt.seeds = parse_seed_list(seeds_text);
            } catch (const std::exception&) {
                std::cerr << "configuration error: --seeds expects a comma-separated list of non-negative integers\n";
                return mdn::kExitConfig;
            }
        }
        opt.jobs = jobs;
        opt.verbose = verbose;
        return mdn::cmd_run(config, opt, log, std::cout, std::cerr);
    }
    const auto default_dir = [](const char* sub) {
        return mdn::resolve_output_dir(std::nullopt, std::nullopt) / sub;
    };
    if (*compare) {
        const auto dir = out.empty() ? default_dir("reports") : std::filesystem::path(out);
        const int rc = mdn::cmd_compare(results, metric, split, dir, log, std::cerr);
        if (rc == mdn::kExitOk) std::cout << "wrote 4 tables (csv + md) to " << dir.string() << "\n";
        return rc;
    }
    if (*exporter) return mdn::cmd_export_embeddings(checkpoint, trials, out, std::cout, std::cerr);
    if (*gen) {
        const auto dir = out.empty() ? default_dir("data") : std::filesystem::path(out);
        std::optional<std::filesystem::path> cfg;
        if (!config.empty()) cfg = config;
        return mdn::cmd_gen_data(cfg, dir, std::cout, std::cerr);
    }
    return mdn::kExitConfig;
}
