#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mdn/experiment.hpp"

using namespace mdn;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mdn_exp_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string config_error(const Json& j) {
    try {
        experiment_from_json(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

Json tiny_experiment(const fs::path& out) {
    Json j = Json::parse(R"({
      "data": {"synthetic": {"n_subjects": 5, "channels": 3, "timepoints": 32, "trials_per_subject_class": 5, "seed": 4}},
      "split": {"calibration_per_subject": 4},
      "seeds": [1, 2, 3],
      "defaults": {"epochs": 1, "batch_size": 16,
                   "encoder": {"temporal_filters": 2, "depth_multiplier": 2, "latent_dim": 6, "projection_dim": 6},
                   "diffusion": {"n_steps": 8, "hidden": 6}},
      "configs": [
        {"name": "base"},
        {"name": "mixup", "mixup_layer": -1, "decoder_input": "x + x_hat + skips"}
      ]
    })");
    j["output_dir"] = out.string();
    return j;
}

} // namespace

TEST(ExperimentJson, DefaultsAndUnseenSubjects) {
    const auto e = experiment_from_json(Json::parse(R"({"data": {"synthetic": {}}})"));
    ASSERT_TRUE(e.synthetic);
    EXPECT_EQ(e.split.unseen_subject_ids, (std::vector<std::string>{"s5", "s6"}));
    EXPECT_EQ(e.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    ASSERT_EQ(e.configs.size(), 1u);
    EXPECT_EQ(e.configs[0].epochs, 60u);
}

TEST(ExperimentJson, ConfigsInheritDefaults) {
    const auto e = experiment_from_json(tiny_experiment("x"));
    ASSERT_EQ(e.configs.size(), 2u);
    EXPECT_EQ(e.configs[1].epochs, 1u);
    EXPECT_EQ(e.configs[1].encoder.latent_dim, 6u);
    ASSERT_TRUE(e.configs[1].mixup);
    EXPECT_EQ(e.configs[1].mixup->layer, -1);
    EXPECT_FALSE(e.configs[0].mixup);
    EXPECT_EQ(e.output_dir, fs::path("x"));
}

TEST(ExperimentJson, ErrorsNameTheField) {
    const struct {
        const char* doc;
        const char* fragment;
    } cases[] = {
        {R"({})", "data: required"},
        {R"({"data": {}})", "exactly one"},
        {R"({"data": {"synthetic": {}, "archive": "a"}})", "exactly one"},
        {R"({"data": {"archive": "/nonexistent/dir"}})", "missing manifest.json"},
        {R"({"data": {"synthetic": {"n_classes": "four"}}})", "data.synthetic.n_classes"},
        {R"({"data": {"synthetic": {"colour": 1}}})", "data.synthetic.colour: unknown field"},
        {R"({"data": {"synthetic": {}}, "seeds": []})", "seeds"},
        {R"({"data": {"synthetic": {}}, "seeds": [-1]})", "seeds"},
        {R"({"data": {"synthetic": {}}, "configs": [{"epochs": 2}]})", "configs[0].name: required"},
        {R"({"data": {"synthetic": {}}, "configs": [{"name": "a"}, {"name": "a"}]})", "configs[1].name: duplicate"},
        {R"({"data": {"synthetic": {}}, "configs": [{"name": "a", "epochs": -3}]})", "configs[0].epochs"},
        {R"({"data": {"synthetic": {}}, "configs": [{"name": "a", "encoder": {"latent": 3}}]})", "configs[0].encoder.latent"},
        {R"({"data": {"synthetic": {}}, "split": {"unseen": ["s1"]}})", "split.unseen: unknown field"},
        {R"({"data": {"synthetic": {}}, "extra": 1})", "extra: unknown field"},
        {R"({"data": {"synthetic": {"n_subjects": 2}}})", "split.unseen_subjects"},
    };
    for (const auto& c : cases) {
        const std::string msg = config_error(Json::parse(c.doc));
        EXPECT_NE(msg.find(c.fragment), std::string::npos) << c.doc << " -> '" << msg << "'";
    }
}

TEST(ExperimentJson, TrainConfigRoundTrip) {
    const auto e = experiment_from_json(tiny_experiment("x"));
    for (const auto& c : e.configs) {
        const Json j = train_config_to_json(c);
        EXPECT_EQ(train_config_to_json(train_config_from_json(j, "c")), j);
    }
}

TEST(OutputDir, Precedence) {
    ::unsetenv("MDN_OUT_DIR");
    EXPECT_EQ(resolve_output_dir(std::nullopt, std::nullopt), fs::path("mdn_out"));
    ::setenv("MDN_OUT_DIR", "/tmp/env_out", 1);
    EXPECT_EQ(resolve_output_dir(std::nullopt, std::nullopt), fs::path("/tmp/env_out"));
    EXPECT_EQ(resolve_output_dir(std::nullopt, fs::path("cfg_out")), fs::path("cfg_out"));
    EXPECT_EQ(resolve_output_dir(fs::path("flag_out"), fs::path("cfg_out")), fs::path("flag_out"));
    ::unsetenv("MDN_OUT_DIR");
}

TEST(Commands, RunWritesResultsAndManifest) {
    const fs::path dir = temp_dir("run");
    write_file(dir / "exp.json", tiny_experiment(dir / "out").dump());
    std::ostringstream log, summary, err;
    RunOptions opt;
    ASSERT_EQ(cmd_run(dir / "exp.json", opt, log, summary, err), kExitOk) << err.str();
    const auto rows = read_results_csv(dir / "out" / "results.csv");
    EXPECT_GE(rows.size(), 2u * 3u * 2u * 4u);
    const Json manifest = Json::parse(read_file(dir / "out" / "manifest.json"));
    EXPECT_EQ(manifest["status"], "complete");
    EXPECT_EQ(manifest["seeds"].size(), 3u);
    EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 16u);
    EXPECT_TRUE(fs::exists(dir / "out" / "checkpoints" / "mixup_seed2.ckpt"));

    // Threads change scheduling only.
    opt.out = dir / "out_jobs";
    opt.jobs = 3;
    ASSERT_EQ(cmd_run(dir / "exp.json", opt, log, summary, err), kExitOk) << err.str();
    EXPECT_EQ(read_file(dir / "out" / "results.csv"), read_file(dir / "out_jobs" / "results.csv"));

    std::ostringstream clog, cerr_;
    ASSERT_EQ(cmd_compare(dir / "out" / "results.csv", "accuracy", "unseen", dir / "reports", clog, cerr_), kExitOk)
        << cerr_.str();
    for (const char* name : {"practical_evidence", "bayes", "wilcoxon", "permutation"}) {
        EXPECT_TRUE(fs::exists(dir / "reports" / (std::string(name) + ".csv"))) << name;
        EXPECT_TRUE(fs::exists(dir / "reports" / (std::string(name) + ".md"))) << name;
    }

    fs::create_directories(dir / "archive");
    std::ostringstream glog, gerr;
    ASSERT_EQ(cmd_gen_data(dir / "exp.json", dir / "archive", glog, gerr), kExitOk) << gerr.str();
    std::ostringstream elog, eerr;
    const fs::path ckpt = dir / "out" / "checkpoints" / "base_seed1.ckpt";
    ASSERT_EQ(cmd_export_embeddings(ckpt, dir / "archive", dir / "emb.csv", elog, eerr), kExitOk) << eerr.str();

    const ModelBundle m = load_checkpoint(ckpt);
    const auto trials = load_archive(dir / "archive");
    const Tensor z = encode_latents(m, trials);
    std::istringstream csv(read_file(dir / "emb.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "subject,label,z0,z1,z2,z3,z4,z5");
    std::size_t row = 0;
    double worst = 0.0;
    while (std::getline(csv, line)) {
        const auto f = detail::split_csv_line(line);
        ASSERT_EQ(f.size(), 8u);
        EXPECT_EQ(f[0], trials[row].subject_id);
        for (std::size_t k = 0; k < 6; ++k) worst = std::max(worst, std::abs(std::stod(f[k + 2]) - z[row * 6 + k]));
        ++row;
    }
    EXPECT_EQ(row, trials.size());
    EXPECT_LE(worst, 1e-6);
    EXPECT_EQ(embeddings_csv(m, {}), "subject,label,z0,z1,z2,z3,z4,z5\n");
    fs::remove_all(dir);
}

TEST(Commands, CompareArgumentErrors) {
    const fs::path dir = temp_dir("compare");
    std::ostringstream log, err;
    EXPECT_EQ(cmd_compare(dir / "missing.csv", "accuracy", "unseen", dir, log, err), kExitConfig);
    write_file(dir / "one.csv", std::string(kResultsHeader) + "\na,1,unseen,accuracy,0.5\na,2,unseen,accuracy,0.6\n");
    err.str("");
    EXPECT_EQ(cmd_compare(dir / "one.csv", "accuracy", "unseen", dir, log, err), kExitConfig);
    EXPECT_NE(err.str().find("need >= 2 configurations"), std::string::npos) << err.str();
    err.str("");
    EXPECT_EQ(cmd_compare(dir / "one.csv", "kappa", "unseen", dir, log, err), kExitConfig);
    EXPECT_NE(err.str().find("unknown metric"), std::string::npos);
    err.str("");
    EXPECT_EQ(cmd_compare(dir / "one.csv", "accuracy", "both", dir, log, err), kExitConfig);
    EXPECT_NE(err.str().find("unknown split"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Commands, RunConfigErrorsExitTwo) {
    const fs::path dir = temp_dir("bad");
    std::ostringstream log, summary, err;
    EXPECT_EQ(cmd_run(dir / "absent.json", {}, log, summary, err), kExitConfig);
    write_file(dir / "broken.json", "{ not json");
    EXPECT_EQ(cmd_run(dir / "broken.json", {}, log, summary, err), kExitConfig);
    EXPECT_NE(err.str().find("invalid JSON"), std::string::npos);
    Json j = tiny_experiment(dir / "out");
    j["configs"][0]["encoder"] = {{"pool1", 16}, {"pool2", 4}};
    write_file(dir / "geom.json", j.dump());
    err.str("");
    EXPECT_EQ(cmd_run(dir / "geom.json", {}, log, summary, err), kExitConfig);
    EXPECT_NE(err.str().find("minimum pooling extent"), std::string::npos) << err.str();
    EXPECT_FALSE(fs::exists(dir / "out" / "results.csv"));
    fs::remove_all(dir);
}

TEST(Commands, GenDataDefaultsAndErrors) {
    const fs::path dir = temp_dir("gen");
    std::ostringstream log, err;
    ASSERT_EQ(cmd_gen_data(std::nullopt, dir / "a", log, err), kExitOk);
    ArchiveInfo info;
    const auto trials = load_archive(dir / "a", &info);
    EXPECT_EQ(trials, generate_synthetic(SyntheticSpec{}));
    write_file(dir / "bad.json", R"({"data": {"archive": "x"}})");
    EXPECT_EQ(cmd_gen_data(dir / "bad.json", dir / "b", log, err), kExitConfig);
    EXPECT_NE(err.str().find("data.synthetic"), std::string::npos);
    fs::remove_all(dir);
}
