// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "mdn/experiment.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mdn;
using mdn::testing::gradient_error;
using mdn::testing::random_tensor;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

std::string fmt(const char* f, double v) { return detail::format_double(v, f); }

std::vector<std::size_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
    std::uniform_int_distribution<std::size_t> u(0, k - 1);
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = u(rng);
    return y;
}

std::vector<double> uniform_sample(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

Outcome schedules() {
    Outcome o;
    for (double e : {100.0, 101.0, 150.0, 1000.0}) o.require(std::abs(schedule_beta(e) - 0.05) <= 1e-12, "beta(" + fmt("%g", e) + ")");
    for (double e : {50.0, 51.0, 99.0, 1000.0}) o.require(std::abs(schedule_gamma(e) - 0.2) <= 1e-12, "gamma(" + fmt("%g", e) + ")");
    o.require(schedule_beta(0) == 0.0 && schedule_gamma(0) == 0.0, "zero at epoch 0");
    return o;
}

Outcome loss_gradients() {
    Outcome o;
    Rng rng(2024);
    double worst[5] = {0, 0, 0, 0, 0};
    for (int rep = 0; rep < 20; ++rep) {
        Var logits = Var::parameter(random_tensor({5, 3}, rng, -2.0, 2.0));
        const auto y = random_labels(5, 3, rng);
        worst[0] = std::max(worst[0], gradient_error([&] { return ce_loss(logits, y); }, {logits}));
        worst[1] = std::max(worst[1], gradient_error([&] { return classification_loss(logits, y, ClassificationKind::mse); }, {logits}));
        Var raw = Var::parameter(random_tensor({6, 4}, rng));
        const auto y6 = random_labels(6, 2, rng);
        worst[2] = std::max(worst[2], gradient_error([&] { return supcon_loss(ops::l2_normalize_rows(raw), y6, 0.1); }, {raw}));
        Var a = Var::parameter(random_tensor({2, 3, 4}, rng)), b = Var::parameter(random_tensor({2, 3, 4}, rng));
        worst[3] = std::max(worst[3], gradient_error([&] { return l1_recon(a, b); }, {a, b}));
        Var dec = Var::parameter(random_tensor({5, 2, 3}, rng)), target = Var::parameter(random_tensor({5, 2, 3}, rng));
        Var proj = Var::parameter(random_tensor({5, 4}, rng));
        const double epoch = 10.0 * rep;
        auto total = [&] {
            return total_loss({ce_loss(logits, y), l1_recon(dec, target), supcon_loss(ops::l2_normalize_rows(proj), y, 0.1)}, {},
                              epoch)
                .total;
        };
        worst[4] = std::max(worst[4], gradient_error(total, {logits, dec, target, proj}));
    }
    const char* names[] = {"CE", "MSE", "SupCon", "L1", "total"};
    for (int i = 0; i < 5; ++i) {
        o.require(worst[i] < 1e-4, std::string(names[i]) + " " + fmt("%.2e", worst[i]));
    }
    if (o.pass) o.detail = "worst relative error " + fmt("%.2e", *std::max_element(worst, worst + 5));
    return o;
}

Outcome supcon_oracle() {
    Outcome o;
    Rng rng(31);
    std::uniform_int_distribution<std::size_t> size(2, 8);
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = size(rng), d = 5;
        Tensor z = random_tensor({n, d}, rng);
        const Tensor unit = ops::l2_normalize_rows(Var::constant(z)).value();
        const auto y = random_labels(n, 3, rng);
        worst = std::max(worst, std::abs(supcon_loss(Var::constant(unit), y, 0.07).item() - oracle::supcon(unit.data, d, y, 0.07)));
    }
    o.require(worst <= 1e-9, "max |diff| " + fmt("%.2e", worst));
    if (o.pass) o.detail = "max |diff| " + fmt("%.2e", worst);
    return o;
}

Outcome temporal_mixup() {
    Outcome o;
    Rng rng(41);
    MixupConfig cfg;
    cfg.flip_prob = 0.0;
    const Tensor x = random_tensor({1, 8, 64}, rng), h = random_tensor({1, 8, 64}, rng), d = random_tensor({1, 8, 64}, rng);
    o.require(apply_temporal_mixup(x, h, d, build_temporal_mask(8, 64, cfg, rng)).data == x.data, "p=0 not identity");

    cfg.flip_prob = 0.05;
    std::size_t nonzero = 0, negative = 0;
    bool alphabet = true, bit_equal = true;
    while (nonzero < 10000) {
        const auto m = build_temporal_mask(8, 64, cfg, rng, epoch_flip_ratio(cfg, rng));
        const Tensor hh = random_tensor({1, 8, 64}, rng), dd = random_tensor({1, 8, 64}, rng);
        const Tensor out = apply_temporal_mixup(x, hh, dd, m);
        for (std::size_t i = 0; i < m.cells.size(); ++i) {
            const int c = m.cells[i];
            alphabet = alphabet && (c == -1 || c == 0 || c == 1);
            nonzero += c != 0;
            negative += c == -1;
            if (c == 0) bit_equal = bit_equal && std::memcmp(out.data.data() + i, x.data.data() + i, sizeof(double)) == 0;
        }
    }
    const double frac = static_cast<double>(negative) / static_cast<double>(nonzero);
    o.require(alphabet, "alphabet outside {-1,0,1}");
    o.require(bit_equal, "mask-0 cell differs from x");
    o.require(std::abs(frac - 0.5) <= 0.05, "-1 fraction " + fmt("%.4f", frac));
    if (o.pass) o.detail = "-1 fraction " + fmt("%.4f", frac) + " over " + std::to_string(nonzero) + " cells";
    return o;
}

Outcome normalization() {
    Outcome o;
    Rng rng(51);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    std::map<std::string, std::vector<std::vector<double>>> groups;
    const std::size_t d = 16;
    for (std::string s : {"s1", "s2", "s3", "s4"}) {
        std::vector<double> loc(d), spread(d);
        for (std::size_t i = 0; i < d; ++i) {
            loc[i] = 10.0 * g(rng);
            spread[i] = u(rng);
        }
        for (std::size_t r = 0; r < 40; ++r) {
            std::vector<double> z(d);
            for (std::size_t i = 0; i < d; ++i) z[i] = loc[i] + spread[i] * g(rng);
            groups[s].push_back(z);
        }
    }
    const auto stats = fit_subject_stats(groups);
    double worst_mean = 0.0, worst_sd = 0.0, worst_inv = 0.0;
    for (const auto& [s, latents] : groups) {
        std::vector<double> sum(d, 0.0), sq(d, 0.0);
        for (const auto& z : latents) {
            const auto n = normalize_latent(z, stats, StatsMode::seen, s);
            const auto back = denormalize_latent(n, stats, StatsMode::seen, s);
            for (std::size_t i = 0; i < d; ++i) {
                sum[i] += n[i];
                sq[i] += n[i] * n[i];
                worst_inv = std::max(worst_inv, std::abs(back[i] - z[i]));
            }
        }
        const double n = static_cast<double>(latents.size());
        for (std::size_t i = 0; i < d; ++i) {
            const double mean = sum[i] / n;
            worst_mean = std::max(worst_mean, std::abs(mean));
            worst_sd = std::max(worst_sd, std::abs(std::sqrt(sq[i] / n - mean * mean) - 1.0));
        }
    }
    o.require(worst_mean <= 1e-6, "mean " + fmt("%.2e", worst_mean));
    o.require(worst_sd <= 1e-3, "sd " + fmt("%.2e", worst_sd));
    o.require(worst_inv <= 1e-6, "inverse " + fmt("%.2e", worst_inv));
    if (o.pass) o.detail = "mean " + fmt("%.1e", worst_mean) + ", sd " + fmt("%.1e", worst_sd) + ", inverse " + fmt("%.1e", worst_inv);
    return o;
}

Outcome decoder_invariance() {
    Outcome o;
    EncoderConfig cfg;
    cfg.channels = 8;
    cfg.timepoints = 64;
    cfg.validate();
    struct Inputs {
        Var z, x, x_hat;
        MultiScaleFeatures skips;
    };
    Rng rng(61);
    auto draw = [&](std::size_t b) {
        Inputs s;
        s.z = Var::constant(random_tensor({b, cfg.latent_dim}, rng));
        s.x = Var::constant(random_tensor({b, cfg.channels, cfg.timepoints}, rng));
        s.x_hat = Var::constant(random_tensor({b, cfg.channels, cfg.timepoints}, rng));
        s.skips.dn1 = Var::constant(random_tensor({b, cfg.feature_channels(), cfg.time1()}, rng));
        s.skips.dn2 = Var::constant(random_tensor({b, cfg.feature_channels(), cfg.time2()}, rng));
        s.skips.dn3 = Var::constant(random_tensor({b, cfg.latent_dim, cfg.time3()}, rng));
        return s;
    };
    const auto grid = DecoderInputSpec::ablation_grid();
    o.require(grid.size() == 9, "grid has " + std::to_string(grid.size()) + " combinations");
    Decoder dec(cfg, rng);
    const Inputs base = draw(4);
    for (const auto& spec : grid) {
        Inputs other = draw(4);
        if (spec.use_z) other.z = base.z;
        if (spec.use_x) other.x = base.x;
        if (spec.use_x_hat) other.x_hat = base.x_hat;
        if (spec.use_skips) other.skips = base.skips;
        const Tensor a = dec.decode(spec, {&base.z, &base.x, &base.x_hat, &base.skips}).value();
        const Tensor b = dec.decode(spec, {&other.z, &other.x, &other.x_hat, &other.skips}).value();
        o.require(a.data.size() == b.data.size() && std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(double)) == 0,
                  spec.name());
    }
    if (o.pass) o.detail = "9/9 combinations bit-identical";
    return o;
}

Outcome statistics_fixtures() {
    Outcome o;
    // (a)
    o.require(std::abs(0.4072213877 + 0.4576239803 + 0.135154632 - 1.0) <= 1e-9, "printed triple");
    std::mt19937_64 rng(71);
    for (int rep = 0; rep < 200; ++rep) {
        const auto p = stats::bayes_rope(uniform_sample(3, rng, 0.8, 0.9), uniform_sample(3, rng, 0.8, 0.9));
        if (std::abs(p.p_left + p.p_rope + p.p_right - 1.0) > 1e-9) {
            o.require(false, "posterior triple does not sum to 1");
            break;
        }
    }
    // (b)
    auto rate_with = [](int wins, int losses) {
        stats::WinLossMatrix w(7, std::vector<int>(7, 0));
        for (int j = 1; j <= wins; ++j) w[0][j] = 1;
        for (int j = wins + 1; j <= wins + losses; ++j) w[j][0] = 1;
        return *stats::win_rate(w, 0);
    };
    o.require(rate_with(6, 0) == 1.0, "6/0");
    o.require(detail::format_double(rate_with(4, 2), "%.3f") == "0.667", "4/2");
    o.require(detail::format_double(rate_with(5, 1), "%.3f") == "0.833", "5/1");
    // (c)
    std::set<double> seen;
    for (int rep = 0; rep < 300; ++rep) {
        const double p = stats::wilcoxon_exact(uniform_sample(3, rng, 0.5, 0.9), uniform_sample(3, rng, 0.5, 0.9)).p_value;
        seen.insert(p);
    }
    o.require(std::includes(std::set<double>{0.25, 0.5, 0.75, 1.0}.begin(), std::set<double>{0.25, 0.5, 0.75, 1.0}.end(),
                            seen.begin(), seen.end()),
              "n=3 Wilcoxon p outside {0.25, 0.5, 0.75, 1}");
    // (d)
    o.require(stats::bonferroni(0.5, 36) == 1.0, "bonferroni(0.5, 36)");
    // (e)
    std::vector<ResultRow> rows;
    const double a[] = {0.8580, 0.8586, 0.8592}, b[] = {0.8510, 0.8516, 0.8522};
    for (std::uint64_t s = 0; s < 3; ++s) {
        rows.push_back({"a", s + 1, "unseen", "accuracy", a[s]});
        rows.push_back({"b", s + 1, "unseen", "accuracy", b[s]});
    }
    const auto analysis = report::analyze(report::collect(rows, "accuracy", "unseen"));
    const auto& pair = analysis.pairs.at(0);
    o.require(std::abs(pair.mean_diff - 0.0069930070) <= 1e-3, "report mean_diff " + fmt("%.10f", pair.mean_diff));
    o.require(std::abs(pair.mean_diff - (pair.mean_1 - pair.mean_2)) <= 1e-12, "mean_diff != mean_1 - mean_2");
    o.require(std::abs(0.0069930070 - (0.8586 - 0.8516)) <= 1e-3, "printed row");
    if (o.pass) o.detail = "(a)-(e) hold";
    return o;
}

Outcome test_oracles() {
    Outcome o;
    std::mt19937_64 rng(81);
    std::uniform_int_distribution<int> size(1, 6), coarse(0, 4);
    double worst_w = 0.0, worst_p = 0.0;
    std::set<std::size_t> partitions;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = static_cast<std::size_t>(size(rng));
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rep % 2 ? coarse(rng) * 0.25 : uniform_sample(1, rng, 0.5, 0.9)[0];
            b[i] = rep % 2 ? coarse(rng) * 0.25 : uniform_sample(1, rng, 0.5, 0.9)[0];
        }
        worst_w = std::max(worst_w, std::abs(stats::wilcoxon_exact(a, b).p_value - oracle::wilcoxon_p(a, b)));

        std::vector<double> c = uniform_sample(3, rng, 0.5, 0.9), d = uniform_sample(3, rng, 0.5, 0.9);
        if (rep % 2) {
            for (auto* v : {&c, &d})
                for (auto& x : *v) x = coarse(rng) * 0.1;
        }
        const auto r = stats::permutation_test(c, d);
        partitions.insert(r.resamples);
        worst_p = std::max(worst_p, std::abs(r.p_value - oracle::permutation_p(c, d)));
    }
    o.require(worst_w <= 1e-12, "Wilcoxon max |diff| " + fmt("%.2e", worst_w));
    o.require(worst_p <= 1e-12, "permutation max |diff| " + fmt("%.2e", worst_p));
    o.require(partitions == std::set<std::size_t>{20}, "permutation did not enumerate 20 partitions");
    if (o.pass) o.detail = "200 Wilcoxon + 200 permutation cases exact";
    return o;
}

Outcome bayes_monte_carlo() {
    Outcome o;
    std::mt19937_64 rng(91);
    std::uniform_int_distribution<int> size(3, 10);
    const std::size_t draws = 1000000;
    double worst_z = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = static_cast<std::size_t>(size(rng));
        const auto a = uniform_sample(n, rng, 0.80, 0.86), b = uniform_sample(n, rng, 0.80, 0.86);
        const auto exact = stats::bayes_rope(a, b, 0.01);
        const auto mc = oracle::bayes_monte_carlo(a, b, 0.01, draws, 1000 + rep);
        for (auto [p, q] : {std::pair{exact.p_left, mc.left}, {exact.p_rope, mc.rope}, {exact.p_right, mc.right}}) {
            const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(draws));
            const double z = se > 0.0 ? std::abs(p - q) / se : (p == q ? 0.0 : INFINITY);
            worst_z = std::max(worst_z, z);
        }
    }
    o.require(worst_z <= 3.0, "worst deviation " + fmt("%.2f", worst_z) + " SE");
    if (o.pass) o.detail = "worst deviation " + fmt("%.2f", worst_z) + " SE";
    return o;
}

TrainConfig full_pipeline() {
    TrainConfig c;
    c.name = "full";
    c.epochs = 60;
    c.decoder_input = DecoderInputSpec::parse("x + x_hat + skips");
    c.mixup = MixupConfig{};
    c.mixup->layer = -1;
    return c;
}

Outcome learnability(const std::filesystem::path& work) {
    Outcome o;
    SplitOptions opt;
    opt.unseen_subject_ids = {"s5", "s6"};
    const DatasetSplit split = make_splits(generate_synthetic(SyntheticSpec{}), opt);
    const std::vector<std::uint64_t> seeds{1, 2, 3};

    const std::clock_t start = std::clock();
    std::vector<ResultRow> rows = run_seeds(full_pipeline(), split, seeds, 4);
    const double cpu = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;

    std::string accs;
    int reached = 0;
    for (const auto& r : rows) {
        if (r.split != "unseen" || r.metric != "accuracy") continue;
        accs += (accs.empty() ? "" : " ") + fmt("%.3f", r.value);
        reached += r.value >= 0.50 ? 1 : 0;
    }
    o.require(reached >= 2, "unseen accuracy >= 0.50 for " + std::to_string(reached) + "/3 seeds");
    o.require(cpu <= 600.0, "CPU " + fmt("%.0f", cpu) + " s");

    TrainConfig encoder_only;
    encoder_only.name = "encoder_only";
    encoder_only.use_ddpm = false;
    encoder_only.use_decoder = false;
    const auto baseline = run_seeds(encoder_only, split, seeds, 4);
    rows.insert(rows.end(), baseline.begin(), baseline.end());
    try {
        const auto analysis = report::analyze(report::collect(rows, "accuracy", "unseen"));
        const auto written = report::write_reports(analysis, work / "reports");
        o.require(written.size() == 8, "wrote " + std::to_string(written.size()) + " files");
        for (const auto& p : written) {
            std::ifstream in(p);
            std::size_t lines = 0;
            for (std::string l; std::getline(in, l);) ++lines;
            o.require(lines >= 2, p.filename().string() + " has no rows");
        }
    } catch (const std::exception& e) {
        o.require(false, std::string("report: ") + e.what());
    }
    o.detail = "unseen accuracy " + accs + ", CPU " + fmt("%.0f", cpu) + " s" + (o.pass ? ", 4 tables written" : "; " + o.detail);
    return o;
}

Outcome determinism(const std::filesystem::path& work) {
    Outcome o;
    const Json doc = Json::parse(R"({
      "data": {"synthetic": {"trials_per_subject_class": 8}},
      "seeds": [1, 2],
      "defaults": {"epochs": 3},
      "configs": [{"name": "full", "mixup_layer": -1, "decoder_input": "x + x_hat + skips"},
                  {"name": "baseline"}]
    })");
    {
        std::ofstream(work / "smoke.json") << doc.dump(2);
    }
    std::string csv[2];
    for (int run = 0; run < 2; ++run) {
        RunOptions opt;
        opt.out = work / ("smoke" + std::to_string(run));
        opt.write_checkpoints = false;
        std::ostringstream log, summary, err;
        const int rc = cmd_run(work / "smoke.json", opt, log, summary, err);
        o.require(rc == kExitOk, "run " + std::to_string(run) + " exit " + std::to_string(rc) + " " + err.str());
        std::ifstream in(*opt.out / "results.csv", std::ios::binary);
        csv[run].assign(std::istreambuf_iterator<char>(in), {});
    }
    o.require(!csv[0].empty() && csv[0] == csv[1], "results.csv differs between runs");
    if (o.pass) o.detail = "results.csv byte-identical (" + std::to_string(csv[0].size()) + " bytes)";
    return o;
}

} // namespace

int main() {
    const auto work = std::filesystem::temp_directory_path() / "mdn_acceptance";
    std::filesystem::remove_all(work);
    std::filesystem::create_directories(work);

    struct Criterion {
        int id;
        const char* name;
        double budget_s; ///< 0 = no stated budget
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "schedule fixture", 0, schedules},
        {2, "loss gradients vs finite differences", 30, loss_gradients},
        {3, "SupCon vs triple-loop oracle", 10, supcon_oracle},
        {4, "temporal masked mixup", 10, temporal_mixup},
        {5, "subject-wise normalization", 5, normalization},
        {6, "decoder-input invariance", 30, decoder_invariance},
        {7, "statistics fixtures", 0, statistics_fixtures},
        {8, "Wilcoxon and permutation oracles", 20, test_oracles},
        {9, "Bayesian ROPE vs Monte Carlo", 60, bayes_monte_carlo},
        {10, "end-to-end learnability", 0, [&] { return learnability(work); }},
        {11, "determinism", 120, [&] { return determinism(work); }},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && secs > c.budget_s) {
            o.pass = false;
            o.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
        }
        failed += o.pass ? 0 : 1;
        std::printf("%s  criterion %2d  %-38s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::filesystem::remove_all(work);
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
