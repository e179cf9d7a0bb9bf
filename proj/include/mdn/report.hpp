#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mdn/stats.hpp"
#include "mdn/train.hpp"

namespace mdn::report {

/// Per-seed values of one metric on one split: values[config][seed index].
struct SeedTable {
    std::string metric;
    std::string split;
    std::vector<std::string> configs; ///< lexicographic
    std::vector<std::uint64_t> seeds; ///< ascending
    std::vector<std::vector<double>> values;
};

/// Selects one metric/split from results rows. Every configuration must
/// report the same seed set; offenders are listed in the error.
inline SeedTable collect(const std::vector<ResultRow>& rows, const std::string& metric, const std::string& split) {
    std::map<std::string, std::map<std::uint64_t, double>> by_config;
    std::set<std::string> metrics, splits;
    for (const auto& r : rows) {
        metrics.insert(r.metric);
        splits.insert(r.split);
        if (r.metric != metric || r.split != split) continue;
        if (!by_config[r.config_id].emplace(r.seed, r.value).second) {
            throw stats::StatsError("duplicate row for config '" + r.config_id + "', seed " + std::to_string(r.seed) +
                                    ", " + split + "/" + metric);
        }
    }
    if (!rows.empty() && !metrics.count(metric)) throw stats::StatsError("unknown metric '" + metric + "'");
    if (!rows.empty() && !splits.count(split)) throw stats::StatsError("unknown split '" + split + "'");
    SeedTable t;
    t.metric = metric;
    t.split = split;
    if (by_config.empty()) return t;
    std::map<std::set<std::uint64_t>, std::vector<std::string>> groups;
    for (const auto& [config, seeds] : by_config) {
        std::set<std::uint64_t> s;
        for (const auto& [seed, v] : seeds) s.insert(seed);
        groups[s].push_back(config);
    }
    if (groups.size() > 1) {
        std::string msg = "configurations report different seed sets:";
        for (const auto& [s, configs] : groups) {
            msg += " {";
            bool first = true;
            for (auto seed : s) {
                msg += (first ? "" : ",") + std::to_string(seed);
                first = false;
            }
            msg += "}:";
            for (const auto& c : configs) msg += " '" + c + "'";
            msg += ";";
        }
        msg.pop_back();
        throw stats::StatsError(msg);
    }
    t.seeds.assign(groups.begin()->first.begin(), groups.begin()->first.end());
    for (const auto& [config, seeds] : by_config) {
        t.configs.push_back(config);
        std::vector<double> v;
        for (const auto& [seed, value] : seeds) v.push_back(value);
        t.values.push_back(std::move(v));
    }
    return t;
}

struct ConfigSummary {
    std::string config;
    std::size_t wins = 0;
    std::size_t losses = 0;
    std::size_t total = 0;
    std::optional<double> rate;
    std::vector<std::string> win_list;
    std::vector<std::string> loss_list;
    /// Evidence levels of the wins, most frequent first, ties strongest first.
    std::vector<std::pair<stats::EvidenceLevel, std::size_t>> evidence;
};

struct WinAnalysis {
    stats::WinLossMatrix matrix;
    std::vector<ConfigSummary> summaries;
    /// level[i][j]: evidence of i over j, when any.
    std::vector<std::vector<std::optional<stats::EvidenceLevel>>> level;
};

inline WinAnalysis build_win_matrix(const SeedTable& t) {
    const std::size_t k = t.configs.size();
    WinAnalysis w;
    w.matrix.assign(k, std::vector<int>(k, 0));
    w.level.assign(k, std::vector<std::optional<stats::EvidenceLevel>>(k));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            w.level[i][j] = stats::assess_evidence(t.values[i], t.values[j]).level;
            w.matrix[i][j] = w.level[i][j] ? 1 : 0;
        }
    for (std::size_t i = 0; i < k; ++i) {
        ConfigSummary s;
        s.config = t.configs[i];
        std::map<stats::EvidenceLevel, std::size_t> tally;
        for (std::size_t j = 0; j < k; ++j) {
            if (w.matrix[i][j]) {
                ++s.wins;
                s.win_list.push_back(t.configs[j]);
                ++tally[*w.level[i][j]];
            }
            if (w.matrix[j][i]) {
                ++s.losses;
                s.loss_list.push_back(t.configs[j]);
            }
        }
        s.total = s.wins + s.losses;
        s.rate = stats::win_rate(w.matrix, i);
        s.evidence.assign(tally.begin(), tally.end());
        std::stable_sort(s.evidence.begin(), s.evidence.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        w.summaries.push_back(std::move(s));
    }
    return w;
}

struct PairRow {
    std::string config_1;
    std::string config_2;
    double mean_1 = 0.0;
    double mean_2 = 0.0;
    double mean_diff = 0.0;
    std::size_t n_seeds = 0;
    stats::BayesPosterior bayes;
    stats::WilcoxonResult wilcoxon;
    stats::PermutationResult permutation;
    double p_value_corrected = 1.0;
    bool significant = false;
};

struct Analysis {
    SeedTable table;
    WinAnalysis wins;
    std::vector<PairRow> pairs; ///< i < j in lexicographic config order
};

/// All pairwise comparisons; Bonferroni over the number of pairs.
inline Analysis analyze(const SeedTable& t, double rope = 0.01, std::size_t n_resamples = 10000) {
    Analysis a;
    a.table = t;
    a.wins = build_win_matrix(t);
    const std::size_t k = t.configs.size();
    const std::size_t m = k * (k - (k ? 1 : 0)) / 2;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            PairRow r;
            r.config_1 = t.configs[i];
            r.config_2 = t.configs[j];
            r.mean_1 = stats::mean(t.values[i]);
            r.mean_2 = stats::mean(t.values[j]);
            r.mean_diff = r.mean_1 - r.mean_2;
            r.n_seeds = t.seeds.size();
            r.bayes = stats::bayes_rope(t.values[i], t.values[j], rope);
            r.wilcoxon = stats::wilcoxon_exact(t.values[i], t.values[j]);
            r.permutation = stats::permutation_test(t.values[i], t.values[j], n_resamples, i * k + j);
            r.p_value_corrected = stats::bonferroni(r.permutation.p_value, m);
            r.significant = r.p_value_corrected < 0.05;
            a.pairs.push_back(std::move(r));
        }
    return a;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::string num(double v) { return mdn::detail::format_double(v, "%.10g"); }

inline std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "; " : "") + items[i];
    return out;
}

} // namespace detail

inline Table practical_evidence_table(const Analysis& a) {
    Table t{{"Config", "Wins", "Losses", "Total", "Rate", "Win List", "Loss List", "Evidence"}, {}};
    for (const auto& s : a.wins.summaries) {
        std::vector<std::string> ev;
        for (const auto& [level, count] : s.evidence) ev.push_back(std::string(stats::to_string(level)) + ":" + std::to_string(count));
        t.rows.push_back({s.config, std::to_string(s.wins), std::to_string(s.losses), std::to_string(s.total),
                          s.rate ? mdn::detail::format_double(*s.rate, "%.3f") : "", detail::join(s.win_list),
                          detail::join(s.loss_list), detail::join(ev)});
    }
    return t;
}

inline Table bayes_table(const Analysis& a) {
    Table t{{"config_1", "config_2", "mean_diff", "p_left", "p_rope", "p_right", "n_seeds"}, {}};
    for (const auto& r : a.pairs) {
        t.rows.push_back({r.config_1, r.config_2, detail::num(r.mean_diff), detail::num(r.bayes.p_left),
                          detail::num(r.bayes.p_rope), detail::num(r.bayes.p_right), std::to_string(r.n_seeds)});
    }
    return t;
}

inline Table wilcoxon_table(const Analysis& a) {
    Table t{{"config_1", "config_2", "mean_diff", "p_value", "mean_1", "mean_2", "n_seeds"}, {}};
    for (const auto& r : a.pairs) {
        t.rows.push_back({r.config_1, r.config_2, detail::num(r.mean_diff), detail::num(r.wilcoxon.p_value),
                          detail::num(r.mean_1), detail::num(r.mean_2), std::to_string(r.n_seeds)});
    }
    return t;
}

inline Table permutation_table(const Analysis& a) {
    Table t{{"config_1", "config_2", "mean_1", "mean_2", "p_value", "statistic", "n_seeds", "p_value_corrected",
             "significant"},
            {}};
    for (const auto& r : a.pairs) {
        t.rows.push_back({r.config_1, r.config_2, detail::num(r.mean_1), detail::num(r.mean_2),
                          detail::num(r.permutation.p_value), detail::num(r.permutation.statistic),
                          std::to_string(r.n_seeds), detail::num(r.p_value_corrected), r.significant ? "TRUE" : "FALSE"});
    }
    return t;
}

inline std::string to_csv(const Table& t) {
    auto line = [](const std::vector<std::string>& cells) {
        std::string out;
        for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + mdn::detail::csv_field(cells[i]);
        return out + "\n";
    };
    std::string out = line(t.header);
    for (const auto& r : t.rows) out += line(r);
    return out;
}

inline std::string to_markdown(const Table& t) {
    auto line = [](const std::vector<std::string>& cells) {
        std::string out = "|";
        for (const auto& c : cells) {
            std::string cell;
            for (char ch : c) cell += ch == '|' ? std::string("\\|") : std::string(1, ch);
            out += " " + cell + " |";
        }
        return out + "\n";
    };
    std::string out = line(t.header) + "|";
    for (std::size_t i = 0; i < t.header.size(); ++i) out += " --- |";
    out += "\n";
    for (const auto& r : t.rows) out += line(r);
    return out;
}

inline const std::vector<std::string>& table_names() {
    static const std::vector<std::string> names{"practical_evidence", "bayes", "wilcoxon", "permutation"};
    return names;
}

inline std::vector<std::pair<std::string, Table>> all_tables(const Analysis& a) {
    return {{"practical_evidence", practical_evidence_table(a)},
            {"bayes", bayes_table(a)},
            {"wilcoxon", wilcoxon_table(a)},
            {"permutation", permutation_table(a)}};
}

/// Writes <name>.csv and <name>.md for each of the four tables; returns the paths.
inline std::vector<std::filesystem::path> write_reports(const Analysis& a, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    for (const auto& [name, table] : all_tables(a)) {
        for (const auto& [ext, text] : {std::pair{".csv", to_csv(table)}, std::pair{".md", to_markdown(table)}}) {
            const auto path = dir / (name + ext);
            std::ofstream out(path, std::ios::binary);
            out << text;
            if (!out) throw std::runtime_error("cannot write " + path.string());
            written.push_back(path);
        }
    }
    return written;
}

} // namespace mdn::report
