#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mdn/classifier.hpp"
#include "mdn/data.hpp"
#include "mdn/decoder.hpp"
#include "mdn/diffusion.hpp"
#include "mdn/encoder.hpp"
#include "mdn/metrics.hpp"
#include "mdn/mixup.hpp"
#include "mdn/objective.hpp"

namespace mdn {

enum class EncoderInput { x, x_hat };

inline const char* to_string(EncoderInput e) { return e == EncoderInput::x ? "x" : "x_hat"; }

struct TrainConfig {
    std::string name = "default";
    std::size_t epochs = 60;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
    bool use_ddpm = true;
    bool use_decoder = true;
    EncoderInput encoder_input = EncoderInput::x;
    DecoderInputSpec decoder_input = DecoderInputSpec::parse("z only");
    DecoderInit decoder_init = DecoderInit::random;
    ClassifierSpec classifier;
    std::optional<MixupConfig> mixup;
    LossWeights loss;
    EncoderConfig encoder;
    DiffusionConfig diffusion;
    double stats_epsilon = 1e-5;
    /// Leading fraction of each seen subject's training trials used for its statistics.
    double seen_stats_fraction = 1.0;
    /// Classify the subject-normalized latent rather than the raw one.
    bool classify_normalized = true;
    /// Let the reconstruction loss backpropagate into the noise predictor.
    bool couple_reconstruction = false;

    /// Checks switch consistency; geometry is checked once the data shape is known.
    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (!(stats_epsilon > 0.0)) throw ConfigError("stats_epsilon must be > 0");
        if (!(seen_stats_fraction > 0.0 && seen_stats_fraction <= 1.0)) throw ConfigError("seen_stats_fraction must lie in (0, 1]");
        loss.validate();
        diffusion.validate();
        classifier.validate();
        if (encoder_input == EncoderInput::x_hat && !use_ddpm) throw ConfigError("encoder_input x_hat requires use_ddpm");
        if (use_decoder) {
            if (!decoder_input.any()) throw ConfigError("decoder_input: at least one input must be enabled");
            if (decoder_input.use_x_hat && !use_ddpm) {
                throw ConfigError("decoder_input \"" + decoder_input.name() + "\" needs x_hat but use_ddpm is false");
            }
        }
        if (classifier.input == ClassifierInput::x_hat && !use_ddpm) {
            throw ConfigError("classifier " + classifier.name() + " needs x_hat but use_ddpm is false");
        }
        if (classifier.input == ClassifierInput::decoder_out && !use_decoder) {
            throw ConfigError("classifier " + classifier.name() + " needs decoder_out but use_decoder is false");
        }
        if (couple_reconstruction && !(use_ddpm && use_decoder)) {
            throw ConfigError("couple_reconstruction requires use_ddpm and use_decoder");
        }
        if (mixup) {
            if (!use_ddpm || !use_decoder) throw ConfigError("mixup requires use_ddpm and use_decoder");
            if (mixup->layer >= 1 && classifier.input != ClassifierInput::z) {
                throw ConfigError("mixup_layer " + std::to_string(mixup->layer) + " mixes encoder activations and needs classifier input z");
            }
        }
    }
};

/// All networks of one trained pipeline plus its normalization statistics.
struct ModelBundle {
    TrainConfig config; ///< encoder geometry resolved to the data shape
    std::size_t n_classes = 0;
    Encoder encoder;
    ProjectionHead projection;
    Diffusion diffusion;
    Decoder decoder;
    Classifier classifier;
    SubjectStats seen_stats;
    SubjectStats calibration_stats;

    static ModelBundle create(TrainConfig cfg, std::size_t channels, std::size_t timepoints, std::size_t n_classes) {
        cfg.validate();
        if (n_classes < 2) throw ConfigError("at least two classes are required");
        cfg.encoder.channels = channels;
        cfg.encoder.timepoints = timepoints;
        cfg.encoder.validate();
        if (cfg.mixup) cfg.mixup->validate(timepoints);
        ModelBundle m;
        m.config = cfg;
        m.n_classes = n_classes;
        Rng rng(cfg.seed);
        m.encoder = Encoder(cfg.encoder, rng);
        m.projection = ProjectionHead(cfg.encoder.latent_dim, cfg.encoder.projection_dim, rng);
        if (cfg.use_ddpm) m.diffusion = Diffusion(cfg.diffusion, channels, n_classes, rng);
        if (cfg.use_decoder) m.decoder = Decoder(cfg.encoder, rng, cfg.decoder_init);
        m.classifier = Classifier(cfg.classifier, cfg.encoder, n_classes, rng);
        return m;
    }

    NamedParameters ddpm_parameters() const {
        NamedParameters p;
        if (config.use_ddpm) append_prefixed(p, "diffusion.", diffusion.parameters());
        return p;
    }

    /// Encoder, projection, decoder and classifier parameters.
    NamedParameters network_parameters() const {
        NamedParameters p;
        append_prefixed(p, "encoder.", encoder.parameters());
        append_prefixed(p, "projection.", projection.parameters());
        if (config.use_decoder) append_prefixed(p, "decoder.", decoder.parameters());
        append_prefixed(p, "classifier.", classifier.parameters());
        return p;
    }

    NamedParameters parameters() const {
        NamedParameters p = network_parameters();
        const auto d = ddpm_parameters();
        p.insert(p.end(), d.begin(), d.end());
        return p;
    }

    /// Whether the inference path reads x_hat.
    bool needs_x_hat() const {
        return config.use_ddpm && (config.encoder_input == EncoderInput::x_hat ||
                                   (config.use_decoder && config.decoder_input.use_x_hat) ||
                                   config.classifier.input == ClassifierInput::x_hat);
    }

    bool classifier_needs_stats() const {
        return config.classifier.input == ClassifierInput::z && config.classify_normalized;
    }
};

/// Activations of one forward pass.
struct ForwardPass {
    Var x;
    Var x_hat;
    Var encoder_input;
    MultiScaleFeatures features;
    Var z;
    Var z_norm;
    Var x_dec;
    Var logits;
};

/// Runs encoder, optional normalization, optional decoder and the classifier.
/// `stats` may be null when the classifier does not read the normalized latent.
inline ForwardPass forward(const ModelBundle& m, const Var& x, const Var& x_hat, const std::vector<std::string>& subjects,
                           const SubjectStats* stats, StatsMode mode, bool with_decoder) {
    ForwardPass f;
    f.x = x;
    f.x_hat = x_hat;
    f.encoder_input = m.config.encoder_input == EncoderInput::x_hat ? x_hat : x;
    if (!f.encoder_input.defined()) throw ConfigError("forward: encoder input x_hat was not supplied");
    f.features = m.encoder.encode(f.encoder_input);
    f.z = m.encoder.attention_pool(f.features.dn3);
    if (stats) f.z_norm = normalize_latent_batch(f.z, *stats, mode, subjects);
    if (m.config.use_decoder && (with_decoder || m.config.classifier.input == ClassifierInput::decoder_out)) {
        f.x_dec = m.decoder.decode(m.config.decoder_input, {&f.z, &f.x, &f.x_hat, &f.features});
    }
    const Var& z_cls = m.config.classify_normalized ? f.z_norm : f.z;
    f.logits = m.classifier.logits({&f.x, &f.x_hat, &f.x_dec, &z_cls});
    return f;
}

struct EpochRecord {
    std::size_t epoch = 0;
    LossBreakdown loss;      ///< batch means
    double ddpm_loss = 0.0;  ///< batch mean, 0 without the DDPM
    std::optional<double> val_accuracy;
    bool classifier_frozen = false;
};

struct TrainResult {
    ModelBundle model;
    std::vector<EpochRecord> history;
};

namespace detail {

struct TrialBatch {
    std::vector<const LabeledTrial*> trials;
    std::vector<std::size_t> labels;
    std::vector<std::string> subjects;
};

inline TrialBatch gather(const std::vector<LabeledTrial>& trials, const std::vector<std::size_t>& idx) {
    TrialBatch b;
    for (auto i : idx) {
        b.trials.push_back(&trials[i]);
        b.labels.push_back(trials[i].label);
        b.subjects.push_back(trials[i].subject_id);
    }
    return b;
}

inline Tensor take_rows(const Tensor& all, const std::vector<std::size_t>& idx) {
    const std::size_t row = all.size() / all.shape[0];
    Shape s = all.shape;
    s[0] = idx.size();
    Tensor out(s);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(all.data.begin() + idx[k] * row, row, out.data.begin() + k * row);
    }
    return out;
}

/// Batches of `size` in permuted order; a trailing batch of one trial is
/// merged into the previous batch so every batch has a contrastive pair.
inline std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += size) {
        out.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + size));
    }
    if (out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back()[0]);
        out.pop_back();
    }
    return out;
}

inline Rng derived_rng(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(salt)};
    return Rng(seq);
}

inline std::size_t infer_classes(const DatasetSplit& split) {
    std::size_t k = 0;
    for (const auto* part : {&split.train, &split.val, &split.test_seen, &split.calibration_unseen}) {
        for (const auto& t : *part) k = std::max(k, t.label + 1);
    }
    return k;
}

} // namespace detail

/// Refined signals for a trial set (null condition: labels are unknown at inference).
inline Tensor refine_signals(const ModelBundle& m, const Tensor& x, Rng& rng) {
    NoGradGuard guard;
    return m.diffusion.denoise(x, nullptr, rng);
}

/// Per-subject latent statistics of `trials` under the current encoder.
/// With `fraction` < 1 only the first ceil(fraction * n_s) trials of each subject are used.
inline SubjectStats fit_stats_for(const ModelBundle& m, const std::vector<LabeledTrial>& trials, const Tensor* x_hat,
                                  double fraction = 1.0) {
    NoGradGuard guard;
    const Tensor x = stack_signals(trials);
    const Tensor& in = m.config.encoder_input == EncoderInput::x_hat ? *x_hat : x;
    const Tensor z = m.encoder.attention_pool(m.encoder.encode(Var::constant(in)).dn3).value();
    const std::size_t d = z.shape[1];
    std::map<std::string, std::size_t> counts;
    for (const auto& t : trials) ++counts[t.subject_id];
    std::map<std::string, std::vector<std::vector<double>>> groups;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        auto& g = groups[trials[i].subject_id];
        const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(counts[trials[i].subject_id])));
        if (g.size() < std::max<std::size_t>(1, keep)) g.emplace_back(z.data.begin() + i * d, z.data.begin() + (i + 1) * d);
    }
    return fit_subject_stats(groups, m.config.stats_epsilon);
}

inline Rng evaluation_rng(const ModelBundle& m) { return detail::derived_rng(m.config.seed, 0xE7A1); }

/// Fits unseen-subject statistics from calibration trials; no weights change.
inline void calibrate(ModelBundle& m, const std::vector<LabeledTrial>& calibration) {
    if (calibration.empty()) throw ConfigError("calibrate: no calibration trials");
    std::optional<Tensor> x_hat;
    if (m.config.encoder_input == EncoderInput::x_hat) {
        Rng rng = evaluation_rng(m);
        x_hat = refine_signals(m, stack_signals(calibration), rng);
    }
    m.calibration_stats = fit_stats_for(m, calibration, x_hat ? &*x_hat : nullptr);
}

/// Softmax scores [N, K] for a trial set.
inline Tensor predict_scores(const ModelBundle& m, const std::vector<LabeledTrial>& trials, StatsMode mode,
                             const SubjectStats* stats_override = nullptr) {
    if (trials.empty()) throw DimensionError("evaluate: empty trial set");
    NoGradGuard guard;
    const Tensor x = stack_signals(trials);
    Var x_hat;
    if (m.needs_x_hat()) {
        Rng rng = evaluation_rng(m);
        x_hat = Var::constant(refine_signals(m, x, rng));
    }
    const SubjectStats* stats = nullptr;
    if (m.classifier_needs_stats()) {
        stats = stats_override ? stats_override : (mode == StatsMode::seen ? &m.seen_stats : &m.calibration_stats);
        if (mode == StatsMode::unseen && !stats_override && m.calibration_stats.subjects.empty()) {
            throw ConfigError("evaluate: unseen mode requires calibration statistics (call calibrate first)");
        }
    }
    std::vector<std::string> subjects;
    for (const auto& t : trials) subjects.push_back(t.subject_id);
    const auto f = forward(m, Var::constant(x), x_hat, subjects, stats, mode, false);
    return softmax_rows(f.logits.value());
}

inline MetricReport evaluate(const ModelBundle& m, const std::vector<LabeledTrial>& trials, StatsMode mode,
                             const SubjectStats* stats_override = nullptr) {
    const Tensor scores = predict_scores(m, trials, mode, stats_override);
    std::vector<std::size_t> truth;
    for (const auto& t : trials) {
        if (t.label >= m.n_classes) throw DimensionError("evaluate: label " + std::to_string(t.label) + " >= K");
        truth.push_back(t.label);
    }
    return compute_metrics(truth, scores, m.n_classes);
}

/// Optional per-epoch observer (epoch record, model).
using EpochCallback = std::function<void(const EpochRecord&, const ModelBundle&)>;

/// Joint training: per batch one DDPM step, then one step on the weighted
/// classification + reconstruction + contrastive objective. Only the train
/// and val partitions are read; calibration_unseen is used afterwards to fit
/// unseen-subject statistics. Deterministic given config.seed.
inline TrainResult train(const TrainConfig& config, const DatasetSplit& split, std::size_t n_classes = 0,
                         const EpochCallback& on_epoch = {}) {
    config.validate();
    if (split.train.size() < 2) throw ConfigError("train: at least two training trials are required");
    const std::size_t channels = split.train[0].channels, timepoints = split.train[0].timepoints;
    if (n_classes == 0) n_classes = detail::infer_classes(split);
    for (const auto* part : {&split.train, &split.val}) {
        for (const auto& t : *part) validate_trial(t, channels, timepoints, n_classes);
    }
    TrainResult result{ModelBundle::create(config, channels, timepoints, n_classes), {}};
    ModelBundle& m = result.model;
    const TrainConfig& cfg = m.config;
    Rng rng = detail::derived_rng(cfg.seed, 0x7A11);

    NamedParameters main_params = m.network_parameters();
    if (cfg.couple_reconstruction) {
        const auto d = m.ddpm_parameters();
        main_params.insert(main_params.end(), d.begin(), d.end());
    }
    Adam main_opt(main_params, {cfg.learning_rate});
    Adam ddpm_opt(m.ddpm_parameters(), {cfg.learning_rate});

    const auto& train_set = split.train;
    const Tensor x_all = stack_signals(train_set);
    const std::size_t n = train_set.size();
    const bool gate = cfg.mixup && cfg.mixup->warmup_epochs > 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double e = static_cast<double>(epoch);
        Tensor x_hat_all;
        if (cfg.use_ddpm) x_hat_all = refine_signals(m, x_all, rng);
        const SubjectStats stats = fit_stats_for(m, train_set, cfg.use_ddpm ? &x_hat_all : nullptr, cfg.seen_stats_fraction);
        MixupEpoch mix_state;
        if (cfg.mixup) mix_state = begin_mixup_epoch(*cfg.mixup, epoch, rng);
        const bool frozen = gate && epoch < cfg.mixup->warmup_epochs;

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.classifier_frozen = frozen;
        const auto batches = detail::make_batches(order, cfg.batch_size);
        for (const auto& idx : batches) {
            const auto batch = detail::gather(train_set, idx);
            const Tensor xb = detail::take_rows(x_all, idx);

            if (cfg.use_ddpm) {
                ddpm_opt.zero_grad();
                auto terms = m.diffusion.train_loss(xb, batch.labels, rng);
                backward(terms.total);
                ddpm_opt.step();
                rec.ddpm_loss += terms.total.item();
            }

            main_opt.zero_grad();
            Var xv = Var::constant(xb);
            Var xhv;
            if (cfg.use_ddpm) {
                xhv = cfg.couple_reconstruction ? m.diffusion.denoise_graph(xb, nullptr, rng)
                                                : Var::constant(detail::take_rows(x_hat_all, idx));
            }
            ForwardPass f = forward(m, xv, xhv, batch.subjects, &stats, StatsMode::seen, true);

            if (cfg.mixup && mixup_active(*cfg.mixup, epoch)) {
                const int layer = cfg.mixup->layer;
                const Var x_dec = detach(f.x_dec);
                const Var& z_cls_base = cfg.classify_normalized ? f.z_norm : f.z;
                auto classify_latent = [&](const Var& z) {
                    const Var zc = cfg.classify_normalized
                                       ? normalize_latent_batch(z, stats, StatsMode::seen, batch.subjects)
                                       : z;
                    return m.classifier.logits_from(zc);
                };
                if (layer <= 0) {
                    const bool on_z = cfg.classifier.input == ClassifierInput::z;
                    Var base = on_z ? f.encoder_input : m.classifier.select({&f.x, &f.x_hat, &f.x_dec, &z_cls_base});
                    Var mixed = mixup_at(layer, mix_state, *cfg.mixup, {base, f.x_hat, x_dec}, rng);
                    f.logits = on_z ? classify_latent(m.encoder.attention_pool(m.encoder.encode(mixed).dn3))
                                    : m.classifier.logits_from(mixed);
                } else if (layer <= 3) {
                    Var h_hat = f.x_hat, h_dec = x_dec;
                    for (int b = 1; b <= layer; ++b) {
                        h_hat = m.encoder.block(b, h_hat);
                        h_dec = m.encoder.block(b, h_dec);
                    }
                    Var mixed = mixup_at(layer, mix_state, *cfg.mixup, {f.features.block(layer), h_hat, h_dec}, rng);
                    f.logits = classify_latent(m.encoder.attention_pool(m.encoder.features_from(layer, mixed)));
                } else {
                    Var z_hat = m.encoder.attention_pool(m.encoder.encode(f.x_hat).dn3);
                    Var z_dec = m.encoder.attention_pool(m.encoder.encode(x_dec).dn3);
                    f.logits = classify_latent(mixup_at(layer, mix_state, *cfg.mixup, {f.z, z_hat, z_dec}, rng));
                }
            }

            LossParts parts;
            parts.classification = classification_loss(f.logits, batch.labels, cfg.loss.classification_kind);
            if (cfg.use_decoder) parts.reconstruction = l1_recon(f.x_dec, cfg.use_ddpm ? f.x_hat : f.x);
            if (idx.size() >= 2) parts.contrastive = supcon_loss(m.projection.project(f.z_norm), batch.labels, cfg.loss.tau);
            TotalLoss total = total_loss(parts, cfg.loss, e);
            if (frozen) {
                LossParts trainable = parts;
                trainable.classification = Var();
                backward(total_loss(trainable, cfg.loss, e).total);
            } else {
                backward(total.total);
            }
            main_opt.step();

            rec.loss.classification += total.breakdown.classification;
            rec.loss.reconstruction += total.breakdown.reconstruction;
            rec.loss.contrastive += total.breakdown.contrastive;
            rec.loss.beta = total.breakdown.beta;
            rec.loss.gamma = total.breakdown.gamma;
        }
        const double nb = static_cast<double>(batches.size());
        rec.loss.classification /= nb;
        rec.loss.reconstruction /= nb;
        rec.loss.contrastive /= nb;
        rec.loss.total = cfg.loss.alpha * rec.loss.classification + rec.loss.beta * rec.loss.reconstruction +
                         rec.loss.gamma * rec.loss.contrastive;
        rec.ddpm_loss /= nb;
        if (!split.val.empty()) {
            m.seen_stats = fit_stats_for(m, train_set, cfg.use_ddpm ? &x_hat_all : nullptr, cfg.seen_stats_fraction);
            rec.val_accuracy = evaluate(m, split.val, StatsMode::seen).accuracy;
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec, m);
    }

    std::optional<Tensor> x_hat_final;
    if (cfg.encoder_input == EncoderInput::x_hat) {
        Rng eval_rng = evaluation_rng(m);
        x_hat_final = refine_signals(m, x_all, eval_rng);
    }
    m.seen_stats = fit_stats_for(m, train_set, x_hat_final ? &*x_hat_final : nullptr, cfg.seen_stats_fraction);
    if (!split.calibration_unseen.empty()) calibrate(m, split.calibration_unseen);
    return result;
}

struct ResultRow {
    std::string config_id;
    std::uint64_t seed = 0;
    std::string split; ///< "seen" or "unseen"
    std::string metric;
    double value = 0.0;

    bool operator==(const ResultRow&) const = default;
};

inline void append_metric_rows(std::vector<ResultRow>& rows, const std::string& config_id, std::uint64_t seed,
                               const std::string& split, const MetricReport& r) {
    for (const auto& name : metric_names()) {
        if (auto v = metric_value(r, name)) rows.push_back({config_id, seed, split, name, *v});
    }
}

/// One train + evaluate per seed; rows for the seen and unseen test sets
/// (when nonempty). A macro_auc that is undefined produces no row.
inline std::vector<ResultRow> run_seeds(const TrainConfig& config, const DatasetSplit& split,
                                        const std::vector<std::uint64_t>& seeds, std::size_t n_classes = 0,
                                        const std::function<void(std::uint64_t, const TrainResult&)>& on_trained = {}) {
    if (seeds.empty()) throw ConfigError("run_seeds: at least one seed is required");
    std::vector<ResultRow> rows;
    for (auto seed : seeds) {
        TrainConfig cfg = config;
        cfg.seed = seed;
        TrainResult tr = train(cfg, split, n_classes);
        if (!split.test_seen.empty()) append_metric_rows(rows, config.name, seed, "seen", evaluate(tr.model, split.test_seen, StatsMode::seen));
        if (!split.test_unseen.empty()) {
            append_metric_rows(rows, config.name, seed, "unseen", evaluate(tr.model, split.test_unseen, StatsMode::unseen));
        }
        if (on_trained) on_trained(seed, tr);
    }
    return rows;
}

/// Canonical ordering: config, seed, split, then metric reporting order.
inline void sort_results(std::vector<ResultRow>& rows) {
    auto metric_rank = [](const std::string& name) {
        const auto& names = metric_names();
        return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
    };
    std::stable_sort(rows.begin(), rows.end(), [&](const ResultRow& a, const ResultRow& b) {
        if (a.config_id != b.config_id) return a.config_id < b.config_id;
        if (a.seed != b.seed) return a.seed < b.seed;
        if (a.split != b.split) return a.split < b.split;
        const auto ra = metric_rank(a.metric), rb = metric_rank(b.metric);
        if (ra != rb) return ra < rb;
        return a.metric < b.metric;
    });
}

inline const char* kResultsHeader = "config_id,seed,split,metric,value";

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string format_double(double v, const char* fmt = "%.17g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

} // namespace detail

inline std::string results_to_csv(std::vector<ResultRow> rows) {
    sort_results(rows);
    std::string out = std::string(kResultsHeader) + "\n";
    for (const auto& r : rows) {
        out += detail::csv_field(r.config_id) + "," + std::to_string(r.seed) + "," + r.split + "," + r.metric + "," +
               detail::format_double(r.value) + "\n";
    }
    return out;
}

inline void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << results_to_csv(rows);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline std::vector<ResultRow> parse_results_csv(std::istream& in, const std::string& source = "results") {
    std::string line;
    if (!std::getline(in, line)) throw FormatError(source + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kResultsHeader) throw FormatError(source + ": expected header '" + kResultsHeader + "'");
    std::vector<ResultRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        const std::string where = source + ":" + std::to_string(lineno);
        if (f.size() != 5) throw FormatError(where + ": expected 5 fields, got " + std::to_string(f.size()));
        ResultRow r;
        r.config_id = f[0];
        r.split = f[2];
        r.metric = f[3];
        try {
            std::size_t used = 0;
            r.seed = std::stoull(f[1], &used);
            if (used != f[1].size()) throw std::invalid_argument("seed");
            r.value = std::stod(f[4], &used);
            if (used != f[4].size()) throw std::invalid_argument("value");
        } catch (const std::exception&) {
            throw FormatError(where + ": malformed seed or value");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open results file " + path.string());
    return parse_results_csv(in, path.string());
}

} // namespace mdn
