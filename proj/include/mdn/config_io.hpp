#pragma once

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdn/train.hpp"

namespace mdn {

using Json = nlohmann::json;

namespace detail {

/// Typed access to one JSON object with errors that name the offending field.
class FieldReader {
public:
    FieldReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where("") + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    template <class T>
    void read(const std::string& key, T& out) const {
        seen_.insert(key);
        if (!has(key)) return;
        out = get<T>(key);
    }

    template <class T>
    T get(const std::string& key) const {
        seen_.insert(key);
        const Json& v = j_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
            return v.get<std::string>();
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            T out;
            if (!v.is_array()) throw ConfigError(where(key) + ": expected an array of strings");
            for (const auto& item : v) {
                if (!item.is_string()) throw ConfigError(where(key) + ": expected an array of strings");
                out.push_back(item.get<std::string>());
            }
            return out;
        } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || v.get<long long>() < 0) {
                throw ConfigError(where(key) + ": expected a non-negative integer");
            }
            return v.get<T>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
            return v.get<T>();
        } else {
            if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
            return v.get<T>();
        }
    }

    void mark(const std::string& key) const { seen_.insert(key); }

    const Json& at(const std::string& key) const {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string where(const std::string& key) const {
        if (key.empty()) return path_.empty() ? "config" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    /// Rejects keys that were never looked up (typos would otherwise be silent).
    void reject_unknown() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown field");
        }
    }

private:
    const Json& j_;
    std::string path_;
    mutable std::set<std::string> seen_;
};

/// Runs `fn`, prefixing ConfigErrors from nested parsers with a field path.
template <class Fn>
auto with_field(const std::string& field, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        throw ConfigError(field + ": " + e.what());
    }
}

} // namespace detail

inline Json encoder_to_json(const EncoderConfig& e) {
    return {{"temporal_filters", e.temporal_filters},
            {"depth_multiplier", e.depth_multiplier},
            {"latent_dim", e.latent_dim},
            {"projection_dim", e.projection_dim},
            {"pool1", e.pool1},
            {"pool2", e.pool2},
            {"pool3", e.pool3},
            {"kernel1", e.kernel1},
            {"kernel2", e.kernel2},
            {"kernel3", e.kernel3}};
}

inline EncoderConfig encoder_from_json(const Json& j, const std::string& path) {
    detail::FieldReader r(j, path);
    EncoderConfig e;
    r.read("temporal_filters", e.temporal_filters);
    r.read("depth_multiplier", e.depth_multiplier);
    r.read("latent_dim", e.latent_dim);
    r.read("projection_dim", e.projection_dim);
    r.read("pool1", e.pool1);
    r.read("pool2", e.pool2);
    r.read("pool3", e.pool3);
    r.read("kernel1", e.kernel1);
    r.read("kernel2", e.kernel2);
    r.read("kernel3", e.kernel3);
    r.reject_unknown();
    return e;
}

inline Json diffusion_to_json(const DiffusionConfig& d) {
    return {{"n_steps", d.n_steps},
            {"beta_start", d.beta_start},
            {"beta_end", d.beta_end},
            {"conditioning", d.conditioning == Conditioning::label ? "label" : "none"},
            {"hidden", d.hidden},
            {"kernel", d.kernel},
            {"refine_strength", d.refine_strength},
            {"full_sampling", d.full_sampling},
            {"reverse_noise", d.reverse_noise},
            {"lambda_aux", d.lambda_aux},
            {"condition_dropout", d.condition_dropout}};
}

inline DiffusionConfig diffusion_from_json(const Json& j, const std::string& path) {
    detail::FieldReader r(j, path);
    DiffusionConfig d;
    r.read("n_steps", d.n_steps);
    r.read("beta_start", d.beta_start);
    r.read("beta_end", d.beta_end);
    if (r.has("conditioning")) {
        const auto c = r.get<std::string>("conditioning");
        if (c == "label") d.conditioning = Conditioning::label;
        else if (c == "none") d.conditioning = Conditioning::none;
        else throw ConfigError(r.where("conditioning") + ": expected \"label\" or \"none\"");
    }
    r.read("hidden", d.hidden);
    r.read("kernel", d.kernel);
    r.read("refine_strength", d.refine_strength);
    r.read("full_sampling", d.full_sampling);
    r.read("reverse_noise", d.reverse_noise);
    r.read("lambda_aux", d.lambda_aux);
    r.read("condition_dropout", d.condition_dropout);
    r.reject_unknown();
    detail::with_field(path, [&] { d.validate(); });
    return d;
}

inline Json train_config_to_json(const TrainConfig& c) {
    Json j = {{"name", c.name},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"seed", c.seed},
              {"use_ddpm", c.use_ddpm},
              {"use_decoder", c.use_decoder},
              {"encoder_input", to_string(c.encoder_input)},
              {"decoder_input", c.decoder_input.name()},
              {"decoder_init", c.decoder_init == DecoderInit::random ? "random" : "pass_through"},
              {"classifier", c.classifier.name()},
              {"loss", c.loss.name()},
              {"alpha", c.loss.alpha},
              {"beta_max", c.loss.beta_max},
              {"beta_epochs", c.loss.beta_epochs},
              {"beta_scheduled", c.loss.beta_scheduled},
              {"gamma_max", c.loss.gamma_max},
              {"gamma_epochs", c.loss.gamma_epochs},
              {"gamma_scheduled", c.loss.gamma_scheduled},
              {"classification_kind", to_string(c.loss.classification_kind)},
              {"tau", c.loss.tau},
              {"stats_epsilon", c.stats_epsilon},
              {"seen_stats_fraction", c.seen_stats_fraction},
              {"classify_normalized", c.classify_normalized},
              {"couple_reconstruction", c.couple_reconstruction},
              {"encoder", encoder_to_json(c.encoder)},
              {"diffusion", diffusion_to_json(c.diffusion)}};
    if (c.mixup) {
        j["mixup_layer"] = c.mixup->layer;
        j["flip_prob"] = c.mixup->flip_prob;
        j["window_min"] = c.mixup->window_min;
        j["window_max"] = c.mixup->window_max;
        j["ratio_mode"] = to_string(c.mixup->ratio_mode);
        j["warmup_epochs"] = c.mixup->warmup_epochs;
    } else {
        j["mixup_layer"] = nullptr;
    }
    return j;
}

/// Parses one training configuration, starting from `base` (defaults or a
/// shared "defaults" block). A "loss" name sets all weights at once; the
/// explicit weight keys then override it.
inline TrainConfig train_config_from_json(const Json& j, const std::string& path, const TrainConfig& base = {}) {
    detail::FieldReader r(j, path);
    TrainConfig c = base;
    r.read("name", c.name);
    r.read("epochs", c.epochs);
    r.read("batch_size", c.batch_size);
    r.read("learning_rate", c.learning_rate);
    r.read("seed", c.seed);
    r.read("use_ddpm", c.use_ddpm);
    r.read("use_decoder", c.use_decoder);
    if (r.has("encoder_input")) {
        const auto s = r.get<std::string>("encoder_input");
        if (s == "x") c.encoder_input = EncoderInput::x;
        else if (s == "x_hat") c.encoder_input = EncoderInput::x_hat;
        else throw ConfigError(r.where("encoder_input") + ": expected \"x\" or \"x_hat\"");
    }
    if (r.has("decoder_input")) {
        const auto s = r.get<std::string>("decoder_input");
        c.decoder_input = detail::with_field(r.where("decoder_input"), [&] { return DecoderInputSpec::parse(s); });
    }
    if (r.has("decoder_init")) {
        const auto s = r.get<std::string>("decoder_init");
        if (s == "random") c.decoder_init = DecoderInit::random;
        else if (s == "pass_through") c.decoder_init = DecoderInit::pass_through;
        else throw ConfigError(r.where("decoder_init") + ": expected \"random\" or \"pass_through\"");
    }
    if (r.has("classifier")) {
        const auto s = r.get<std::string>("classifier");
        c.classifier = detail::with_field(r.where("classifier"), [&] { return ClassifierSpec::parse(s); });
    }
    if (r.has("loss")) {
        const auto s = r.get<std::string>("loss");
        const double tau = c.loss.tau;
        c.loss = detail::with_field(r.where("loss"), [&] { return LossWeights::parse(s); });
        c.loss.tau = tau;
    }
    r.read("alpha", c.loss.alpha);
    r.read("beta_max", c.loss.beta_max);
    r.read("beta_epochs", c.loss.beta_epochs);
    r.read("beta_scheduled", c.loss.beta_scheduled);
    r.read("gamma_max", c.loss.gamma_max);
    r.read("gamma_epochs", c.loss.gamma_epochs);
    r.read("gamma_scheduled", c.loss.gamma_scheduled);
    if (r.has("classification_kind")) {
        const auto s = r.get<std::string>("classification_kind");
        if (s == "CE") c.loss.classification_kind = ClassificationKind::ce;
        else if (s == "MSE") c.loss.classification_kind = ClassificationKind::mse;
        else throw ConfigError(r.where("classification_kind") + ": expected \"CE\" or \"MSE\"");
    }
    r.read("tau", c.loss.tau);
    r.read("stats_epsilon", c.stats_epsilon);
    r.read("seen_stats_fraction", c.seen_stats_fraction);
    r.read("classify_normalized", c.classify_normalized);
    r.read("couple_reconstruction", c.couple_reconstruction);
    if (r.has("encoder")) c.encoder = encoder_from_json(r.at("encoder"), r.where("encoder"));
    if (r.has("diffusion")) c.diffusion = diffusion_from_json(r.at("diffusion"), r.where("diffusion"));

    const bool mixup_keys = r.has("flip_prob") || r.has("window_min") || r.has("window_max") || r.has("ratio_mode") ||
                            r.has("warmup_epochs");
    if (j.contains("mixup_layer")) {
        r.mark("mixup_layer");
        if (j.at("mixup_layer").is_null()) c.mixup.reset();
        else {
            MixupConfig mc = c.mixup.value_or(MixupConfig{});
            mc.layer = r.get<int>("mixup_layer");
            c.mixup = mc;
        }
    }
    if (mixup_keys) {
        if (!c.mixup) throw ConfigError(r.where("mixup_layer") + ": mixup settings given but mixup_layer is not set");
        r.read("flip_prob", c.mixup->flip_prob);
        r.read("window_min", c.mixup->window_min);
        r.read("window_max", c.mixup->window_max);
        if (r.has("ratio_mode")) {
            const auto s = r.get<std::string>("ratio_mode");
            if (s == "fixed") c.mixup->ratio_mode = RatioMode::fixed;
            else if (s == "random") c.mixup->ratio_mode = RatioMode::random;
            else throw ConfigError(r.where("ratio_mode") + ": expected \"fixed\" or \"random\"");
        }
        r.read("warmup_epochs", c.mixup->warmup_epochs);
    }
    for (const char* k : {"flip_prob", "window_min", "window_max", "ratio_mode", "warmup_epochs"}) r.mark(k);
    r.reject_unknown();
    if (c.mixup && (c.mixup->layer < -1 || c.mixup->layer > 4)) {
        throw ConfigError(r.where("mixup_layer") + ": must be null or one of -1, 0, 1, 2, 3, 4");
    }
    detail::with_field(r.where(""), [&] { c.validate(); });
    return c;
}

} // namespace mdn
