#pragma once

#include <array>
#include <string>
#include <vector>

#include "mdn/encoder.hpp"

namespace mdn {

/// Which signals feed the decoder.
struct DecoderInputSpec {
    bool use_z = false;
    bool use_x = false;
    bool use_x_hat = false;
    bool use_skips = false;

    bool any() const { return use_z || use_x || use_x_hat || use_skips; }

    bool operator==(const DecoderInputSpec&) const = default;

    /// Canonical name, e.g. "x + x_hat + skips", "z only", "skips only".
    std::string name() const {
        std::vector<std::string> parts;
        if (use_z) parts.emplace_back("z");
        if (use_x) parts.emplace_back("x");
        if (use_x_hat) parts.emplace_back("x_hat");
        if (use_skips) parts.emplace_back("skips");
        if (parts.empty()) return "none";
        if (parts.size() == 1) return parts[0] + " only";
        std::string out = parts[0];
        for (std::size_t i = 1; i < parts.size(); ++i) out += " + " + parts[i];
        return out;
    }

    /// Inverse of name(); also accepts a bare single input ("skips") and '+'
    /// without surrounding spaces.
    static DecoderInputSpec parse(const std::string& text) {
        DecoderInputSpec spec;
        std::string token;
        auto flush = [&] {
            std::string t;
            for (char c : token) {
                if (c != ' ') t += c;
            }
            token.clear();
            if (t.size() > 4 && t.ends_with("only")) t.resize(t.size() - 4);
            if (t == "z") spec.use_z = true;
            else if (t == "x") spec.use_x = true;
            else if (t == "x_hat") spec.use_x_hat = true;
            else if (t == "skips") spec.use_skips = true;
            else throw ConfigError("decoder input: unknown component '" + t + "' in \"" + text + "\"");
        };
        for (char c : text) {
            if (c == '+') flush();
            else token += c;
        }
        flush();
        return spec;
    }

    /// The nine combinations of the decoder-input ablation grid.
    static std::array<DecoderInputSpec, 9> ablation_grid() {
        return {parse("x + x_hat + skips"), parse("x + x_hat"), parse("x + skips"), parse("x_hat + skips"),
                parse("skips only"),        parse("z only"),    parse("z + x"),     parse("z + x_hat"),
                parse("z + skips")};
    }
};

enum class DecoderInit { random, pass_through };

/// Inputs available to decode(); only flagged ones are read.
struct DecoderInputs {
    const Var* z = nullptr;                    ///< [B, D]
    const Var* x = nullptr;                    ///< [B, C, T]
    const Var* x_hat = nullptr;                ///< [B, C, T]
    const MultiScaleFeatures* skips = nullptr; ///< encoder block outputs
};

/// Sum of: learned expansion of z to C x T, learned channel mixing of x and
/// x_hat, and 1x1-projected, time-upsampled encoder block outputs; plus a
/// channel bias.
class Decoder {
public:
    Decoder() = default;

    Decoder(const EncoderConfig& enc, Rng& rng, DecoderInit init = DecoderInit::random)
        : channels_(enc.channels), timepoints_(enc.timepoints) {
        const std::size_t c = enc.channels, t = enc.timepoints, f2 = enc.feature_channels(), d = enc.latent_dim;
        z_w = init_uniform({c * t, d}, d, rng);
        z_b = init_zeros({c * t});
        mix_x = identity_mix(c, init == DecoderInit::random ? &rng : nullptr);
        mix_x_hat = identity_mix(c, init == DecoderInit::random ? &rng : nullptr);
        skip1_w = init_uniform({c, f2, 1}, f2, rng);
        skip2_w = init_uniform({c, f2, 1}, f2, rng);
        skip3_w = init_uniform({c, d, 1}, d, rng);
        bias = init_zeros({c});
        if (init == DecoderInit::pass_through) {
            for (Var* v : {&z_w, &skip1_w, &skip2_w, &skip3_w}) std::fill(v->mutable_value().data.begin(), v->mutable_value().data.end(), 0.0);
        }
    }

    Var decode(const DecoderInputSpec& spec, const DecoderInputs& in) const {
        if (!spec.any()) throw ConfigError("decoder: at least one input must be enabled");
        auto need = [](const void* p, const char* what) {
            if (!p) throw ConfigError(std::string("decoder: input '") + what + "' is enabled but was not supplied");
        };
        std::vector<Var> terms;
        if (spec.use_z) {
            need(in.z, "z");
            const std::size_t batch = in.z->shape().at(0);
            terms.push_back(ops::reshape(ops::linear(*in.z, z_w, z_b), {batch, channels_, timepoints_}));
        }
        if (spec.use_x) {
            need(in.x, "x");
            check_signal(*in.x, "x");
            terms.push_back(ops::conv1d(*in.x, mix_x, Var(), 1));
        }
        if (spec.use_x_hat) {
            need(in.x_hat, "x_hat");
            check_signal(*in.x_hat, "x_hat");
            terms.push_back(ops::conv1d(*in.x_hat, mix_x_hat, Var(), 1));
        }
        if (spec.use_skips) {
            need(in.skips, "skips");
            const Var* w[3] = {&skip1_w, &skip2_w, &skip3_w};
            for (int b = 1; b <= 3; ++b) {
                terms.push_back(ops::upsample_time(ops::conv1d(in.skips->block(b), *w[b - 1], Var(), 1), timepoints_));
            }
        }
        const std::size_t batch = terms[0].shape()[0];
        for (const auto& t : terms) {
            if (t.shape() != Shape{batch, channels_, timepoints_}) {
                throw DimensionError("decoder: inputs disagree on batch size");
            }
        }
        Var sum = terms.size() == 1 ? terms[0] : ops::weighted_sum(terms, std::vector<double>(terms.size(), 1.0));
        return ops::add_channel_bias(sum, bias);
    }

    NamedParameters parameters() const {
        return {{"z_w", z_w},         {"z_b", z_b},         {"mix_x", mix_x}, {"mix_x_hat", mix_x_hat},
                {"skip1_w", skip1_w}, {"skip2_w", skip2_w}, {"skip3_w", skip3_w}, {"bias", bias}};
    }

    Var z_w, z_b, mix_x, mix_x_hat, skip1_w, skip2_w, skip3_w, bias;

private:
    void check_signal(const Var& s, const char* what) const {
        if (s.shape().size() != 3 || s.shape()[1] != channels_ || s.shape()[2] != timepoints_) {
            throw DimensionError(std::string("decoder: input '") + what + "' has shape " + shape_string(s.shape()));
        }
    }

    /// Identity channel-mixing kernel [C, C, 1], optionally jittered.
    static Var identity_mix(std::size_t c, Rng* rng) {
        Tensor w({c, c, 1});
        std::uniform_real_distribution<double> jitter(-0.1, 0.1);
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) w[i * c + j] = (i == j ? 1.0 : 0.0) + (rng ? jitter(*rng) : 0.0);
        return Var::parameter(std::move(w));
    }

    std::size_t channels_ = 0;
    std::size_t timepoints_ = 0;
};

} // namespace mdn
