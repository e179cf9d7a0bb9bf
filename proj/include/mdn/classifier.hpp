#pragma once

#include <array>
#include <string>

#include "mdn/encoder.hpp"

namespace mdn {

enum class HeadKind { fc, eegnet_style };
enum class ClassifierInput { x, x_hat, decoder_out, z };

struct ClassifierSpec {
    HeadKind head = HeadKind::fc;
    ClassifierInput input = ClassifierInput::z;

    bool operator==(const ClassifierSpec&) const = default;

    bool uses_signal() const { return input != ClassifierInput::z; }

    void validate() const {
        if (head == HeadKind::eegnet_style && input == ClassifierInput::z) {
            throw ConfigError("classifier: eegnet_style head needs a signal input, not z");
        }
    }

    std::string name() const {
        static const char* inputs[] = {"x", "x_hat", "decoder_out", "z"};
        return std::string(head == HeadKind::fc ? "fc_classifier__" : "eegnet_classifier__") +
               inputs[static_cast<int>(input)];
    }

    /// Parses "<fc|eegnet>_classifier__<x|x_hat|decoder_out|z>" (the short
    /// "fc_clsf__deco_out" spellings are accepted too).
    static ClassifierSpec parse(const std::string& text) {
        const auto sep = text.find("__");
        if (sep == std::string::npos) throw ConfigError("classifier: expected '<head>__<input>', got \"" + text + "\"");
        const std::string head = text.substr(0, sep), input = text.substr(sep + 2);
        ClassifierSpec spec;
        if (head == "fc_classifier" || head == "fc_clsf") spec.head = HeadKind::fc;
        else if (head == "eegnet_classifier" || head == "eegn_clsf") spec.head = HeadKind::eegnet_style;
        else throw ConfigError("classifier: unknown head '" + head + "'");
        if (input == "x") spec.input = ClassifierInput::x;
        else if (input == "x_hat") spec.input = ClassifierInput::x_hat;
        else if (input == "decoder_out" || input == "deco_out") spec.input = ClassifierInput::decoder_out;
        else if (input == "z") spec.input = ClassifierInput::z;
        else throw ConfigError("classifier: unknown input '" + input + "'");
        spec.validate();
        return spec;
    }

    /// The seven head/input combinations of the classifier ablation.
    static std::array<ClassifierSpec, 7> ablation_grid() {
        return {parse("eegnet_classifier__x"), parse("eegnet_classifier__x_hat"), parse("eegnet_classifier__decoder_out"),
                parse("fc_classifier__x"),     parse("fc_classifier__x_hat"),     parse("fc_classifier__decoder_out"),
                parse("fc_classifier__z")};
    }
};

/// Tensors the classifier may read; only the one named by the spec is used.
struct ClassifierInputs {
    const Var* x = nullptr;
    const Var* x_hat = nullptr;
    const Var* decoder_out = nullptr;
    const Var* z = nullptr;
};

class Classifier {
public:
    Classifier() = default;

    Classifier(const ClassifierSpec& spec, const EncoderConfig& enc, std::size_t n_classes, Rng& rng)
        : spec_(spec), n_classes_(n_classes) {
        spec_.validate();
        if (spec_.head == HeadKind::fc) {
            const std::size_t in = spec_.uses_signal() ? enc.channels * enc.timepoints : enc.latent_dim;
            w = init_uniform({n_classes, in}, in, rng);
            b = init_zeros({n_classes});
        } else {
            EncoderConfig small = enc;
            small.latent_dim = enc.feature_channels();
            backbone_ = Encoder(small, rng);
            w = init_uniform({n_classes, small.latent_dim}, small.latent_dim, rng);
            b = init_zeros({n_classes});
        }
    }

    const ClassifierSpec& spec() const { return spec_; }

    /// The tensor this head consumes.
    const Var& select(const ClassifierInputs& in) const {
        const Var* v = nullptr;
        const char* what = "";
        switch (spec_.input) {
        case ClassifierInput::x: v = in.x; what = "x"; break;
        case ClassifierInput::x_hat: v = in.x_hat; what = "x_hat"; break;
        case ClassifierInput::decoder_out: v = in.decoder_out; what = "decoder_out"; break;
        case ClassifierInput::z: v = in.z; what = "z"; break;
        }
        if (!v || !v->defined()) throw ConfigError(std::string("classifier: input '") + what + "' is not available");
        return *v;
    }

    Var logits(const ClassifierInputs& in) const { return logits_from(select(in)); }

    /// Logits [B, K] from the selected tensor ([B, D] for z, [B, C, T] otherwise).
    Var logits_from(const Var& input) const {
        if (spec_.head == HeadKind::eegnet_style) {
            Var h = backbone_.attention_pool(backbone_.encode(input).dn3);
            return ops::linear(h, w, b);
        }
        if (spec_.uses_signal()) {
            if (input.shape().size() != 3) throw DimensionError("classifier: expected a [B, C, T] signal");
            return ops::linear(ops::flatten(input), w, b);
        }
        return ops::linear(input, w, b);
    }

    NamedParameters parameters() const {
        NamedParameters p{{"w", w}, {"b", b}};
        if (spec_.head == HeadKind::eegnet_style) append_prefixed(p, "backbone.", backbone_.parameters());
        return p;
    }

    Var w, b;

private:
    ClassifierSpec spec_;
    std::size_t n_classes_ = 0;
    Encoder backbone_;
};

} // namespace mdn
