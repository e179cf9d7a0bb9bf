#include <gtest/gtest.h>

#include "mdn/classifier.hpp"
#include "mdn/decoder.hpp"
#include "support.hpp"

using namespace mdn;
using mdn::testing::gradient_error;
using mdn::testing::random_tensor;

namespace {

EncoderConfig small_config() {
    EncoderConfig c;
    c.channels = 3;
    c.timepoints = 16;
    c.temporal_filters = 2;
    c.depth_multiplier = 2;
    c.latent_dim = 5;
    c.pool1 = 2;
    return c;
}

struct InputSet {
    Var z, x, x_hat;
    MultiScaleFeatures skips;

    DecoderInputs view() const { return {&z, &x, &x_hat, &skips}; }
};

InputSet random_inputs(const EncoderConfig& c, std::size_t batch, Rng& rng) {
    InputSet s;
    s.z = Var::constant(random_tensor({batch, c.latent_dim}, rng));
    s.x = Var::constant(random_tensor({batch, c.channels, c.timepoints}, rng));
    s.x_hat = Var::constant(random_tensor({batch, c.channels, c.timepoints}, rng));
    s.skips.dn1 = Var::constant(random_tensor({batch, c.feature_channels(), c.time1()}, rng));
    s.skips.dn2 = Var::constant(random_tensor({batch, c.feature_channels(), c.time2()}, rng));
    s.skips.dn3 = Var::constant(random_tensor({batch, c.latent_dim, c.time3()}, rng));
    return s;
}

} // namespace

TEST(DecoderInputSpec, NamesRoundTrip) {
    for (const auto& spec : DecoderInputSpec::ablation_grid()) EXPECT_EQ(DecoderInputSpec::parse(spec.name()), spec);
    EXPECT_EQ(DecoderInputSpec::parse("x+x_hat+skips").name(), "x + x_hat + skips");
    EXPECT_EQ(DecoderInputSpec::parse("skips").name(), "skips only");
    EXPECT_THROW(DecoderInputSpec::parse("z + y"), ConfigError);
    std::set<std::string> names;
    for (const auto& spec : DecoderInputSpec::ablation_grid()) names.insert(spec.name());
    EXPECT_EQ(names.size(), 9u);
}

TEST(Decoder, UnflaggedInputsDoNotAffectOutput) {
    const auto cfg = small_config();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        Decoder dec(cfg, rng);
        const InputSet base = random_inputs(cfg, 3, rng);
        for (const auto& spec : DecoderInputSpec::ablation_grid()) {
            InputSet other = random_inputs(cfg, 3, rng);
            if (spec.use_z) other.z = base.z;
            if (spec.use_x) other.x = base.x;
            if (spec.use_x_hat) other.x_hat = base.x_hat;
            if (spec.use_skips) other.skips = base.skips;
            const Tensor a = dec.decode(spec, base.view()).value();
            const Tensor b = dec.decode(spec, other.view()).value();
            ASSERT_EQ(a.shape, (Shape{3, 3, 16}));
            EXPECT_EQ(a.data, b.data) << spec.name();
        }
    }
}

TEST(Decoder, FlaggedInputsDoAffectOutput) {
    const auto cfg = small_config();
    Rng rng(1);
    Decoder dec(cfg, rng);
    const InputSet base = random_inputs(cfg, 2, rng);
    for (const auto& spec : DecoderInputSpec::ablation_grid()) {
        const InputSet other = random_inputs(cfg, 2, rng);
        EXPECT_NE(dec.decode(spec, base.view()).value().data, dec.decode(spec, other.view()).value().data) << spec.name();
    }
}

TEST(Decoder, MissingInputsAreConfigErrors) {
    const auto cfg = small_config();
    Rng rng(2);
    Decoder dec(cfg, rng);
    const InputSet in = random_inputs(cfg, 2, rng);
    EXPECT_THROW(dec.decode(DecoderInputSpec{}, in.view()), ConfigError);
    DecoderInputs partial{&in.z, nullptr, nullptr, nullptr};
    EXPECT_NO_THROW(dec.decode(DecoderInputSpec::parse("z only"), partial));
    EXPECT_THROW(dec.decode(DecoderInputSpec::parse("z + x"), partial), ConfigError);
    EXPECT_THROW(dec.decode(DecoderInputSpec::parse("skips only"), partial), ConfigError);
    const Var bad = Var::constant(Tensor({2, 3, 15}));
    DecoderInputs wrong{nullptr, &bad, nullptr, nullptr};
    EXPECT_THROW(dec.decode(DecoderInputSpec::parse("x only"), wrong), DimensionError);
}

TEST(Decoder, PassThroughInitCopiesTheSignal) {
    const auto cfg = small_config();
    Rng rng(3);
    Decoder dec(cfg, rng, DecoderInit::pass_through);
    const InputSet in = random_inputs(cfg, 2, rng);
    EXPECT_EQ(dec.decode(DecoderInputSpec::parse("x only"), in.view()).value().data, in.x.value().data);
    EXPECT_EQ(dec.decode(DecoderInputSpec::parse("z + x + skips"), in.view()).value().data, in.x.value().data);
}

TEST(Decoder, GradientsMatchFiniteDifferences) {
    const auto cfg = small_config();
    Rng rng(4);
    Decoder dec(cfg, rng);
    InputSet in = random_inputs(cfg, 2, rng);
    in.z = Var::parameter(in.z.value());
    in.skips.dn1 = Var::parameter(in.skips.dn1.value());
    const Var probe = Var::constant(random_tensor({2, 3, 16}, rng));
    std::vector<Var> params{in.z, in.skips.dn1};
    for (auto& [n, p] : dec.parameters()) params.push_back(p);
    const auto spec = DecoderInputSpec::parse("z + x + x_hat + skips");
    EXPECT_LT(gradient_error([&] { return ops::sum_all(ops::mul(dec.decode(spec, in.view()), probe)); }, params), 1e-6);
}

TEST(ClassifierSpec, GridNamesAndParsing) {
    std::set<std::string> names;
    for (const auto& spec : ClassifierSpec::ablation_grid()) {
        EXPECT_EQ(ClassifierSpec::parse(spec.name()), spec);
        names.insert(spec.name());
    }
    EXPECT_EQ(names.size(), 7u);
    EXPECT_EQ(ClassifierSpec::parse("fc_clsf__deco_out").input, ClassifierInput::decoder_out);
    EXPECT_THROW(ClassifierSpec::parse("eegnet_classifier__z"), ConfigError);
    EXPECT_THROW(ClassifierSpec::parse("svm__z"), ConfigError);
    EXPECT_THROW(ClassifierSpec::parse("fc_classifier"), ConfigError);
}

TEST(Classifier, EveryCombinationYieldsOneLogitPerClass) {
    const auto cfg = small_config();
    Rng rng(5);
    const InputSet in = random_inputs(cfg, 4, rng);
    const Var x_dec = Var::constant(random_tensor({4, 3, 16}, rng));
    const ClassifierInputs view{&in.x, &in.x_hat, &x_dec, &in.z};
    for (const auto& spec : ClassifierSpec::ablation_grid()) {
        Classifier clf(spec, cfg, 3, rng);
        const Tensor logits = clf.logits(view).value();
        EXPECT_EQ(logits.shape, (Shape{4, 3})) << spec.name();
        for (double v : logits.data) EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(Classifier, ReadsOnlyItsNamedInput) {
    const auto cfg = small_config();
    Rng rng(6);
    const InputSet a = random_inputs(cfg, 2, rng), b = random_inputs(cfg, 2, rng);
    const Var da = Var::constant(random_tensor({2, 3, 16}, rng)), db = Var::constant(random_tensor({2, 3, 16}, rng));
    for (const auto& spec : ClassifierSpec::ablation_grid()) {
        Classifier clf(spec, cfg, 3, rng);
        ClassifierInputs va{&a.x, &a.x_hat, &da, &a.z}, vb{&b.x, &b.x_hat, &db, &b.z};
        switch (spec.input) {
        case ClassifierInput::x: vb.x = &a.x; break;
        case ClassifierInput::x_hat: vb.x_hat = &a.x_hat; break;
        case ClassifierInput::decoder_out: vb.decoder_out = &da; break;
        case ClassifierInput::z: vb.z = &a.z; break;
        }
        EXPECT_EQ(clf.logits(va).value().data, clf.logits(vb).value().data) << spec.name();
    }
}

TEST(Classifier, MissingInputIsConfigError) {
    const auto cfg = small_config();
    Rng rng(7);
    Classifier clf(ClassifierSpec::parse("fc_classifier__x_hat"), cfg, 2, rng);
    const Var x = Var::constant(Tensor({1, 3, 16}));
    EXPECT_THROW(clf.logits({&x, nullptr, nullptr, nullptr}), ConfigError);
    EXPECT_THROW(Classifier(ClassifierSpec{HeadKind::eegnet_style, ClassifierInput::z}, cfg, 2, rng), ConfigError);
}

TEST(Classifier, GradientsMatchFiniteDifferences) {
    const auto cfg = small_config();
    Rng rng(8);
    for (const char* name : {"fc_classifier__z", "fc_classifier__x", "eegnet_classifier__x"}) {
        const auto spec = ClassifierSpec::parse(name);
        Classifier clf(spec, cfg, 3, rng);
        const InputSet in = random_inputs(cfg, 2, rng);
        const Var probe = Var::constant(random_tensor({2, 3}, rng));
        std::vector<Var> params;
        for (auto& [n, p] : clf.parameters()) params.push_back(p);
        const ClassifierInputs view{&in.x, &in.x_hat, nullptr, &in.z};
        EXPECT_LT(gradient_error([&] { return ops::sum_all(ops::mul(clf.logits(view), probe)); }, params), 1e-5) << name;
    }
}
