#include <doctest.h>

#include "samba/errors.hpp"
#include "samba/foundation.hpp"
#include "samba/phantom.hpp"
#include "samba/training.hpp"

using namespace samba;

namespace {

Dataset tiny_dataset(int n = 4, std::uint64_t seed = 5) {
    PhantomConfig cfg;
    cfg.shape = {16, 32, 32};
    cfg.radius_min = 3;
    cfg.radius_max = 5;
    return generate_dataset(n, cfg, QualityProfile{}, seed);
}

PromptNetConfig tiny_promptnet(int n_classes = 1) {
    PromptNetConfig c;
    c.c_img = 8;
    c.encoder_widths = {4, 6};
    c.decoder_widths = {6, 4, 4};
    c.n_classes = n_classes;
    c.seed = 9;
    return c;
}

PromptModel<float> frozen_model(int n_classes = 1) {
    PromptModel<float> m(tiny_promptnet(n_classes));
    m.freeze({Collection::encoder, Collection::prompt});
    return m;
}

TrainConfig short_run(int epochs = 1) {
    TrainConfig t = TrainConfig::binary_defaults();
    t.epochs = epochs;
    t.seed = 2;
    return t;
}

DecoderTrainOptions one_modality() {
    DecoderTrainOptions o;
    o.modalities = {Modality::flair};
    return o;
}

}  // namespace

TEST_CASE("train config defaults and validation") {
    CHECK(TrainConfig::binary_defaults().epochs == 15);
    CHECK(TrainConfig::multiclass_defaults().epochs == 50);
    CHECK(TrainConfig::localizer_defaults().epochs == 150);
    TrainConfig t;
    t.epochs = 0;
    CHECK_NOTHROW(t.validate());
    t.epochs = -1;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.learning_rate = 0.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("zero epochs leave every parameter untouched") {
    const Dataset d = tiny_dataset();
    PromptModel<float> m = frozen_model();
    const auto before = m.group(Collection::decoder).digest();
    const TrainHistory h = train_decoder(m, d, one_modality(), short_run(0));
    CHECK(h.epochs.empty());
    CHECK(m.group(Collection::decoder).digest() == before);
}

TEST_CASE("decoder fine-tuning changes only the decoder") {
    const Dataset d = tiny_dataset();
    PromptModel<float> m = frozen_model();
    const auto enc = m.group(Collection::encoder).digest();
    const auto pr = m.group(Collection::prompt).digest();
    const auto dec = m.group(Collection::decoder).digest();
    const TrainHistory h = train_decoder(m, d, one_modality(), short_run(2));
    REQUIRE(h.epochs.size() == 2);
    CHECK(h.epochs[0].samples > 0);
    CHECK(h.epochs[1].val.count("wt") == 1);
    CHECK(m.group(Collection::encoder).digest() == enc);
    CHECK(m.group(Collection::prompt).digest() == pr);
    CHECK(m.group(Collection::decoder).digest() != dec);
}

TEST_CASE("decoder training is deterministic") {
    const Dataset d = tiny_dataset();
    PromptModel<float> a = frozen_model(), b = frozen_model();
    const TrainHistory ha = train_decoder(a, d, one_modality(), short_run(1));
    const TrainHistory hb = train_decoder(b, d, one_modality(), short_run(1));
    CHECK(ha.to_jsonl() == hb.to_jsonl());
    CHECK(a.group(Collection::decoder).digest() == b.group(Collection::decoder).digest());
}

TEST_CASE("decoder training refuses a trainable encoder unless overridden") {
    const Dataset d = tiny_dataset();
    PromptModel<float> m(tiny_promptnet());
    CHECK_THROWS_AS(train_decoder(m, d, one_modality(), short_run(1)), ConfigError);
    DecoderTrainOptions o = one_modality();
    o.allow_unfrozen_encoder = true;
    const auto enc = m.group(Collection::encoder).digest();
    train_decoder(m, d, o, short_run(1));
    CHECK(m.group(Collection::encoder).digest() != enc);

    PromptModel<float> all_frozen(tiny_promptnet());
    all_frozen.freeze({Collection::encoder, Collection::prompt, Collection::decoder});
    CHECK_THROWS_AS(train_decoder(all_frozen, d, one_modality(), short_run(1)), ConfigError);
}

TEST_CASE("localizer prompts need a localizer") {
    const Dataset d = tiny_dataset();
    PromptModel<float> m = frozen_model();
    DecoderTrainOptions o = one_modality();
    o.source = PromptSource::localizer;
    CHECK_THROWS_AS(train_decoder(m, d, o, short_run(1)), ConfigError);
}

TEST_CASE("multi-class decoder training reports composites") {
    const Dataset d = tiny_dataset();
    PromptModel<float> m = frozen_model(3);
    const TrainHistory h = train_decoder(m, d, one_modality(), short_run(1));
    REQUIRE(h.epochs.size() == 1);
    for (const char* k : {"et", "tc", "wt", "mean"}) CHECK(h.epochs[0].val.count(k) == 1);
}

TEST_CASE("history serialization excludes wall-clock time") {
    TrainHistory h;
    h.procedure = "p";
    h.initial_val["wt"] = 0.25;
    EpochRecord r;
    r.epoch = 1;
    r.train_loss = 0.5;
    r.samples = 3;
    r.val["wt"] = 0.5;
    r.seconds = 12.0;
    h.epochs.push_back(r);
    h.digests["decoder"] = "00ff";
    const std::string s = h.to_jsonl();
    CHECK(s.find("seconds") == std::string::npos);
    CHECK(s.find("\"epoch\":0") != std::string::npos);
    CHECK(h.timing_jsonl().find("seconds") != std::string::npos);
}

TEST_CASE("localizer training runs and is deterministic") {
    const Dataset d = tiny_dataset();
    LocalizerConfig cfg;
    cfg.seed = 3;
    Localizer<float> a(cfg), b(cfg);
    TrainConfig t = TrainConfig::localizer_defaults();
    t.epochs = 2;
    const TrainHistory ha = train_localizer(a, d, {}, t);
    const TrainHistory hb = train_localizer(b, d, {}, t);
    REQUIRE(ha.epochs.size() == 2);
    CHECK(ha.epochs[1].val.count("accuracy") == 1);
    CHECK(ha.to_jsonl() == hb.to_jsonl());
}

TEST_CASE("noisy truth votes flip at the requested rate") {
    const Dataset d = tiny_dataset();
    const Case& c = d.train[0];
    const auto wt = composite_regions(c.labels).wt;
    const VoteInput v = noisy_truth_votes(c, {Modality::flair, Modality::t1}, {ViewAxis::axial}, 0.1, 11);
    REQUIRE(v.channel_count() == 2);
    std::size_t flips = 0;
    for (const auto& ch : v.channels)
        for (std::size_t i = 0; i < ch.data.size(); ++i) flips += (ch.data[i] > 0.5f) != bool(wt.data[i]);
    const double rate = double(flips) / double(2 * wt.data.size());
    CHECK(rate == doctest::Approx(0.1).epsilon(0.15));
    CHECK(noisy_truth_votes(c, {Modality::flair}, {ViewAxis::axial}, 0.0, 1).channels[0].data.size() == wt.data.size());
    CHECK_THROWS_AS(noisy_truth_votes(c, {Modality::flair}, {ViewAxis::axial}, 1.5, 1), ConfigError);
}

TEST_CASE("voting training checks channels and changes weights") {
    const Dataset d = tiny_dataset();
    VoteNet<float> net(VoteNetConfig{});
    VotingTrainOptions o;
    o.modalities = {Modality::flair, Modality::t1};
    TrainConfig t = TrainConfig::voting_defaults();
    t.epochs = 1;
    CHECK_THROWS_AS(train_voting(net, d, o, t), ConfigError);
    o.modalities = default_vote_modalities();
    const auto before = net.group().digest();
    const TrainHistory h = train_voting(net, d, o, t);
    REQUIRE(h.epochs.size() == 1);
    CHECK(h.epochs[0].val.count("majority_wt") == 1);
    CHECK(net.group().digest() != before);
}

TEST_CASE("mask source names round trip") {
    for (MaskSource s : {MaskSource::truth_noisy, MaskSource::samba}) CHECK(parse_mask_source(mask_source_name(s)) == s);
    CHECK_THROWS_AS(parse_mask_source("oracle"), ConfigError);
}

TEST_CASE("generic scenes are deterministic and boxed") {
    const SceneSample a = generic_scene(7, 32), b = generic_scene(7, 32);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);
    CHECK(a.box == b.box);
    CHECK(a.box.in_bounds(32, 32));
    std::size_t fg = 0;
    for (auto v : a.mask.data) fg += v != 0;
    CHECK(fg > 0);
    CHECK_FALSE(generic_scene(8, 32).image == a.image);
}

TEST_CASE("foundation pretraining freezes encoder and prompt") {
    PromptModel<float> m(tiny_promptnet());
    FoundationConfig f;
    f.samples = 8;
    f.epochs = 1;
    f.size = 32;
    f.batch_size = 4;
    const auto enc = m.group(Collection::encoder).digest();
    const TrainHistory h = pretrain_foundation(m, f);
    CHECK(h.epochs.size() == 1);
    CHECK(m.frozen(Collection::encoder));
    CHECK(m.frozen(Collection::prompt));
    CHECK_FALSE(m.frozen(Collection::decoder));
    CHECK(m.group(Collection::encoder).digest() != enc);

    const PromptModel<float> mc = from_foundation(m, 3, 1);
    CHECK(mc.n_classes() == 3);
    CHECK(mc.frozen_mask() == m.frozen_mask());
    CHECK(mc.group(Collection::encoder).digest() == m.group(Collection::encoder).digest());
    CHECK(mc.group(Collection::prompt).digest() == m.group(Collection::prompt).digest());

    FoundationConfig bad = f;
    bad.samples = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
