#include "samba/training.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <optional>
#include <random>

#include <nlohmann/json.hpp>

#include "samba/errors.hpp"
#include "samba/losses.hpp"
#include "samba/rng.hpp"

namespace samba {

using nn::Tensor;
using Clock = std::chrono::steady_clock;

namespace {

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void scale_grads(nn::ParamGroup<float>& g, float s) {
    for (auto& p : g.params)
        for (float& v : p.grad) v *= s;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

Mask2D wt_mask(const LabelSlice& l) {
    Mask2D m(l.h, l.w);
    m.data = composite_mask(l.data, Composite::wt);
    return m;
}

/// Frozen-encoder features per (case, modality position, axial slice), computed on first use.
class FeatureCache {
public:
    FeatureCache(const PromptModel<float>& m, const std::vector<Case>& cases, const std::vector<Modality>& mods)
        : m_(m), cases_(cases), mods_(mods) {
        slots_.resize(cases.size() * mods.size());
        for (std::size_t i = 0; i < cases.size(); ++i)
            for (std::size_t j = 0; j < mods.size(); ++j) slots_[i * mods.size() + j].resize(std::size_t(cases[i].shape().d));
    }

    const FeatureGrid<float>& get(std::size_t ci, std::size_t mi, int z) {
        auto& slot = slots_[ci * mods_.size() + mi][std::size_t(z)];
        if (!slot) {
            const Image2D s = slice_at(cases_[ci].modality(mods_[mi]), ViewAxis::axial, z);
            slot = m_.encode_image(to_tensor_padded<float>(s, promptnet::kDownsample));
        }
        return *slot;
    }

private:
    const PromptModel<float>& m_;
    const std::vector<Case>& cases_;
    const std::vector<Modality>& mods_;
    std::vector<std::vector<std::optional<FeatureGrid<float>>>> slots_;
};

PromptContext decoder_context(const DecoderTrainOptions& opt) {
    PromptContext ctx;
    ctx.source = opt.source;
    ctx.localizer = opt.localizer;
    ctx.conf_threshold = opt.conf_threshold;
    ctx.validate();
    return ctx;
}

struct DecoderVal {
    std::vector<std::vector<std::optional<Box>>> prompts;
    FeatureCache cache;
};

std::map<std::string, double> decoder_metrics(const PromptModel<float>& m, const std::vector<Case>& cases,
                                              const DecoderTrainOptions& opt, DecoderVal& val) {
    const bool binary = m.n_classes() == 1;
    std::vector<CaseScores> rows;
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const Case& c = cases[ci];
        const Shape3 s = c.shape();
        for (std::size_t mi = 0; mi < opt.modalities.size(); ++mi) {
            LabelVolume pred(s);
            for (int z = 0; z < s.d; ++z) {
                const auto& p = val.prompts[ci][std::size_t(z)];
                if (!p) continue;
                const auto& f = val.cache.get(ci, mi, z);
                const auto probs = m.decode_mask(f, m.encode_prompt(*p, s.h, s.w), m.n_classes());
                for (int y = 0; y < s.h; ++y)
                    for (int x = 0; x < s.w; ++x) {
                        std::uint8_t v = 0;
                        if (binary) {
                            v = probs.at(0, 0, y, x) > 0.5f ? 1 : 0;
                        } else {
                            int best = 0;
                            for (int k = 1; k < probs.dims.c; ++k)
                                if (probs.at(k, 0, y, x) > probs.at(best, 0, y, x)) best = k;
                            v = std::uint8_t(best);
                        }
                        pred.at(z, y, x) = v;
                    }
            }
            rows.push_back(score_case(c.labels, pred, binary, c.id));
        }
    }
    const CaseScores mean = mean_scores(rows, "mean");
    if (binary) return {{"wt", mean.composites[2]}};
    return {{"et", mean.composites[0]}, {"tc", mean.composites[1]}, {"wt", mean.composites[2]}, {"mean", mean.mean_composites}};
}

DecoderVal make_decoder_val(const PromptModel<float>& m, const std::vector<Case>& cases, const DecoderTrainOptions& opt,
                            const PromptContext& ctx) {
    DecoderVal v{{}, FeatureCache(m, cases, opt.modalities)};
    for (const Case& c : cases) v.prompts.push_back(case_prompts(c, ViewAxis::axial, ctx));
    return v;
}

template <class Groups>
void record_digests(TrainHistory& h, const Groups& groups) {
    for (const auto& g : groups) h.digests[g.name] = hex(g.digest());
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
}

std::string TrainHistory::to_jsonl() const {
    using nlohmann::json;
    std::string out;
    if (!epochs.empty()) out += json{{"epoch", 0}, {"val", initial_val}}.dump() + "\n";
    for (const auto& e : epochs)
        out += json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"samples", e.samples}, {"val", e.val}}.dump() + "\n";
    out += json{{"procedure", procedure}, {"digests", digests}}.dump() + "\n";
    return out;
}

std::string TrainHistory::timing_jsonl() const {
    std::string out;
    for (const auto& e : epochs) out += nlohmann::json{{"epoch", e.epoch}, {"seconds", e.seconds}}.dump() + "\n";
    return out;
}

std::map<std::string, double> decoder_val_metrics(const PromptModel<float>& m, const std::vector<Case>& cases,
                                                  const DecoderTrainOptions& opt) {
    const PromptContext ctx = decoder_context(opt);
    DecoderVal val = make_decoder_val(m, cases, opt, ctx);
    return decoder_metrics(m, cases, opt, val);
}

TrainHistory train_decoder(PromptModel<float>& m, const Dataset& data, const DecoderTrainOptions& opt,
                           const TrainConfig& cfg) {
    cfg.validate();
    if (!opt.allow_unfrozen_encoder && !(m.frozen(Collection::encoder) && m.frozen(Collection::prompt)))
        throw ConfigError("decoder fine-tuning requires frozen encoder and prompt collections");
    if (m.frozen(Collection::decoder)) throw ConfigError("decoder collection is frozen; nothing to train");
    if (opt.modalities.empty()) throw ConfigError("no training modalities");
    const PromptContext ctx = decoder_context(opt);
    const bool binary = m.n_classes() == 1;

    TrainHistory h;
    h.procedure = binary ? "samba_binary" : "samba_multiclass";
    if (cfg.epochs == 0) {
        record_digests(h, m.groups());
        return h;
    }

    struct Sample {
        std::size_t ci, mi;
        int z;
        Box prompt;
    };
    std::vector<Sample> samples;
    std::vector<std::vector<LabelSlice>> labels(data.train.size());
    for (std::size_t ci = 0; ci < data.train.size(); ++ci) {
        const Case& c = data.train[ci];
        labels[ci] = extract_slices(c.labels, ViewAxis::axial);
        const auto prompts = case_prompts(c, ViewAxis::axial, ctx);
        for (int z = 0; z < c.shape().d; ++z) {
            if (!prompts[std::size_t(z)]) continue;
            for (std::size_t mi = 0; mi < opt.modalities.size(); ++mi) samples.push_back({ci, mi, z, *prompts[std::size_t(z)]});
        }
    }
    if (samples.empty()) throw ValidationError("train_decoder: no training slices have a prompt");

    const bool cached = m.frozen(Collection::encoder);
    FeatureCache train_cache(m, data.train, opt.modalities);
    std::optional<DecoderVal> val;
    if (opt.validate && !data.val.empty()) {
        val.emplace(make_decoder_val(m, data.val, opt, ctx));
        h.initial_val = decoder_metrics(m, data.val, opt, *val);
    }

    nn::Adam<float> adam({cfg.learning_rate});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const auto order = shuffled(samples.size(), child_seed(cfg.seed, std::uint64_t(epoch)));
        double loss_sum = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += std::size_t(cfg.batch_size)) {
            const std::size_t b1 = std::min(order.size(), b0 + std::size_t(cfg.batch_size));
            for (auto& g : m.groups()) g.zero_grad();
            for (std::size_t i = b0; i < b1; ++i) {
                const Sample& s = samples[order[i]];
                const LabelSlice& lab = labels[s.ci][std::size_t(s.z)];
                typename PromptModel<float>::Trace tr;
                Tensor<float> logits;
                if (cached) {
                    logits = m.logits_from_features(train_cache.get(s.ci, s.mi, s.z), s.prompt, &tr);
                } else {
                    const Image2D img = slice_at(data.train[s.ci].modality(opt.modalities[s.mi]), ViewAxis::axial, s.z);
                    logits = m.logits(to_tensor_padded<float>(img, promptnet::kDownsample), s.prompt, &tr);
                }
                const LossGrad<float> lg =
                    binary ? binary_loss_from_logits(logits, wt_mask(lab)) : multiclass_loss_from_logits(logits, lab);
                loss_sum += lg.loss;
                m.backward(tr, lg.dlogits);
            }
            adam.begin_step();
            for (Collection c : {Collection::encoder, Collection::prompt, Collection::decoder}) {
                if (m.frozen(c)) continue;
                scale_grads(m.group(c), 1.0f / float(b1 - b0));
                adam.update(m.group(c));
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.samples = samples.size();
        rec.train_loss = loss_sum / double(samples.size());
        if (val) {
            if (!cached) val.emplace(make_decoder_val(m, data.val, opt, ctx));
            rec.val = decoder_metrics(m, data.val, opt, *val);
        }
        rec.seconds = seconds_since(t0);
        h.epochs.push_back(std::move(rec));
    }
    record_digests(h, m.groups());
    return h;
}

LocalizationMetrics localizer_val_metrics(const Localizer<float>& m, const std::vector<Case>& cases,
                                          const LocalizerTrainOptions& opt) {
    std::vector<std::optional<Detection>> dets;
    std::vector<std::optional<Box>> truth;
    int h = 0, w = 0;
    for (const Case& c : cases) {
        const auto d = case_detections(c, ViewAxis::axial, m, opt.modality, opt.conf_threshold);
        dets.insert(dets.end(), d.begin(), d.end());
        for (int z = 0; z < c.shape().d; ++z) truth.push_back(box_from_labels(slice_at(c.labels, ViewAxis::axial, z)));
        h = c.shape().h;
        w = c.shape().w;
    }
    return localization_metrics(dets, truth, h, w);
}

namespace {

std::map<std::string, double> localizer_map(const LocalizationMetrics& l) {
    return {{"accuracy", l.accuracy}, {"mean_confidence", l.mean_confidence}, {"mean_box_loss", l.mean_box_loss}};
}

}  // namespace

TrainHistory train_localizer(Localizer<float>& m, const Dataset& data, const LocalizerTrainOptions& opt,
                             const TrainConfig& cfg) {
    cfg.validate();
    TrainHistory h;
    h.procedure = "localizer";
    if (cfg.epochs == 0) {
        record_digests(h, m.groups());
        return h;
    }
    struct Sample {
        Tensor<float> x;
        std::optional<Box> truth;
        int h, w;
    };
    std::vector<Sample> samples;
    for (const Case& c : data.train)
        for (int z = 0; z < c.shape().d; ++z) {
            const Image2D img = slice_at(c.modality(opt.modality), ViewAxis::axial, z);
            samples.push_back({to_tensor_padded<float>(img, localizer::kStride),
                               box_from_labels(slice_at(c.labels, ViewAxis::axial, z)), img.h, img.w});
        }
    if (samples.empty()) throw ValidationError("train_localizer: no training slices");
    const bool validate = opt.validate && !data.val.empty();
    if (validate) h.initial_val = localizer_map(localizer_val_metrics(m, data.val, opt));

    nn::Adam<float> adam({cfg.learning_rate});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const auto order = shuffled(samples.size(), child_seed(cfg.seed, std::uint64_t(epoch)));
        double loss_sum = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += std::size_t(cfg.batch_size)) {
            const std::size_t b1 = std::min(order.size(), b0 + std::size_t(cfg.batch_size));
            for (auto& g : m.groups()) g.zero_grad();
            for (std::size_t i = b0; i < b1; ++i) {
                const Sample& s = samples[order[i]];
                typename Localizer<float>::Trace tr;
                const auto raw = m.raw(s.x, &tr);
                const auto lg = localizer_loss(raw, s.truth, s.h, s.w);
                loss_sum += lg.loss;
                m.backward(tr, lg.dlogits);
            }
            adam.begin_step();
            for (auto& g : m.groups()) {
                scale_grads(g, 1.0f / float(b1 - b0));
                adam.update(g);
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.samples = samples.size();
        rec.train_loss = loss_sum / double(samples.size());
        if (validate) rec.val = localizer_map(localizer_val_metrics(m, data.val, opt));
        rec.seconds = seconds_since(t0);
        h.epochs.push_back(std::move(rec));
    }
    record_digests(h, m.groups());
    return h;
}

std::string_view mask_source_name(MaskSource s) { return s == MaskSource::truth_noisy ? "truth_noisy" : "samba"; }

MaskSource parse_mask_source(std::string_view name) {
    if (name == "truth_noisy") return MaskSource::truth_noisy;
    if (name == "samba") return MaskSource::samba;
    throw ConfigError("unknown mask source '" + std::string(name) + "' (expected truth_noisy or samba)");
}

VoteInput noisy_truth_votes(const Case& c, const std::vector<Modality>& modalities, const std::vector<ViewAxis>& views,
                            double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("flip probability outside [0, 1]");
    const auto wt = composite_mask(c.labels.data, Composite::wt);
    VoteInput in;
    in.shape = c.shape();
    in.modalities = modalities;
    in.views = views;
    Rng rng(seed);
    std::bernoulli_distribution flip(p);
    for (std::size_t k = 0; k < modalities.size() * views.size(); ++k) {
        Volume3D v(in.shape);
        for (std::size_t i = 0; i < wt.size(); ++i) v.data[i] = float(wt[i] ^ std::uint8_t(flip(rng)));
        in.channels.push_back(std::move(v));
    }
    return in;
}

std::map<std::string, double> voting_val_metrics(const VoteNet<float>& net, const std::vector<Case>& cases,
                                                 const std::vector<VoteInput>& votes) {
    if (votes.size() != cases.size()) throw ValidationError("voting_val_metrics: votes not aligned with cases");
    std::vector<CaseScores> rows;
    double majority = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const LabelVolume pred = vote_labels(vote_forward(net, votes[i]), votes[i].shape);
        rows.push_back(score_case(cases[i].labels, pred, false, cases[i].id));
        majority += dice(composite_mask(cases[i].labels.data, Composite::wt), majority_vote(votes[i]).data);
    }
    const CaseScores m = mean_scores(rows, "mean");
    return {{"et", m.composites[0]},
            {"tc", m.composites[1]},
            {"wt", m.composites[2]},
            {"mean", m.mean_composites},
            {"majority_wt", cases.empty() ? 0.0 : majority / double(cases.size())}};
}

namespace {

int crop_extent(int want, int have) {
    const int e = std::min(want, have) / votenet::kMultiple * votenet::kMultiple;
    if (e < votenet::kMultiple) throw ConfigError("volume too small for a voting crop");
    return e;
}

struct Crop {
    Tensor<float> x;
    LabelVolume y;
};

Crop make_crop(const VoteInput& in, const LabelVolume& labels, const std::vector<std::size_t>& tumor, Shape3 want,
               double tumor_bias, Rng& rng) {
    const Shape3 s = in.shape;
    const Shape3 e{crop_extent(want.d, s.d), crop_extent(want.h, s.h), crop_extent(want.w, s.w)};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int oz, oy, ox;
    if (!tumor.empty() && u(rng) < tumor_bias) {
        const std::size_t v = tumor[std::uniform_int_distribution<std::size_t>(0, tumor.size() - 1)(rng)];
        const int z = int(v / (std::size_t(s.h) * std::size_t(s.w)));
        const int y = int(v / std::size_t(s.w)) % s.h, x = int(v % std::size_t(s.w));
        oz = std::clamp(z - e.d / 2, 0, s.d - e.d);
        oy = std::clamp(y - e.h / 2, 0, s.h - e.h);
        ox = std::clamp(x - e.w / 2, 0, s.w - e.w);
    } else {
        oz = std::uniform_int_distribution<int>(0, s.d - e.d)(rng);
        oy = std::uniform_int_distribution<int>(0, s.h - e.h)(rng);
        ox = std::uniform_int_distribution<int>(0, s.w - e.w)(rng);
    }
    Crop c{Tensor<float>({in.channel_count(), e.d, e.h, e.w}), LabelVolume(e)};
    for (int z = 0; z < e.d; ++z)
        for (int y = 0; y < e.h; ++y)
            for (int x = 0; x < e.w; ++x) {
                for (int k = 0; k < in.channel_count(); ++k)
                    c.x.at(k, z, y, x) = in.channels[std::size_t(k)].at(oz + z, oy + y, ox + x);
                c.y.at(z, y, x) = labels.at(oz + z, oy + y, ox + x);
            }
    return c;
}

}  // namespace

TrainHistory train_voting(VoteNet<float>& net, const Dataset& data, const VotingTrainOptions& opt,
                          const TrainConfig& cfg) {
    cfg.validate();
    if (opt.crops_per_case < 1) throw ConfigError("crops_per_case must be positive");
    if (!(opt.tumor_bias >= 0.0 && opt.tumor_bias <= 1.0)) throw ConfigError("tumor_bias outside [0, 1]");
    const int channels = int(opt.modalities.size() * opt.views.size());
    if (opt.source == MaskSource::samba) {
        if (!opt.train_votes || opt.train_votes->size() != data.train.size())
            throw ConfigError("samba mask source needs one vote input per training case");
        if (!opt.train_votes->empty()) {
            const int got = opt.train_votes->front().channel_count();
            if (got != net.config().in_channels)
                throw ConfigError("vote inputs have " + std::to_string(got) + " channels, votenet expects " +
                                  std::to_string(net.config().in_channels));
        }
    } else if (channels != net.config().in_channels) {
        throw ConfigError("vote inputs have " + std::to_string(channels) + " channels, votenet expects " +
                          std::to_string(net.config().in_channels));
    }

    TrainHistory h;
    h.procedure = "voting";
    if (cfg.epochs == 0) {
        h.digests[net.group().name] = hex(net.group().digest());
        return h;
    }

    std::vector<std::vector<std::size_t>> tumor(data.train.size());
    for (std::size_t ci = 0; ci < data.train.size(); ++ci) {
        const auto& l = data.train[ci].labels.data;
        for (std::size_t i = 0; i < l.size(); ++i)
            if (l[i] != kBackground) tumor[ci].push_back(i);
    }

    std::vector<VoteInput> val_votes;
    const bool validate = opt.validate && !data.val.empty();
    if (validate) {
        if (opt.source == MaskSource::samba) {
            if (!opt.val_votes || opt.val_votes->size() != data.val.size())
                throw ConfigError("samba mask source needs one vote input per validation case");
            val_votes = *opt.val_votes;
        } else {
            const std::uint64_t vs = child_seed(cfg.seed, 0xffffffffULL);
            for (std::size_t i = 0; i < data.val.size(); ++i)
                val_votes.push_back(noisy_truth_votes(data.val[i], opt.modalities, opt.views, opt.flip_probability,
                                                      child_seed(vs, i)));
        }
        h.initial_val = voting_val_metrics(net, data.val, val_votes);
    }

    nn::Adam<float> adam({cfg.learning_rate});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const std::uint64_t es = child_seed(cfg.seed, std::uint64_t(epoch));
        std::vector<Crop> crops;
        for (std::size_t ci = 0; ci < data.train.size(); ++ci) {
            const std::uint64_t cs = child_seed(es, ci);
            const VoteInput votes = opt.source == MaskSource::samba
                                        ? (*opt.train_votes)[ci]
                                        : noisy_truth_votes(data.train[ci], opt.modalities, opt.views,
                                                            opt.flip_probability, child_seed(cs, 0));
            Rng rng(child_seed(cs, 1));
            for (int k = 0; k < opt.crops_per_case; ++k)
                crops.push_back(make_crop(votes, data.train[ci].labels, tumor[ci], opt.crop, opt.tumor_bias, rng));
        }
        const auto order = shuffled(crops.size(), child_seed(es, 0xfffffffeULL));
        double loss_sum = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += std::size_t(cfg.batch_size)) {
            const std::size_t b1 = std::min(order.size(), b0 + std::size_t(cfg.batch_size));
            net.group().zero_grad();
            for (std::size_t i = b0; i < b1; ++i) {
                const Crop& c = crops[order[i]];
                typename VoteNet<float>::Trace tr;
                const auto logits = net.raw(c.x, &tr);
                const auto lg = vote_loss_from_logits(logits, c.y);
                loss_sum += lg.loss;
                net.backward(tr, lg.dlogits);
            }
            adam.begin_step();
            scale_grads(net.group(), 1.0f / float(b1 - b0));
            adam.update(net.group());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.samples = crops.size();
        rec.train_loss = loss_sum / double(crops.size());
        if (validate) rec.val = voting_val_metrics(net, data.val, val_votes);
        rec.seconds = seconds_since(t0);
        h.epochs.push_back(std::move(rec));
    }
    h.digests[net.group().name] = hex(net.group().digest());
    return h;
}

}  // namespace samba
