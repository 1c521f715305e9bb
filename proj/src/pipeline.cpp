#include "samba/pipeline.hpp"

#include <string>

#include "samba/errors.hpp"

namespace samba {

std::string_view prompt_source_name(PromptSource s) {
    switch (s) {
        case PromptSource::truth_box: return "truth_box";
        case PromptSource::full_brain_box: return "full_brain_box";
        case PromptSource::localizer: return "localizer";
    }
    return "?";
}

PromptSource parse_prompt_source(std::string_view name) {
    for (PromptSource s : {PromptSource::truth_box, PromptSource::full_brain_box, PromptSource::localizer})
        if (prompt_source_name(s) == name) return s;
    throw ConfigError("unknown prompt source '" + std::string(name) +
                      "' (expected truth_box, full_brain_box or localizer)");
}

void PromptContext::validate() const {
    if (source == PromptSource::localizer && localizer == nullptr)
        throw ConfigError("prompt source 'localizer' requires a trained localizer");
    if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) throw ConfigError("confidence threshold outside [0, 1]");
}

namespace {

void require_modality(const Case& c, Modality m) {
    if (!(c.modality(m).shape == c.shape()) || c.modality(m).data.size() != c.shape().size())
        throw ValidationError("case " + c.id + " is missing modality " + std::string(modality_name(m)));
}

}  // namespace

std::vector<std::optional<Detection>> case_detections(const Case& c, ViewAxis view, const Localizer<float>& m,
                                                      Modality modality, double conf_threshold) {
    require_modality(c, modality);
    const int n = extent_along(c.shape(), view);
    std::vector<std::optional<Detection>> out(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) out[std::size_t(k)] = detect(m, slice_at(c.modality(modality), view, k), conf_threshold);
    return out;
}

std::vector<std::optional<Box>> case_prompts(const Case& c, ViewAxis view, const PromptContext& ctx) {
    ctx.validate();
    const int n = extent_along(c.shape(), view);
    std::vector<std::optional<Box>> out(static_cast<std::size_t>(n));
    switch (ctx.source) {
        case PromptSource::truth_box:
            for (int k = 0; k < n; ++k) out[std::size_t(k)] = box_from_labels(slice_at(c.labels, view, k));
            break;
        case PromptSource::full_brain_box:
            for (int k = 0; k < n; ++k) {
                const LabelSlice s = slice_at(c.labels, view, k);
                out[std::size_t(k)] = full_brain_box(s.h, s.w);
            }
            break;
        case PromptSource::localizer: {
            const auto dets = case_detections(c, view, *ctx.localizer, ctx.localizer_modality, ctx.conf_threshold);
            for (int k = 0; k < n; ++k)
                if (dets[std::size_t(k)]) out[std::size_t(k)] = dets[std::size_t(k)]->box;
            break;
        }
    }
    return out;
}

Volume3D probability_volume(const PromptModel<float>& m, const Volume3D& vol, ViewAxis view,
                            const std::vector<std::optional<Box>>& prompts) {
    const int n = extent_along(vol.shape, view);
    if (int(prompts.size()) != n)
        throw ValidationError("probability_volume: " + std::to_string(prompts.size()) + " prompts for " +
                              std::to_string(n) + " slices");
    std::vector<Image2D> slices(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const Image2D s = slice_at(vol, view, k);
        const auto& p = prompts[std::size_t(k)];
        slices[std::size_t(k)] = p ? tumor_probability(m, s, *p) : Image2D(s.h, s.w, 0.0f);
    }
    return reassemble(slices, view);
}

LabelVolume multiclass_volume(const PromptModel<float>& m, const Volume3D& vol,
                              const std::vector<std::optional<Box>>& axial_prompts) {
    const int n = vol.shape.d;
    if (int(axial_prompts.size()) != n) throw ValidationError("multiclass_volume: prompt count != slice count");
    std::vector<LabelSlice> slices(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const Image2D s = slice_at(vol, ViewAxis::axial, k);
        const auto& p = axial_prompts[std::size_t(k)];
        slices[std::size_t(k)] = p ? predict_multiclass(m, s, *p) : LabelSlice(s.h, s.w, kBackground);
    }
    return reassemble(slices, ViewAxis::axial);
}

BinaryVolume threshold_volume(const Volume3D& p, double threshold) {
    BinaryVolume out(p.shape);
    for (std::size_t i = 0; i < p.data.size(); ++i) out.data[i] = double(p.data[i]) > threshold ? 1 : 0;
    return out;
}

VoteInput assemble_votes(const Case& c, const PromptModel<float>& m, const PromptContext& ctx,
                         const std::vector<Modality>& modalities, const std::vector<ViewAxis>& views) {
    if (modalities.empty() || views.empty()) throw ConfigError("assemble_votes needs at least one modality and view");
    for (Modality mod : modalities) require_modality(c, mod);
    VoteInput in;
    in.shape = c.shape();
    in.modalities = modalities;
    in.views = views;
    in.channels.resize(modalities.size() * views.size());
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
        const auto prompts = case_prompts(c, views[vi], ctx);
        for (std::size_t mi = 0; mi < modalities.size(); ++mi)
            in.channels[std::size_t(in.channel_index(mi, vi))] =
                probability_volume(m, c.modality(modalities[mi]), views[vi], prompts);
    }
    return in;
}

LabelVolume fuse_case(const Case& c, const PromptModel<float>& m, const VoteNet<float>& net, const PromptContext& ctx,
                      const std::vector<Modality>& modalities, const std::vector<ViewAxis>& views) {
    const VoteInput in = assemble_votes(c, m, ctx, modalities, views);
    if (in.channel_count() != net.config().in_channels)
        throw ConfigError("votenet expects " + std::to_string(net.config().in_channels) + " channels, votes have " +
                          std::to_string(in.channel_count()));
    return vote_labels(vote_forward(net, in), in.shape);
}

}  // namespace samba
