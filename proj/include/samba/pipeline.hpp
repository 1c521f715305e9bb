#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "samba/localizer.hpp"
#include "samba/promptnet.hpp"
#include "samba/voting.hpp"

namespace samba {

enum class PromptSource { truth_box, full_brain_box, localizer };

std::string_view prompt_source_name(PromptSource s);
/// Throws ConfigError for unknown names.
PromptSource parse_prompt_source(std::string_view name);

struct PromptContext {
    PromptSource source = PromptSource::truth_box;
    const Localizer<float>* localizer = nullptr;
    /// Detections are computed on this modality and shared by every modality.
    Modality localizer_modality = Modality::flair;
    double conf_threshold = 0.5;

    /// Throws ConfigError when the localizer source has no model.
    void validate() const;
};

/// Localizer output for every slice along `view`.
std::vector<std::optional<Detection>> case_detections(const Case& c, ViewAxis view, const Localizer<float>& m,
                                                      Modality modality, double conf_threshold = 0.5);

/// Box prompt per slice along `view`; none where the source yields no box.
std::vector<std::optional<Box>> case_prompts(const Case& c, ViewAxis view, const PromptContext& ctx);

/// Tumor probability per slice reassembled into a volume. Slices without a prompt are zero.
/// Uses P(tumor) for a binary head and 1 - P(background) for a multi-class head.
Volume3D probability_volume(const PromptModel<float>& m, const Volume3D& vol, ViewAxis view,
                            const std::vector<std::optional<Box>>& prompts);

/// Axial multi-class labels; slices without a prompt are background.
LabelVolume multiclass_volume(const PromptModel<float>& m, const Volume3D& vol,
                              const std::vector<std::optional<Box>>& axial_prompts);

/// Voxel is foreground iff probability > threshold.
BinaryVolume threshold_volume(const Volume3D& p, double threshold = 0.5);

inline const std::vector<Modality>& default_vote_modalities() {
    static const std::vector<Modality> m{Modality::flair, Modality::t1, Modality::t2, Modality::t1ce};
    return m;
}

/// Channels in modality-major, view-minor order. Throws ValidationError when a requested
/// modality volume is missing or misshapen.
VoteInput assemble_votes(const Case& c, const PromptModel<float>& m, const PromptContext& ctx,
                         const std::vector<Modality>& modalities = default_vote_modalities(),
                         const std::vector<ViewAxis>& views = {ViewAxis::axial});

/// assemble_votes, vote_forward, argmax.
LabelVolume fuse_case(const Case& c, const PromptModel<float>& m, const VoteNet<float>& net, const PromptContext& ctx,
                      const std::vector<Modality>& modalities = default_vote_modalities(),
                      const std::vector<ViewAxis>& views = {ViewAxis::axial});

}  // namespace samba
