#pragma once

#include <cstdint>

#include "samba/promptnet.hpp"
#include "samba/training.hpp"

namespace samba {

// Stand-in for a promptable model pretrained on generic imagery: every collection is trained on
// synthetic scenes (smooth backgrounds, distractor blobs, one boxed target shape) that contain no
// tumor-specific structure. Afterwards encoder and prompt are frozen.

struct FoundationConfig {
    int samples = 2048;  // scenes per epoch
    int epochs = 2;
    int size = 64;
    int batch_size = 8;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SceneSample {
    Image2D image;
    Mask2D mask;
    Box box;
};

/// Deterministic in (seed, size). The box is the target's tight box with jitter, clipped.
SceneSample generic_scene(std::uint64_t seed, int size);

/// Trains all collections with the binary Dice + BCE loss, then freezes encoder and prompt.
/// Scene i of epoch e uses child_seed(child_seed(seed, e), i). Requires a binary head.
TrainHistory pretrain_foundation(PromptModel<float>& m, const FoundationConfig& cfg);

/// Model with n_classes heads that copies every foundation tensor whose shape matches; the
/// remaining tensors (the multi-class head) keep their seeded initialization. The frozen set is
/// copied from the foundation.
PromptModel<float> from_foundation(const PromptModel<float>& foundation, int n_classes, std::uint64_t seed);

}  // namespace samba
