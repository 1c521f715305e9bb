#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "samba/nn/params.hpp"

namespace samba {

struct GradCheckOptions {
    int samples = 256;  // parameters drawn at random (all of them if fewer exist)
    double step = 1e-4;
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    std::string worst_param;  // "collection.param[index]"
    double worst_analytic = 0.0, worst_numeric = 0.0;
    bool passed = false;
};

/// Compares analytic gradients with central differences. `loss` evaluates the scalar loss at the
/// current parameters; `gradients` zeroes and fills the grad buffers of `groups`. Only the listed
/// groups are perturbed, so frozen collections are excluded by not passing them.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6). Throws ValidationError on a non-finite loss.
GradCheckReport gradient_check(const std::function<double()>& loss, const std::function<void()>& gradients,
                               const std::vector<nn::ParamGroup<double>*>& groups, const GradCheckOptions& opt = {});

// Tiny-scale checks of each model's training loss at 64-bit precision. Inputs are seeded random
// slices (size x size, or size^3 for the voting network) with a blob-shaped target.

/// decoder_only checks just the decoder collection (the fine-tuning recipe); otherwise all three.
GradCheckReport check_promptnet_gradients(int n_classes, bool decoder_only, int size = 16,
                                          const GradCheckOptions& opt = {});
GradCheckReport check_localizer_gradients(int size = 16, const GradCheckOptions& opt = {});
GradCheckReport check_votenet_gradients(int size = 16, const GradCheckOptions& opt = {});

}  // namespace samba
