#pragma once

#include <cstdint>
#include <span>

#include "samba/nn/tensor.hpp"
#include "samba/volumes.hpp"

namespace samba {

inline constexpr double kDiceEps = 1.0;
inline constexpr double kProbClamp = 1e-7;

/// 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps).
double dice_loss(std::span<const double> p, std::span<const std::uint8_t> t, double eps = kDiceEps);
/// Mean binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(std::span<const double> p, std::span<const std::uint8_t> t);
double combined_loss(std::span<const double> p, std::span<const std::uint8_t> t);

/// probs is channels-first (k, n) with channel 0 background; labels in [0, k).
/// Soft Dice averaged over channels 1..k-1.
double multiclass_dice_loss(std::span<const double> probs, std::span<const std::uint8_t> labels, int k);
double cross_entropy(std::span<const double> probs, std::span<const std::uint8_t> labels, int k);

template <class T>
struct LossGrad {
    double loss = 0.0;
    nn::Tensor<T> dlogits;
};

// Loss and its gradient with respect to raw head outputs. The target covers the leading
// (d, h, w) window of the logits; padded positions outside it get zero gradient.

/// Sigmoid head, Dice + BCE against a binary mask.
template <class T>
LossGrad<T> binary_loss_from_logits(const nn::Tensor<T>& logits, const Mask2D& target);

/// Softmax head over {background, NETC, SNFH, ET}, tumor-channel Dice + cross-entropy.
template <class T>
LossGrad<T> multiclass_loss_from_logits(const nn::Tensor<T>& logits, const LabelSlice& target);

/// Softmax head, cross-entropy only, over a 3D label grid.
template <class T>
LossGrad<T> vote_loss_from_logits(const nn::Tensor<T>& logits, const LabelVolume& target);

/// Per-position softmax over channels of a (k, d, h, w) tensor.
template <class T>
nn::Tensor<T> softmax_channels(const nn::Tensor<T>& logits);

}  // namespace samba
