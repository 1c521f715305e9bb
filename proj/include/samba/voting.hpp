#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "samba/nn/layers.hpp"
#include "samba/volumes.hpp"

namespace samba {

struct VoteNetConfig {
    int in_channels = 4;
    std::array<int, 3> widths{12, 24, 48};
    std::uint64_t seed = 0;
};

namespace votenet {
inline constexpr std::size_t kMinParams = 150000;
inline constexpr std::size_t kMaxParams = 250000;
/// Spatial dims must be multiples of this (two 2x poolings).
inline constexpr int kMultiple = 4;
inline constexpr int kClasses = 4;
}  // namespace votenet

/// 3D U-Net: two conv3 per level, 2x average pooling, nearest upsampling, skip concatenation,
/// 1x1x1 head over {background, NETC, SNFH, ET}.
template <class T>
class VoteNet {
public:
    /// Throws ConfigError when the parameter count falls outside [150k, 250k].
    explicit VoteNet(const VoteNetConfig& cfg);

    const VoteNetConfig& config() const { return cfg_; }
    nn::ParamGroup<T>& group() { return group_; }
    const nn::ParamGroup<T>& group() const { return group_; }
    std::size_t parameter_count() const { return group_.count(); }

    struct Block {
        nn::Tensor<T> in, a1, h1, a2, h2;
    };
    struct Trace {
        Block enc1, enc2, bottleneck, dec2, dec1;
    };

    /// x: (in_channels, D, H, W) with D, H, W multiples of 4 -> logits (4, D, H, W).
    nn::Tensor<T> raw(const nn::Tensor<T>& x, Trace* trace) const;
    void backward(const Trace& t, const nn::Tensor<T>& dlogits);

private:
    struct Level {
        nn::Conv c1, c2;
    };

    void block_forward(const Level& l, const nn::Tensor<T>& x, Block& b) const;
    void block_backward(const Level& l, const Block& b, const nn::Tensor<T>& dh2, nn::Tensor<T>* dx);

    VoteNetConfig cfg_;
    nn::ParamGroup<T> group_;
    Level enc1_, enc2_, bottleneck_, dec2_, dec1_;
    nn::Conv head_;
};

/// Per-modality (and per-view) tumor probability volumes, channel order modality-major, view-minor.
struct VoteInput {
    Shape3 shape;
    std::vector<Modality> modalities;
    std::vector<ViewAxis> views;
    std::vector<Volume3D> channels;

    int channel_count() const { return int(channels.size()); }
    int channel_index(std::size_t modality_pos, std::size_t view_pos) const {
        return int(modality_pos * views.size() + view_pos);
    }
    /// Throws ValidationError on shape or value-range violations.
    void validate() const;
};

/// Zero-padded (C, D', H', W') tensor with D', H', W' rounded up to multiples of 4.
template <class T>
nn::Tensor<T> vote_tensor(const VoteInput& in);

/// Softmax probabilities (4, D, H, W) cropped back to the input shape.
nn::Tensor<float> vote_forward(const VoteNet<float>& net, const VoteInput& in);

/// Argmax over the class channels; ties resolve to the lower code.
LabelVolume vote_labels(const nn::Tensor<float>& probs, Shape3 shape);

/// Voxel is tumor iff strictly more than half of the channels exceed the threshold.
BinaryVolume majority_vote(const VoteInput& in, double threshold = 0.5);

}  // namespace samba
