#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "samba/box.hpp"
#include "samba/nn/layers.hpp"
#include "samba/volumes.hpp"

namespace samba {

struct PromptNetConfig {
    int c_img = 64;
    std::array<int, 2> encoder_widths{16, 32};  // third stage width is c_img
    std::array<int, 3> decoder_widths{32, 16, 8};
    /// 1 = binary head (sigmoid); 3 = NETC/SNFH/ET with an explicit background channel.
    int n_classes = 1;
    std::uint64_t seed = 0;

    int head_channels() const { return n_classes == 1 ? 1 : n_classes + 1; }
    int fourier_features() const { return c_img / 2; }
};

enum class Collection : int { encoder = 0, prompt = 1, decoder = 2 };
std::string_view collection_name(Collection c);

namespace promptnet {
inline constexpr int kDownsample = 8;
}

/// Image-encoder output, (c_img, 1, H/8, W/8).
template <class T>
struct FeatureGrid {
    nn::Tensor<T> data;
    int image_h = 0, image_w = 0;
};

/// Sparse tokens (2 for a box, 1 for a point) plus a dense prompt channel at feature resolution.
template <class T>
struct PromptEmbedding {
    std::vector<std::vector<T>> tokens;
    nn::Tensor<T> dense;
    Prompt prompt;
    int image_h = 0, image_w = 0;
};

/// Per-pixel probabilities, (channels, 1, H, W). Multi-class order is {background, NETC, SNFH, ET}.
template <class T>
using MaskProb = nn::Tensor<T>;

template <class T>
class PromptModel {
public:
    explicit PromptModel(const PromptNetConfig& cfg);

    const PromptNetConfig& config() const { return cfg_; }
    int n_classes() const { return cfg_.n_classes; }

    nn::ParamGroup<T>& group(Collection c) { return groups_[std::size_t(c)]; }
    const nn::ParamGroup<T>& group(Collection c) const { return groups_[std::size_t(c)]; }
    std::array<nn::ParamGroup<T>, 3>& groups() { return groups_; }
    const std::array<nn::ParamGroup<T>, 3>& groups() const { return groups_; }

    bool frozen(Collection c) const { return frozen_[std::size_t(c)]; }
    /// Replaces the frozen set.
    void freeze(std::initializer_list<Collection> cs);
    void freeze(const std::array<bool, 3>& mask) { frozen_ = mask; }
    const std::array<bool, 3>& frozen_mask() const { return frozen_; }

    /// slice: (1, 1, H, W) with H and W multiples of 8.
    FeatureGrid<T> encode_image(const nn::Tensor<T>& slice) const;
    PromptEmbedding<T> encode_prompt(const Prompt& prompt, int image_h, int image_w) const;
    MaskProb<T> decode_mask(const FeatureGrid<T>& f, const PromptEmbedding<T>& p, int n_classes) const;
    MaskProb<T> forward(const nn::Tensor<T>& slice, const Prompt& prompt) const;

    /// Raw head output at full resolution (logits before sigmoid/softmax).
    struct Trace;
    nn::Tensor<T> logits(const nn::Tensor<T>& slice, const Prompt& prompt, Trace* trace) const;
    nn::Tensor<T> logits_from_features(const FeatureGrid<T>& f, const Prompt& prompt, Trace* trace) const;

    /// Accumulates gradients of every non-frozen collection given dL/dlogits.
    void backward(const Trace& trace, const nn::Tensor<T>& dlogits);

    struct Trace {
        // encoder: per stage input, conv1 pre-act, act, conv2 pre-act, act
        std::array<nn::Tensor<T>, 3> e_in, e_a1, e_h1, e_a2, e_h2;
        bool has_encoder = false;
        FeatureGrid<T> features;
        PromptEmbedding<T> embedding;
        std::vector<T> mean_token;
        nn::Tensor<T> d_in;  // decoder input
        std::array<nn::Tensor<T>, 3> d_up, d_a, d_h;
    };

    std::size_t parameter_count() const;

private:
    struct EncoderStage {
        nn::Conv c1, c2;
    };

    void make_layers();
    nn::Tensor<T> decode_logits(const FeatureGrid<T>& f, PromptEmbedding<T> emb, Trace* trace) const;
    void encoder_backward(const Trace& t, const nn::Tensor<T>& dfeat);
    void prompt_backward(const PromptEmbedding<T>& e, const std::vector<T>& dmean);
    std::vector<T> token(double u, double v, const std::vector<T>& type_embed) const;

    PromptNetConfig cfg_;
    std::array<nn::ParamGroup<T>, 3> groups_;
    std::array<bool, 3> frozen_{false, false, false};
    std::array<EncoderStage, 3> enc_;
    std::array<nn::Conv, 3> dec_;
    nn::Conv head_;
    int pe_gauss_ = -1, corner_embed_ = -1, point_embed_ = -1;
};

/// Same architecture and values in another precision (frozen set preserved).
template <class To, class From>
PromptModel<To> cast_model(const PromptModel<From>& m);

// Slice helpers.

/// Zero-pads bottom/right to multiples of `multiple`; returns (1, 1, H', W').
template <class T>
nn::Tensor<T> to_tensor_padded(const Image2D& img, int multiple);

template <class T>
Mask2D threshold_mask(const MaskProb<T>& p, int h, int w, double threshold = 0.5);

// Inference on un-padded float slices. Outputs are cropped back to the slice shape.

/// Probability of tumor (binary head) cropped to the slice shape.
Image2D predict_probability(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt);
/// Voxel is foreground iff probability > threshold (strict).
Mask2D predict_binary(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt,
                      double threshold = 0.5);
/// Argmax over {background, NETC, SNFH, ET}; ties resolve to the lower code.
LabelSlice predict_multiclass(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt);
/// 1 - P(background) for the multi-class head, or P(tumor) for the binary head.
Image2D tumor_probability(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt);

}  // namespace samba
