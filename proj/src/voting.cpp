#include "samba/voting.hpp"

#include <cmath>

#include "samba/errors.hpp"
#include "samba/losses.hpp"
#include "samba/rng.hpp"

namespace samba {

using nn::Dims;
using nn::Factor;
using nn::Kernel;
using nn::Tensor;

namespace {

template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out({a.dims.c + b.dims.c, a.dims.d, a.dims.h, a.dims.w});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + std::ptrdiff_t(a.data.size()));
    return out;
}

template <class T>
void split(const Tensor<T>& x, int first_channels, Tensor<T>& a, Tensor<T>& b) {
    const Dims d = x.dims;
    a.reset({first_channels, d.d, d.h, d.w});
    b.reset({d.c - first_channels, d.d, d.h, d.w});
    std::copy_n(x.data.begin(), a.data.size(), a.data.begin());
    std::copy(x.data.begin() + std::ptrdiff_t(a.data.size()), x.data.end(), b.data.begin());
}

template <class T>
void add_into(Tensor<T>& acc, const Tensor<T>& x) {
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += x.data[i];
}

}  // namespace

template <class T>
VoteNet<T>::VoteNet(const VoteNetConfig& cfg) : cfg_(cfg) {
    if (cfg.in_channels < 1) throw ConfigError("votenet needs at least one input channel");
    const auto [w1, w2, w3] = cfg.widths;
    if (w1 < 1 || w2 < 1 || w3 < 1) throw ConfigError("votenet widths must be positive");
    group_.name = "votenet";
    const Kernel k3 = Kernel::k3d(3);
    auto level = [&](const std::string& name, int in, int out) {
        return Level{nn::Conv::make(group_, name + ".conv1", in, out, k3),
                     nn::Conv::make(group_, name + ".conv2", out, out, k3)};
    };
    enc1_ = level("enc1", cfg.in_channels, w1);
    enc2_ = level("enc2", w1, w2);
    bottleneck_ = level("bottleneck", w2, w3);
    dec2_ = level("dec2", w3 + w2, w2);
    dec1_ = level("dec1", w2 + w1, w1);
    head_ = nn::Conv::make(group_, "head", w1, votenet::kClasses, Kernel::k3d(1));

    const std::size_t n = parameter_count();
    if (n < votenet::kMinParams || n > votenet::kMaxParams)
        throw ConfigError("votenet has " + std::to_string(n) + " parameters, outside [" +
                          std::to_string(votenet::kMinParams) + ", " + std::to_string(votenet::kMaxParams) + "]");

    Rng rng(cfg.seed);
    for (const Level* l : {&enc1_, &enc2_, &bottleneck_, &dec2_, &dec1_}) {
        l->c1.init(group_, rng);
        l->c2.init(group_, rng);
    }
    head_.init(group_, rng);
}

template <class T>
void VoteNet<T>::block_forward(const Level& l, const Tensor<T>& x, Block& b) const {
    b.in = x;
    l.c1.forward(group_, b.in, b.a1);
    nn::silu(b.a1, b.h1);
    l.c2.forward(group_, b.h1, b.a2);
    nn::silu(b.a2, b.h2);
}

template <class T>
void VoteNet<T>::block_backward(const Level& l, const Block& b, const Tensor<T>& dh2, Tensor<T>* dx) {
    Tensor<T> da2, dh1, da1;
    nn::silu_backward(b.a2, dh2, da2);
    l.c2.backward(group_, b.h1, da2, &dh1, true);
    nn::silu_backward(b.a1, dh1, da1);
    l.c1.backward(group_, b.in, da1, dx, true);
}

template <class T>
Tensor<T> VoteNet<T>::raw(const Tensor<T>& x, Trace* trace) const {
    const Dims d = x.dims;
    if (d.c != cfg_.in_channels)
        throw ValidationError("votenet expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                              std::to_string(d.c));
    if (d.d % votenet::kMultiple || d.h % votenet::kMultiple || d.w % votenet::kMultiple || d.size() == 0)
        throw ValidationError("votenet: spatial dims must be positive multiples of 4");
    Trace local;
    Trace& t = trace ? *trace : local;
    const Factor f = Factor::f3d(2);
    Tensor<T> pooled, up;
    block_forward(enc1_, x, t.enc1);
    nn::avg_pool(t.enc1.h2, f, pooled);
    block_forward(enc2_, pooled, t.enc2);
    nn::avg_pool(t.enc2.h2, f, pooled);
    block_forward(bottleneck_, pooled, t.bottleneck);
    nn::upsample_nearest(t.bottleneck.h2, f, up);
    block_forward(dec2_, concat(up, t.enc2.h2), t.dec2);
    nn::upsample_nearest(t.dec2.h2, f, up);
    block_forward(dec1_, concat(up, t.enc1.h2), t.dec1);
    Tensor<T> out;
    head_.forward(group_, t.dec1.h2, out);
    return out;
}

template <class T>
void VoteNet<T>::backward(const Trace& t, const Tensor<T>& dlogits) {
    const Factor f = Factor::f3d(2);
    const auto [w1, w2, w3] = cfg_.widths;
    Tensor<T> dd1, dc, dup, dskip1, dskip2, dd2, db, dp2, ds2, dp1, ds1;
    head_.backward(group_, t.dec1.h2, dlogits, &dd1, true);
    block_backward(dec1_, t.dec1, dd1, &dc);
    split(dc, w2, dup, dskip1);
    nn::upsample_nearest_backward(dup, f, t.dec2.h2.dims, dd2);
    block_backward(dec2_, t.dec2, dd2, &dc);
    split(dc, w3, dup, dskip2);
    nn::upsample_nearest_backward(dup, f, t.bottleneck.h2.dims, db);
    block_backward(bottleneck_, t.bottleneck, db, &dp2);
    nn::avg_pool_backward(dp2, f, t.enc2.h2.dims, ds2);
    add_into(ds2, dskip2);
    block_backward(enc2_, t.enc2, ds2, &dp1);
    nn::avg_pool_backward(dp1, f, t.enc1.h2.dims, ds1);
    add_into(ds1, dskip1);
    block_backward(enc1_, t.enc1, ds1, nullptr);
}

template class VoteNet<float>;
template class VoteNet<double>;

void VoteInput::validate() const {
    if (channels.size() != modalities.size() * views.size())
        throw ValidationError("vote input: channel count " + std::to_string(channels.size()) + " != modalities x views");
    if (channels.empty()) throw ValidationError("vote input has no channels");
    for (const auto& ch : channels) {
        if (!(ch.shape == shape)) throw ValidationError("vote input: channel shape mismatch");
        for (float v : ch.data)
            if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("vote input: probability outside [0, 1]");
    }
}

template <class T>
Tensor<T> vote_tensor(const VoteInput& in) {
    auto up = [](int v) { return (v + votenet::kMultiple - 1) / votenet::kMultiple * votenet::kMultiple; };
    const Shape3 s = in.shape;
    Tensor<T> t({in.channel_count(), up(s.d), up(s.h), up(s.w)});
    for (int c = 0; c < in.channel_count(); ++c) {
        const Volume3D& v = in.channels[std::size_t(c)];
        for (int z = 0; z < s.d; ++z)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) t.at(c, z, y, x) = T(v.at(z, y, x));
    }
    return t;
}

template Tensor<float> vote_tensor<float>(const VoteInput&);
template Tensor<double> vote_tensor<double>(const VoteInput&);

Tensor<float> vote_forward(const VoteNet<float>& net, const VoteInput& in) {
    in.validate();
    const Tensor<float> p = softmax_channels(net.raw(vote_tensor<float>(in), nullptr));
    const Shape3 s = in.shape;
    Tensor<float> out({votenet::kClasses, s.d, s.h, s.w});
    for (int c = 0; c < votenet::kClasses; ++c)
        for (int z = 0; z < s.d; ++z)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) out.at(c, z, y, x) = p.at(c, z, y, x);
    return out;
}

LabelVolume vote_labels(const Tensor<float>& probs, Shape3 shape) {
    if (probs.dims.c != votenet::kClasses || probs.dims.d != shape.d || probs.dims.h != shape.h || probs.dims.w != shape.w)
        throw ValidationError("vote_labels: probability tensor does not match the volume shape");
    LabelVolume out(shape);
    const std::size_t sp = probs.dims.spatial();
    for (std::size_t i = 0; i < sp; ++i) {
        int best = 0;
        for (int c = 1; c < votenet::kClasses; ++c)
            if (probs.data[std::size_t(c) * sp + i] > probs.data[std::size_t(best) * sp + i]) best = c;
        out.data[i] = std::uint8_t(best);
    }
    return out;
}

BinaryVolume majority_vote(const VoteInput& in, double threshold) {
    BinaryVolume out(in.shape);
    const int n = in.channel_count();
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        int above = 0;
        for (const auto& ch : in.channels) above += double(ch.data[i]) > threshold;
        out.data[i] = 2 * above > n ? 1 : 0;
    }
    return out;
}

}  // namespace samba
