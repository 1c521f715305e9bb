#include "samba/promptnet.hpp"

#include <cmath>
#include <numbers>

namespace samba {

using nn::Dims;
using nn::Factor;
using nn::Kernel;
using nn::Tensor;

std::string_view collection_name(Collection c) {
    switch (c) {
        case Collection::encoder: return "encoder";
        case Collection::prompt: return "prompt";
        case Collection::decoder: return "decoder";
    }
    return "?";
}

template <class T>
PromptModel<T>::PromptModel(const PromptNetConfig& cfg) : cfg_(cfg) {
    if (cfg.n_classes != 1 && cfg.n_classes != 3)
        throw ConfigError("promptnet supports 1 (binary) or 3 (multi-class) output classes");
    if (cfg.c_img < 2 || cfg.c_img % 2)
        throw ConfigError("c_img must be even and >= 2");
    make_layers();
    Rng rng(cfg.seed);
    for (const auto& st : enc_) {
        st.c1.init(group(Collection::encoder), rng);
        st.c2.init(group(Collection::encoder), rng);
    }
    auto& pg = group(Collection::prompt);
    nn::init_normal(pg[pe_gauss_], rng, 1.0);
    nn::init_normal(pg[corner_embed_], rng, 0.5);
    nn::init_normal(pg[point_embed_], rng, 0.5);
    for (const auto& c : dec_) c.init(group(Collection::decoder), rng);
    head_.init(group(Collection::decoder), rng);
}

template <class T>
void PromptModel<T>::make_layers() {
    for (Collection c : {Collection::encoder, Collection::prompt, Collection::decoder})
        group(c).name = std::string(collection_name(c));
    auto& eg = group(Collection::encoder);
    const std::array<int, 3> widths{cfg_.encoder_widths[0], cfg_.encoder_widths[1], cfg_.c_img};
    int in = 1;
    for (int s = 0; s < 3; ++s) {
        const std::string p = "stage" + std::to_string(s + 1);
        enc_[std::size_t(s)].c1 = nn::Conv::make(eg, p + ".conv1", in, widths[std::size_t(s)], Kernel::k2d(3));
        enc_[std::size_t(s)].c2 =
            nn::Conv::make(eg, p + ".conv2", widths[std::size_t(s)], widths[std::size_t(s)], Kernel::k2d(3));
        in = widths[std::size_t(s)];
    }
    auto& pg = group(Collection::prompt);
    pe_gauss_ = pg.add("pe_gaussian", {2, cfg_.fourier_features()});
    corner_embed_ = pg.add("corner_embed", {2, cfg_.c_img});
    point_embed_ = pg.add("point_embed", {2, cfg_.c_img});

    auto& dg = group(Collection::decoder);
    in = 2 * cfg_.c_img + 1;
    for (int s = 0; s < 3; ++s) {
        dec_[std::size_t(s)] = nn::Conv::make(dg, "up" + std::to_string(s + 1) + ".conv", in,
                                              cfg_.decoder_widths[std::size_t(s)], Kernel::k2d(3));
        in = cfg_.decoder_widths[std::size_t(s)];
    }
    head_ = nn::Conv::make(dg, "head", in, cfg_.head_channels(), Kernel::k2d(1));
}

template <class T>
void PromptModel<T>::freeze(std::initializer_list<Collection> cs) {
    frozen_ = {false, false, false};
    for (Collection c : cs) frozen_[std::size_t(c)] = true;
}

template <class T>
std::size_t PromptModel<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& g : groups_) n += g.count();
    return n;
}

template <class T>
FeatureGrid<T> PromptModel<T>::encode_image(const Tensor<T>& slice) const {
    const Dims d = slice.dims;
    if (d.c != 1 || d.d != 1) throw ValidationError("encode_image expects a single-channel 2D slice");
    if (d.h % promptnet::kDownsample || d.w % promptnet::kDownsample)
        throw ValidationError("encode_image: slice " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                              " is not a multiple of 8 (pad first)");
    for (T v : slice.data)
        if (!std::isfinite(double(v))) throw ValidationError("encode_image: non-finite input");
    const auto& eg = group(Collection::encoder);
    Tensor<T> x = slice, a, h, pooled;
    for (const auto& st : enc_) {
        st.c1.forward(eg, x, a);
        nn::silu(a, h);
        st.c2.forward(eg, h, a);
        nn::silu(a, x);
        nn::avg_pool(x, Factor::f2d(2), pooled);
        x = std::move(pooled);
    }
    return {std::move(x), d.h, d.w};
}

template <class T>
std::vector<T> PromptModel<T>::token(double u, double v, const std::vector<T>& type_embed) const {
    const auto& g = group(Collection::prompt)[pe_gauss_].value;
    const int F = cfg_.fourier_features();
    const double cx = 2.0 * u - 1.0, cy = 2.0 * v - 1.0;
    std::vector<T> tok(std::size_t(cfg_.c_img));
    for (int j = 0; j < F; ++j) {
        const double proj = 2.0 * std::numbers::pi * (cx * double(g[std::size_t(j)]) + cy * double(g[std::size_t(F + j)]));
        tok[std::size_t(j)] = T(std::sin(proj)) + type_embed[std::size_t(j)];
        tok[std::size_t(F + j)] = T(std::cos(proj)) + type_embed[std::size_t(F + j)];
    }
    return tok;
}

namespace {

double normalized(int coord, int extent) { return extent > 1 ? double(coord) / double(extent - 1) : 0.0; }

}  // namespace

template <class T>
PromptEmbedding<T> PromptModel<T>::encode_prompt(const Prompt& prompt, int image_h, int image_w) const {
    validate(prompt, image_h, image_w);
    const auto& pg = group(Collection::prompt);
    const int C = cfg_.c_img;
    auto row = [&](int param, int r) {
        const auto& v = pg[param].value;
        return std::vector<T>(v.begin() + std::ptrdiff_t(r) * C, v.begin() + std::ptrdiff_t(r + 1) * C);
    };

    PromptEmbedding<T> e;
    e.prompt = prompt;
    e.image_h = image_h;
    e.image_w = image_w;
    const int k = promptnet::kDownsample;
    const int fh = (image_h + k - 1) / k, fw = (image_w + k - 1) / k;
    e.dense.reset({1, 1, fh, fw});

    if (const Box* b = std::get_if<Box>(&prompt)) {
        e.tokens.push_back(token(normalized(b->x_min, image_w), normalized(b->y_min, image_h), row(corner_embed_, 0)));
        e.tokens.push_back(token(normalized(b->x_max, image_w), normalized(b->y_max, image_h), row(corner_embed_, 1)));
        for (int i = 0; i < fh; ++i) {
            const int oy = std::max(0, std::min(b->y_max + 1, (i + 1) * k) - std::max(b->y_min, i * k));
            for (int j = 0; j < fw; ++j) {
                const int ox = std::max(0, std::min(b->x_max + 1, (j + 1) * k) - std::max(b->x_min, j * k));
                e.dense.at(0, 0, i, j) = T(double(oy * ox) / double(k * k));
            }
        }
    } else {
        const auto& p = std::get<PointPrompt>(prompt);
        e.tokens.push_back(token(normalized(p.x, image_w), normalized(p.y, image_h),
                                 row(point_embed_, p.polarity == Polarity::positive ? 1 : 0)));
        e.dense.at(0, 0, p.y / k, p.x / k) = p.polarity == Polarity::positive ? T(1) : T(-1);
    }
    return e;
}

template <class T>
Tensor<T> PromptModel<T>::logits_from_features(const FeatureGrid<T>& f, const Prompt& prompt, Trace* trace) const {
    return decode_logits(f, encode_prompt(prompt, f.image_h, f.image_w), trace);
}

template <class T>
Tensor<T> PromptModel<T>::decode_logits(const FeatureGrid<T>& f, PromptEmbedding<T> emb, Trace* trace) const {
    const int C = cfg_.c_img;
    const Dims fd = f.data.dims;
    if (fd.c != C || !(emb.dense.dims.h == fd.h && emb.dense.dims.w == fd.w))
        throw ValidationError("decode: feature grid and prompt embedding shapes disagree");

    std::vector<T> mean(std::size_t(C), T(0));
    for (const auto& t : emb.tokens)
        for (int c = 0; c < C; ++c) mean[std::size_t(c)] += t[std::size_t(c)] / T(emb.tokens.size());

    Tensor<T> in({2 * C + 1, 1, fd.h, fd.w});
    const std::size_t sp = fd.spatial();
    std::copy(f.data.data.begin(), f.data.data.end(), in.data.begin());
    for (int c = 0; c < C; ++c) std::fill_n(in.channel(C + c), sp, mean[std::size_t(c)]);
    std::copy(emb.dense.data.begin(), emb.dense.data.end(), in.channel(2 * C));

    const auto& dg = group(Collection::decoder);
    Trace local;
    Trace& t = trace ? *trace : local;
    Tensor<T> out;
    for (int s = 0; s < 3; ++s) {
        const Tensor<T>& prev = s == 0 ? in : t.d_h[std::size_t(s - 1)];
        nn::upsample_nearest(prev, Factor::f2d(2), t.d_up[std::size_t(s)]);
        dec_[std::size_t(s)].forward(dg, t.d_up[std::size_t(s)], t.d_a[std::size_t(s)]);
        nn::silu(t.d_a[std::size_t(s)], t.d_h[std::size_t(s)]);
    }
    head_.forward(dg, t.d_h[2], out);
    if (trace) {
        trace->features = f;
        trace->embedding = std::move(emb);
        trace->mean_token = std::move(mean);
        trace->d_in = std::move(in);
    }
    return out;
}

template <class T>
Tensor<T> PromptModel<T>::logits(const Tensor<T>& slice, const Prompt& prompt, Trace* trace) const {
    if (!trace) return logits_from_features(encode_image(slice), prompt, nullptr);
    const Dims d = slice.dims;
    if (d.c != 1 || d.d != 1 || d.h % promptnet::kDownsample || d.w % promptnet::kDownsample)
        throw ValidationError("logits: slice must be (1,1,H,W) with H, W multiples of 8");
    const auto& eg = group(Collection::encoder);
    Tensor<T> x = slice;
    for (int s = 0; s < 3; ++s) {
        const auto& st = enc_[std::size_t(s)];
        const std::size_t i = std::size_t(s);
        trace->e_in[i] = x;
        st.c1.forward(eg, x, trace->e_a1[i]);
        nn::silu(trace->e_a1[i], trace->e_h1[i]);
        st.c2.forward(eg, trace->e_h1[i], trace->e_a2[i]);
        nn::silu(trace->e_a2[i], trace->e_h2[i]);
        nn::avg_pool(trace->e_h2[i], Factor::f2d(2), x);
    }
    trace->has_encoder = true;
    return logits_from_features({std::move(x), d.h, d.w}, prompt, trace);
}

template <class T>
MaskProb<T> PromptModel<T>::decode_mask(const FeatureGrid<T>& f, const PromptEmbedding<T>& p, int n_classes) const {
    if (n_classes != cfg_.n_classes)
        throw ConfigError("decode_mask: model has " + std::to_string(cfg_.n_classes) + " output classes, asked for " +
                          std::to_string(n_classes));
    Tensor<T> z = decode_logits(f, p, nullptr);
    const std::size_t sp = z.dims.spatial();
    if (cfg_.n_classes == 1) {
        for (T& v : z.data) v = T(1) / (T(1) + std::exp(-v));
        return z;
    }
    const int K = z.dims.c;
    for (std::size_t i = 0; i < sp; ++i) {
        T mx = z.data[i];
        for (int c = 1; c < K; ++c) mx = std::max(mx, z.data[std::size_t(c) * sp + i]);
        T sum = 0;
        for (int c = 0; c < K; ++c) {
            T& v = z.data[std::size_t(c) * sp + i];
            v = std::exp(v - mx);
            sum += v;
        }
        for (int c = 0; c < K; ++c) z.data[std::size_t(c) * sp + i] /= sum;
    }
    return z;
}

template <class T>
MaskProb<T> PromptModel<T>::forward(const Tensor<T>& slice, const Prompt& prompt) const {
    const FeatureGrid<T> f = encode_image(slice);
    return decode_mask(f, encode_prompt(prompt, f.image_h, f.image_w), cfg_.n_classes);
}

template <class T>
void PromptModel<T>::backward(const Trace& t, const Tensor<T>& dlogits) {
    const bool dec_grads = !frozen(Collection::decoder);
    const bool enc_grads = !frozen(Collection::encoder) && t.has_encoder;
    const bool prm_grads = !frozen(Collection::prompt);
    const bool upstream = enc_grads || prm_grads;
    if (!dec_grads && !upstream) return;

    auto& dg = group(Collection::decoder);
    Tensor<T> dh, da, dup;
    head_.backward(dg, t.d_h[2], dlogits, &dh, dec_grads);
    for (int s = 2; s >= 0; --s) {
        const std::size_t i = std::size_t(s);
        nn::silu_backward(t.d_a[i], dh, da);
        const bool need_dx = s > 0 || upstream;
        dec_[i].backward(dg, t.d_up[i], da, need_dx ? &dup : nullptr, dec_grads);
        if (!need_dx) return;
        const Dims prev = s == 0 ? t.d_in.dims : t.d_h[i - 1].dims;
        nn::upsample_nearest_backward(dup, Factor::f2d(2), prev, dh);
    }
    // dh now holds dL/d(decoder input).
    const int C = cfg_.c_img;
    const std::size_t sp = dh.dims.spatial();
    if (prm_grads) {
        std::vector<T> dmean(std::size_t(C), T(0));
        for (int c = 0; c < C; ++c) {
            const T* g = dh.channel(C + c);
            T acc = 0;
            for (std::size_t p = 0; p < sp; ++p) acc += g[p];
            dmean[std::size_t(c)] = acc;
        }
        prompt_backward(t.embedding, dmean);
    }
    if (enc_grads) {
        Tensor<T> dfeat({C, 1, dh.dims.h, dh.dims.w});
        std::copy_n(dh.data.begin(), dfeat.data.size(), dfeat.data.begin());
        encoder_backward(t, dfeat);
    }
}

template <class T>
void PromptModel<T>::encoder_backward(const Trace& t, const Tensor<T>& dfeat) {
    auto& eg = group(Collection::encoder);
    Tensor<T> dout = dfeat, dh2, da2, dh1, da1, din;
    for (int s = 2; s >= 0; --s) {
        const std::size_t i = std::size_t(s);
        nn::avg_pool_backward(dout, Factor::f2d(2), t.e_h2[i].dims, dh2);
        nn::silu_backward(t.e_a2[i], dh2, da2);
        enc_[i].c2.backward(eg, t.e_h1[i], da2, &dh1, true);
        nn::silu_backward(t.e_a1[i], dh1, da1);
        enc_[i].c1.backward(eg, t.e_in[i], da1, s > 0 ? &din : nullptr, true);
        dout = std::move(din);
    }
}

template <class T>
void PromptModel<T>::prompt_backward(const PromptEmbedding<T>& e, const std::vector<T>& dmean) {
    auto& pg = group(Collection::prompt);
    const int C = cfg_.c_img, F = cfg_.fourier_features();
    const auto& g = pg[pe_gauss_].value;
    auto& dg = pg[pe_gauss_].grad;
    const T scale = T(1) / T(e.tokens.size());

    auto pe_grad = [&](double u, double v) {
        const double cx = 2.0 * u - 1.0, cy = 2.0 * v - 1.0;
        for (int j = 0; j < F; ++j) {
            const double proj = 2.0 * std::numbers::pi *
                                (cx * double(g[std::size_t(j)]) + cy * double(g[std::size_t(F + j)]));
            const double dproj = std::cos(proj) * double(dmean[std::size_t(j)] * scale) -
                                 std::sin(proj) * double(dmean[std::size_t(F + j)] * scale);
            dg[std::size_t(j)] += T(2.0 * std::numbers::pi * cx * dproj);
            dg[std::size_t(F + j)] += T(2.0 * std::numbers::pi * cy * dproj);
        }
    };
    auto embed_grad = [&](int param, int r) {
        auto& gr = pg[param].grad;
        for (int c = 0; c < C; ++c) gr[std::size_t(r * C + c)] += dmean[std::size_t(c)] * scale;
    };

    if (const Box* b = std::get_if<Box>(&e.prompt)) {
        pe_grad(normalized(b->x_min, e.image_w), normalized(b->y_min, e.image_h));
        pe_grad(normalized(b->x_max, e.image_w), normalized(b->y_max, e.image_h));
        embed_grad(corner_embed_, 0);
        embed_grad(corner_embed_, 1);
    } else {
        const auto& p = std::get<PointPrompt>(e.prompt);
        pe_grad(normalized(p.x, e.image_w), normalized(p.y, e.image_h));
        embed_grad(point_embed_, p.polarity == Polarity::positive ? 1 : 0);
    }
}

template <class To, class From>
PromptModel<To> cast_model(const PromptModel<From>& m) {
    PromptModel<To> out(m.config());
    for (std::size_t i = 0; i < 3; ++i) out.groups()[i] = nn::cast_group<To>(m.groups()[i]);
    out.freeze(m.frozen_mask());
    return out;
}

template class PromptModel<float>;
template class PromptModel<double>;
template PromptModel<double> cast_model<double, float>(const PromptModel<float>&);
template PromptModel<float> cast_model<float, double>(const PromptModel<double>&);
template PromptModel<float> cast_model<float, float>(const PromptModel<float>&);

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> to_tensor_padded(const Image2D& img, int multiple) {
    const int h = (img.h + multiple - 1) / multiple * multiple;
    const int w = (img.w + multiple - 1) / multiple * multiple;
    Tensor<T> t({1, 1, h, w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) t.at(0, 0, y, x) = T(img.at(y, x));
    return t;
}

template Tensor<float> to_tensor_padded<float>(const Image2D&, int);
template Tensor<double> to_tensor_padded<double>(const Image2D&, int);

template <class T>
Mask2D threshold_mask(const MaskProb<T>& p, int h, int w, double threshold) {
    Mask2D m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.at(y, x) = double(p.at(0, 0, y, x)) > threshold ? 1 : 0;
    return m;
}

template Mask2D threshold_mask<float>(const MaskProb<float>&, int, int, double);
template Mask2D threshold_mask<double>(const MaskProb<double>&, int, int, double);

Image2D predict_probability(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt) {
    if (m.n_classes() != 1) throw ConfigError("predict_probability needs a binary head");
    const auto p = m.forward(to_tensor_padded<float>(slice, promptnet::kDownsample), prompt);
    Image2D out(slice.h, slice.w);
    for (int y = 0; y < slice.h; ++y)
        for (int x = 0; x < slice.w; ++x) out.at(y, x) = p.at(0, 0, y, x);
    return out;
}

Mask2D predict_binary(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt, double threshold) {
    if (m.n_classes() != 1) throw ConfigError("predict_binary called on a multi-class model");
    const auto p = m.forward(to_tensor_padded<float>(slice, promptnet::kDownsample), prompt);
    return threshold_mask(p, slice.h, slice.w, threshold);
}

LabelSlice predict_multiclass(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt) {
    if (m.n_classes() != 3) throw ConfigError("predict_multiclass called on a binary model");
    const auto p = m.forward(to_tensor_padded<float>(slice, promptnet::kDownsample), prompt);
    LabelSlice out(slice.h, slice.w);
    for (int y = 0; y < slice.h; ++y)
        for (int x = 0; x < slice.w; ++x) {
            int best = 0;
            for (int c = 1; c < p.dims.c; ++c)
                if (p.at(c, 0, y, x) > p.at(best, 0, y, x)) best = c;
            out.at(y, x) = std::uint8_t(best);
        }
    return out;
}

Image2D tumor_probability(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt) {
    const auto p = m.forward(to_tensor_padded<float>(slice, promptnet::kDownsample), prompt);
    Image2D out(slice.h, slice.w);
    for (int y = 0; y < slice.h; ++y)
        for (int x = 0; x < slice.w; ++x)
            out.at(y, x) = m.n_classes() == 1 ? p.at(0, 0, y, x) : 1.0f - p.at(0, 0, y, x);
    return out;
}

}  // namespace samba
