#include "samba/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "samba/errors.hpp"

namespace samba {

using nn::Dims;
using nn::Tensor;

namespace {

void require_same(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw ValidationError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                              std::to_string(b) + ")");
}

double clampp(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

/// dDiceLoss/dp_i for one channel, written into g (accumulated with `scale`).
double dice_with_grad(std::span<const double> p, std::span<const std::uint8_t> t, double scale, std::span<double> g) {
    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * t[i];
        sp += p[i];
        st += t[i];
    }
    const double num = 2.0 * inter + kDiceEps, den = sp + st + kDiceEps;
    for (std::size_t i = 0; i < p.size(); ++i) g[i] += scale * -(2.0 * t[i] * den - num) / (den * den);
    return 1.0 - num / den;
}

struct Window {
    int d, h, w;
    std::size_t count() const { return std::size_t(d) * std::size_t(h) * std::size_t(w); }
};

void check_window(const Dims& ld, const Window& win, const char* what) {
    if (win.d > ld.d || win.h > ld.h || win.w > ld.w || win.count() == 0)
        throw ValidationError(std::string(what) + ": target " + std::to_string(win.d) + "x" + std::to_string(win.h) +
                              "x" + std::to_string(win.w) + " does not fit logits " + std::to_string(ld.d) + "x" +
                              std::to_string(ld.h) + "x" + std::to_string(ld.w));
}

/// Flat offsets of window positions inside one logits channel.
std::vector<std::size_t> window_offsets(const Dims& ld, const Window& win) {
    std::vector<std::size_t> off;
    off.reserve(win.count());
    for (int z = 0; z < win.d; ++z)
        for (int y = 0; y < win.h; ++y)
            for (int x = 0; x < win.w; ++x)
                off.push_back((std::size_t(z) * std::size_t(ld.h) + std::size_t(y)) * std::size_t(ld.w) + std::size_t(x));
    return off;
}

template <class T>
LossGrad<T> softmax_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels, const Window& win,
                         bool with_dice, const char* what) {
    const Dims ld = logits.dims;
    check_window(ld, win, what);
    const int k = ld.c;
    const auto off = window_offsets(ld, win);
    const std::size_t n = off.size(), sp = ld.spatial();
    require_same(labels.size(), n, what);
    for (auto l : labels)
        if (l >= k) throw ValidationError(std::string(what) + ": label " + std::to_string(int(l)) + " out of range");

    std::vector<double> p(std::size_t(k) * n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -INFINITY;
        for (int c = 0; c < k; ++c) mx = std::max(mx, double(logits.data[std::size_t(c) * sp + off[i]]));
        double sum = 0;
        for (int c = 0; c < k; ++c) {
            const double e = std::exp(double(logits.data[std::size_t(c) * sp + off[i]]) - mx);
            p[std::size_t(c) * n + i] = e;
            sum += e;
        }
        for (int c = 0; c < k; ++c) p[std::size_t(c) * n + i] /= sum;
    }

    std::vector<double> g(p.size(), 0.0);
    double loss = 0;
    if (with_dice) {
        std::vector<std::uint8_t> t(n);
        for (int c = 1; c < k; ++c) {
            for (std::size_t i = 0; i < n; ++i) t[i] = labels[i] == c;
            loss += dice_with_grad({p.data() + std::size_t(c) * n, n}, t, 1.0 / (k - 1),
                                   {g.data() + std::size_t(c) * n, n}) /
                    (k - 1);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = std::size_t(labels[i]) * n + i;
        const double pv = p[j];
        loss -= std::log(clampp(pv)) / double(n);
        if (pv > kProbClamp && pv < 1.0 - kProbClamp) g[j] -= 1.0 / (pv * double(n));
    }

    LossGrad<T> out;
    out.loss = loss;
    out.dlogits.reset(ld);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0;
        for (int c = 0; c < k; ++c) dot += g[std::size_t(c) * n + i] * p[std::size_t(c) * n + i];
        for (int c = 0; c < k; ++c) {
            const double pc = p[std::size_t(c) * n + i];
            out.dlogits.data[std::size_t(c) * sp + off[i]] = T(pc * (g[std::size_t(c) * n + i] - dot));
        }
    }
    return out;
}

}  // namespace

double dice_loss(std::span<const double> p, std::span<const std::uint8_t> t, double eps) {
    require_same(p.size(), t.size(), "dice_loss");
    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * t[i];
        sp += p[i];
        st += t[i];
    }
    return 1.0 - (2.0 * inter + eps) / (sp + st + eps);
}

double bce_loss(std::span<const double> p, std::span<const std::uint8_t> t) {
    require_same(p.size(), t.size(), "bce_loss");
    if (p.empty()) return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = clampp(p[i]);
        s -= t[i] ? std::log(q) : std::log(1.0 - q);
    }
    return s / double(p.size());
}

double combined_loss(std::span<const double> p, std::span<const std::uint8_t> t) {
    return dice_loss(p, t) + bce_loss(p, t);
}

double multiclass_dice_loss(std::span<const double> probs, std::span<const std::uint8_t> labels, int k) {
    require_same(probs.size(), labels.size() * std::size_t(k), "multiclass_dice_loss");
    const std::size_t n = labels.size();
    std::vector<std::uint8_t> t(n);
    double s = 0;
    for (int c = 1; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) t[i] = labels[i] == c;
        s += dice_loss(probs.subspan(std::size_t(c) * n, n), t);
    }
    return s / (k - 1);
}

double cross_entropy(std::span<const double> probs, std::span<const std::uint8_t> labels, int k) {
    require_same(probs.size(), labels.size() * std::size_t(k), "cross_entropy");
    const std::size_t n = labels.size();
    if (n == 0) return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= k) throw ValidationError("cross_entropy: label out of range");
        s -= std::log(clampp(probs[std::size_t(labels[i]) * n + i]));
    }
    return s / double(n);
}

template <class T>
LossGrad<T> binary_loss_from_logits(const Tensor<T>& logits, const Mask2D& target) {
    const Dims ld = logits.dims;
    if (ld.c != 1 || ld.d != 1) throw ValidationError("binary loss expects a (1, 1, H, W) head output");
    const Window win{1, target.h, target.w};
    check_window(ld, win, "binary loss");
    const auto off = window_offsets(ld, win);
    const std::size_t n = off.size();
    std::vector<double> p(n), g(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) p[i] = 1.0 / (1.0 + std::exp(-double(logits.data[off[i]])));

    LossGrad<T> out;
    out.loss = dice_with_grad(p, target.data, 1.0, g);
    for (std::size_t i = 0; i < n; ++i) {
        const double q = clampp(p[i]);
        out.loss -= (target.data[i] ? std::log(q) : std::log(1.0 - q)) / double(n);
        if (p[i] > kProbClamp && p[i] < 1.0 - kProbClamp)
            g[i] += (target.data[i] ? -1.0 / p[i] : 1.0 / (1.0 - p[i])) / double(n);
    }
    out.dlogits.reset(ld);
    for (std::size_t i = 0; i < n; ++i) out.dlogits.data[off[i]] = T(g[i] * p[i] * (1.0 - p[i]));
    return out;
}

template <class T>
LossGrad<T> multiclass_loss_from_logits(const Tensor<T>& logits, const LabelSlice& target) {
    if (logits.dims.c != 4 || logits.dims.d != 1) throw ValidationError("multi-class loss expects a (4, 1, H, W) head");
    return softmax_loss(logits, target.data, {1, target.h, target.w}, true, "multi-class loss");
}

template <class T>
LossGrad<T> vote_loss_from_logits(const Tensor<T>& logits, const LabelVolume& target) {
    if (logits.dims.c != 4) throw ValidationError("vote loss expects a 4-channel head");
    return softmax_loss(logits, target.data, {target.shape.d, target.shape.h, target.shape.w}, false, "vote loss");
}

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
    Tensor<T> p = logits;
    const std::size_t sp = p.dims.spatial();
    const int k = p.dims.c;
    for (std::size_t i = 0; i < sp; ++i) {
        T mx = p.data[i];
        for (int c = 1; c < k; ++c) mx = std::max(mx, p.data[std::size_t(c) * sp + i]);
        T sum = 0;
        for (int c = 0; c < k; ++c) {
            T& v = p.data[std::size_t(c) * sp + i];
            v = std::exp(v - mx);
            sum += v;
        }
        for (int c = 0; c < k; ++c) p.data[std::size_t(c) * sp + i] /= sum;
    }
    return p;
}

template LossGrad<float> binary_loss_from_logits(const Tensor<float>&, const Mask2D&);
template LossGrad<double> binary_loss_from_logits(const Tensor<double>&, const Mask2D&);
template LossGrad<float> multiclass_loss_from_logits(const Tensor<float>&, const LabelSlice&);
template LossGrad<double> multiclass_loss_from_logits(const Tensor<double>&, const LabelSlice&);
template LossGrad<float> vote_loss_from_logits(const Tensor<float>&, const LabelVolume&);
template LossGrad<double> vote_loss_from_logits(const Tensor<double>&, const LabelVolume&);
template Tensor<float> softmax_channels(const Tensor<float>&);
template Tensor<double> softmax_channels(const Tensor<double>&);

}  // namespace samba
