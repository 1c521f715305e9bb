#include "samba/localizer.hpp"

#include <algorithm>
#include <cmath>

#include "samba/promptnet.hpp"

namespace samba {

using nn::Dims;
using nn::Factor;
using nn::Kernel;
using nn::Tensor;

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

int clampi(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

}  // namespace

template <class T>
Localizer<T>::Localizer(const LocalizerConfig& cfg) : cfg_(cfg) {
    groups_[0].name = "backbone";
    groups_[1].name = "head";
    int in = 1;
    for (int s = 0; s < 4; ++s) {
        const int out = cfg.widths[std::size_t(s)];
        if (out < 1) throw ConfigError("localizer widths must be positive");
        stages_[std::size_t(s)] =
            nn::Conv::make(groups_[0], "stage" + std::to_string(s + 1) + ".conv", in, out, Kernel::k2d(3));
        in = out;
    }
    head_ = nn::Conv::make(groups_[1], "head", in, localizer::kOutputs, Kernel::k2d(1));
    Rng rng(cfg.seed);
    for (const auto& c : stages_) c.init(groups_[0], rng);
    head_.init(groups_[1], rng);
}

template <class T>
Tensor<T> Localizer<T>::raw(const Tensor<T>& slice, Trace* trace) const {
    const Dims d = slice.dims;
    if (d.c != 1 || d.d != 1) throw ValidationError("localizer expects a single-channel 2D slice");
    if (d.h % localizer::kStride || d.w % localizer::kStride || d.h == 0 || d.w == 0)
        throw ValidationError("localizer: slice " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                              " is not a multiple of 16 (pad first)");
    Trace local;
    Trace& t = trace ? *trace : local;
    Tensor<T> x = slice;
    for (std::size_t s = 0; s < 4; ++s) {
        t.in[s] = std::move(x);
        stages_[s].forward(groups_[0], t.in[s], t.pre[s]);
        nn::silu(t.pre[s], t.act[s]);
        nn::avg_pool(t.act[s], Factor::f2d(2), x);
    }
    t.head_in = std::move(x);
    Tensor<T> out;
    head_.forward(groups_[1], t.head_in, out);
    return out;
}

template <class T>
void Localizer<T>::backward(const Trace& t, const Tensor<T>& draw) {
    Tensor<T> dx, dact, dpre;
    head_.backward(groups_[1], t.head_in, draw, &dx, true);
    for (int s = 3; s >= 0; --s) {
        const std::size_t i = std::size_t(s);
        nn::avg_pool_backward(dx, Factor::f2d(2), t.act[i].dims, dact);
        nn::silu_backward(t.pre[i], dact, dpre);
        stages_[i].backward(groups_[0], t.in[i], dpre, s > 0 ? &dx : nullptr, true);
    }
}

template <class T>
DetectionGrid Localizer<T>::forward(const Tensor<T>& slice) const {
    return decode_grid(raw(slice, nullptr));
}

template <class T>
DetectionGrid decode_grid(const Tensor<T>& raw) {
    if (raw.dims.c != localizer::kOutputs || raw.dims.d != 1)
        throw ValidationError("decode_grid: expected a (5, 1, S, S) head output");
    DetectionGrid g;
    g.rows = raw.dims.h;
    g.cols = raw.dims.w;
    const std::size_t n = raw.dims.spatial();
    g.objectness.resize(n);
    g.cx.resize(n);
    g.cy.resize(n);
    g.w.resize(n);
    g.h.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        g.objectness[i] = double(raw.channel(0)[i]);
        g.cx[i] = sigmoid(double(raw.channel(1)[i]));
        g.cy[i] = sigmoid(double(raw.channel(2)[i]));
        g.w[i] = softplus(double(raw.channel(3)[i]));
        g.h[i] = softplus(double(raw.channel(4)[i]));
    }
    return g;
}

template DetectionGrid decode_grid<float>(const Tensor<float>&);
template DetectionGrid decode_grid<double>(const Tensor<double>&);

template class Localizer<float>;
template class Localizer<double>;

std::optional<Detection> decode_detection(const DetectionGrid& grid, int image_h, int image_w,
                                          double conf_threshold) {
    const std::size_t n = std::size_t(grid.rows) * std::size_t(grid.cols);
    if (n == 0 || image_h <= 0 || image_w <= 0) return std::nullopt;
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (grid.objectness[i] > grid.objectness[best]) best = i;
    const double conf = sigmoid(grid.objectness[best]);
    if (!(conf >= conf_threshold)) return std::nullopt;

    const int row = int(best) / grid.cols, col = int(best) % grid.cols;
    const double cell = localizer::kStride;
    const double cx = (col + grid.cx[best]) * cell, cy = (row + grid.cy[best]) * cell;
    const double wp = grid.w[best] * grid.cols * cell, hp = grid.h[best] * grid.rows * cell;

    auto span = [](double c, double ext, int limit, int& lo, int& hi) {
        const double a = std::clamp(std::round(c - 0.5 * ext), -1e9, 1e9);
        const double b = std::clamp(std::round(c + 0.5 * ext) - 1.0, -1e9, 1e9);
        lo = clampi(int(a), 0, limit - 1);
        hi = clampi(int(b), 0, limit - 1);
        if (hi < lo) hi = lo;
    };
    Detection d;
    span(cx, wp, image_w, d.box.x_min, d.box.x_max);
    span(cy, hp, image_h, d.box.y_min, d.box.y_max);
    d.confidence = conf;
    return d;
}

std::optional<Detection> detect(const Localizer<float>& m, const Image2D& slice, double conf_threshold) {
    const DetectionGrid g = m.forward(to_tensor_padded<float>(slice, localizer::kStride));
    return decode_detection(g, slice.h, slice.w, conf_threshold);
}

std::optional<Box> box_from_labels(const LabelSlice& labels, Composite target) {
    const auto mask = composite_mask(labels.data, target);
    Box b{labels.w, labels.h, -1, -1};
    bool any = false;
    for (int y = 0; y < labels.h; ++y)
        for (int x = 0; x < labels.w; ++x) {
            if (!mask[std::size_t(y) * std::size_t(labels.w) + std::size_t(x)]) continue;
            any = true;
            b.x_min = std::min(b.x_min, x);
            b.y_min = std::min(b.y_min, y);
            b.x_max = std::max(b.x_max, x);
            b.y_max = std::max(b.y_max, y);
        }
    if (!any) return std::nullopt;
    return b;
}

Box full_brain_box(int h, int w) {
    if (h <= 0 || w <= 0) throw ValidationError("full_brain_box: empty slice shape");
    return {0, 0, w - 1, h - 1};
}

double iou(const BoxF& a, const BoxF& b) {
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

double box_loss(const BoxF& pred, const BoxF& truth, int image_h, int image_w) {
    const double dx = (pred.cx() - truth.cx()) / image_w, dy = (pred.cy() - truth.cy()) / image_h;
    return (1.0 - iou(pred, truth)) + std::sqrt(dx * dx + dy * dy);
}

double box_loss(const Box& pred, const Box& truth, int image_h, int image_w) {
    return box_loss(BoxF::from(pred), BoxF::from(truth), image_h, image_w);
}

BoxLossGrad box_loss_grad(double cx, double cy, double w, double h, const BoxF& t, int image_h, int image_w) {
    const BoxF p{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    BoxLossGrad g;
    g.loss = box_loss(p, t, image_h, image_w);

    const double iw = std::min(p.x2, t.x2) - std::max(p.x1, t.x1);
    const double ih = std::min(p.y2, t.y2) - std::max(p.y1, t.y1);
    const double inter = std::max(0.0, iw) * std::max(0.0, ih);
    const double uni = p.area() + t.area() - inter;
    // d(-IoU)/d(px1, px2, py1, py2)
    double gx1 = 0, gx2 = 0, gy1 = 0, gy2 = 0;
    if (uni > 0) {
        const double d_inter = -(uni + inter) / (uni * uni);
        const double d_area = inter / (uni * uni);
        const double ph = p.y2 - p.y1, pw = p.x2 - p.x1;
        gx1 = -ph * d_area;
        gx2 = ph * d_area;
        gy1 = -pw * d_area;
        gy2 = pw * d_area;
        if (iw > 0 && ih > 0) {
            if (p.x2 < t.x2) gx2 += ih * d_inter;
            if (p.x1 > t.x1) gx1 -= ih * d_inter;
            if (p.y2 < t.y2) gy2 += iw * d_inter;
            if (p.y1 > t.y1) gy1 -= iw * d_inter;
        }
    }
    g.d_cx = gx1 + gx2;
    g.d_cy = gy1 + gy2;
    g.d_w = 0.5 * (gx2 - gx1);
    g.d_h = 0.5 * (gy2 - gy1);

    const double ex = (cx - t.cx()) / image_w, ey = (cy - t.cy()) / image_h;
    const double dist = std::sqrt(ex * ex + ey * ey);
    if (dist > 0) {
        g.d_cx += ex / (dist * image_w);
        g.d_cy += ey / (dist * image_h);
    }
    return g;
}

std::pair<int, int> responsible_cell(const Box& truth, int rows, int cols) {
    const BoxF b = BoxF::from(truth);
    const int r = std::clamp(int(std::floor(b.cy() / localizer::kStride)), 0, rows - 1);
    const int c = std::clamp(int(std::floor(b.cx() / localizer::kStride)), 0, cols - 1);
    return {r, c};
}

template <class T>
LossGrad<T> localizer_loss(const Tensor<T>& raw, const std::optional<Box>& truth, int image_h, int image_w) {
    if (raw.dims.c != localizer::kOutputs || raw.dims.d != 1)
        throw ValidationError("localizer_loss: expected a (5, 1, S, S) head output");
    const int rows = raw.dims.h, cols = raw.dims.w;
    const std::size_t n = raw.dims.spatial();
    LossGrad<T> out;
    out.dlogits.reset(raw.dims);
    std::size_t pos = n;
    if (truth) {
        truth->validate(image_h, image_w);
        const auto [r, c] = responsible_cell(*truth, rows, cols);
        pos = std::size_t(r) * std::size_t(cols) + std::size_t(c);
    }
    auto bce = [](double z, double t) { return softplus(z) - t * z; };
    for (std::size_t i = 0; i < n; ++i) {
        const double z = double(raw.channel(0)[i]);
        const double t = i == pos ? 1.0 : 0.0;
        out.loss += bce(z, t) / double(n);
        out.dlogits.channel(0)[i] = T((sigmoid(z) - t) / double(n));
    }
    if (pos == n) return out;

    const double z = double(raw.channel(0)[pos]);
    out.loss += bce(z, 1.0);
    out.dlogits.channel(0)[pos] += T(sigmoid(z) - 1.0);

    const int r = int(pos) / cols, c = int(pos) % cols;
    const double ext_w = double(cols * localizer::kStride), ext_h = double(rows * localizer::kStride);
    const double r1 = double(raw.channel(1)[pos]), r2 = double(raw.channel(2)[pos]);
    const double r3 = double(raw.channel(3)[pos]), r4 = double(raw.channel(4)[pos]);
    const double s1 = sigmoid(r1), s2 = sigmoid(r2);
    const double cx = (c + s1) * localizer::kStride, cy = (r + s2) * localizer::kStride;
    const double w = softplus(r3) * ext_w, h = softplus(r4) * ext_h;
    const BoxLossGrad g = box_loss_grad(cx, cy, w, h, BoxF::from(*truth), image_h, image_w);
    out.loss += g.loss;
    out.dlogits.channel(1)[pos] = T(g.d_cx * localizer::kStride * s1 * (1.0 - s1));
    out.dlogits.channel(2)[pos] = T(g.d_cy * localizer::kStride * s2 * (1.0 - s2));
    out.dlogits.channel(3)[pos] = T(g.d_w * ext_w * sigmoid(r3));
    out.dlogits.channel(4)[pos] = T(g.d_h * ext_h * sigmoid(r4));
    return out;
}

template LossGrad<float> localizer_loss(const Tensor<float>&, const std::optional<Box>&, int, int);
template LossGrad<double> localizer_loss(const Tensor<double>&, const std::optional<Box>&, int, int);

}  // namespace samba
