#include "samba/foundation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <random>

#include "samba/errors.hpp"
#include "samba/losses.hpp"
#include "samba/rng.hpp"

namespace samba {

namespace {

struct Ellipse {
    double cy, cx, ry, rx, angle;

    bool contains(double y, double x) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double dy = y - cy, dx = x - cx;
        const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
        return u * u + v * v <= 1.0;
    }
};

struct Rect {
    double y0, x0, y1, x1;
    bool contains(double y, double x) const { return y >= y0 && y <= y1 && x >= x0 && x <= x1; }
};

}  // namespace

void FoundationConfig::validate() const {
    if (samples < 1 || epochs < 0 || batch_size < 1) throw ConfigError("foundation: samples, epochs, batch must be positive");
    if (size < 16 || size % promptnet::kDownsample) throw ConfigError("foundation: size must be a multiple of 8, >= 16");
    if (!(learning_rate > 0.0)) throw ConfigError("foundation: learning_rate must be positive");
}

SceneSample generic_scene(std::uint64_t seed, int size) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto U = [&](double a, double b) { return a + (b - a) * u(rng); };
    const double n = size;

    // Background: optional elliptical field of view over zero, base level, linear ramp, ripple.
    const bool fov = u(rng) < 0.6;
    const Ellipse head{n / 2 + U(-2, 2), n / 2 + U(-2, 2), n * U(0.38, 0.48), n * U(0.36, 0.48), U(-0.3, 0.3)};
    const double base = U(0.15, 0.65), ramp = U(-0.15, 0.15), dir = U(0, 2 * M_PI);
    const double ripple = U(0.0, 0.06), freq = U(0.05, 0.25), phase = U(0, 2 * M_PI);

    std::vector<Ellipse> distractors;
    std::vector<double> distractor_level;
    const int nd = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int i = 0; i < nd; ++i) {
        distractors.push_back({U(4, n - 4), U(4, n - 4), U(2, 8), U(2, 8), U(0, M_PI)});
        distractor_level.push_back(U(-0.3, 0.35));
    }

    // Target: ellipse, rectangle or two-lobe union, optionally with a core of different level.
    const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
    const double rmax = n * 0.25;
    const double ty = U(n * 0.2, n * 0.8), tx = U(n * 0.2, n * 0.8);
    const Ellipse e1{ty, tx, U(3, rmax), U(3, rmax), U(0, M_PI)};
    const Ellipse e2{ty + U(-6, 6), tx + U(-6, 6), U(2, rmax * 0.7), U(2, rmax * 0.7), U(0, M_PI)};
    const double hy = U(3, rmax), hx = U(3, rmax);
    const Rect rect{ty - hy, tx - hx, ty + hy, tx + hx};
    auto in_target = [&](double y, double x) {
        switch (kind) {
            case 0: return e1.contains(y, x);
            case 1: return rect.contains(y, x);
            default: return e1.contains(y, x) || e2.contains(y, x);
        }
    };
    const double sign = u(rng) < 0.7 ? 1.0 : -1.0;
    const double level = sign * U(0.15, 0.5);
    const bool has_core = u(rng) < 0.4;
    const Ellipse core{ty, tx, e1.ry * U(0.3, 0.6), e1.rx * U(0.3, 0.6), e1.angle};
    const double core_level = U(-0.4, 0.4);
    const double sigma = U(0.01, 0.08);
    std::normal_distribution<double> noise(0.0, sigma);

    SceneSample s{Image2D(size, size), Mask2D(size, size), {}};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double py = y + 0.5, px = x + 0.5;
            double v = 0.0;
            if (!fov || head.contains(py, px)) {
                v = base + ramp * ((px / n - 0.5) * std::cos(dir) + (py / n - 0.5) * std::sin(dir)) +
                    ripple * std::sin(freq * (px + py) + phase);
                for (std::size_t i = 0; i < distractors.size(); ++i)
                    if (distractors[i].contains(py, px)) v += distractor_level[i];
            }
            if (in_target(py, px)) {
                s.mask.at(y, x) = 1;
                v = std::max(v, 0.1) + level;
                if (has_core && core.contains(py, px)) v += core_level;
            }
            s.image.at(y, x) = float(std::clamp(v + noise(rng), -0.2, 1.4));
        }

    // Optional 3x3 box blur.
    if (u(rng) < 0.3) {
        Image2D b(size, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double acc = 0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= size || xx >= size) continue;
                        acc += s.image.at(yy, xx);
                        ++cnt;
                    }
                b.at(y, x) = float(acc / cnt);
            }
        s.image = std::move(b);
    }

    int x0 = size, y0 = size, x1 = -1, y1 = -1;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (s.mask.at(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) {
        const int c = size / 2;
        s.mask.at(c, c) = 1;
        x0 = x1 = y0 = y1 = c;
    }
    std::uniform_int_distribution<int> jitter(-2, 2);
    const int lo = 0, hi = size - 1;
    Box b = Box::from_corners(std::clamp(x0 + jitter(rng), lo, hi), std::clamp(y0 + jitter(rng), lo, hi),
                              std::clamp(x1 + jitter(rng), lo, hi), std::clamp(y1 + jitter(rng), lo, hi));
    s.box = b;
    return s;
}

TrainHistory pretrain_foundation(PromptModel<float>& m, const FoundationConfig& cfg) {
    cfg.validate();
    if (m.n_classes() != 1) throw ConfigError("foundation pretraining needs a binary head");
    m.freeze(std::array<bool, 3>{false, false, false});
    TrainHistory h;
    h.procedure = "foundation";
    nn::Adam<float> adam({cfg.learning_rate});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t es = child_seed(cfg.seed, std::uint64_t(epoch));
        double loss_sum = 0;
        for (int b0 = 0; b0 < cfg.samples; b0 += cfg.batch_size) {
            const int b1 = std::min(cfg.samples, b0 + cfg.batch_size);
            for (auto& g : m.groups()) g.zero_grad();
            for (int i = b0; i < b1; ++i) {
                const SceneSample s = generic_scene(child_seed(es, std::uint64_t(i)), cfg.size);
                typename PromptModel<float>::Trace tr;
                const auto logits = m.logits(to_tensor_padded<float>(s.image, promptnet::kDownsample), s.box, &tr);
                const auto lg = binary_loss_from_logits(logits, s.mask);
                loss_sum += lg.loss;
                m.backward(tr, lg.dlogits);
            }
            adam.begin_step();
            for (auto& g : m.groups()) {
                for (auto& p : g.params)
                    for (float& v : p.grad) v /= float(b1 - b0);
                adam.update(g);
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.samples = std::size_t(cfg.samples);
        rec.train_loss = loss_sum / cfg.samples;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        h.epochs.push_back(std::move(rec));
    }
    m.freeze({Collection::encoder, Collection::prompt});
    for (const auto& g : m.groups()) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(g.digest()));
        h.digests[g.name] = buf;
    }
    return h;
}

PromptModel<float> from_foundation(const PromptModel<float>& foundation, int n_classes, std::uint64_t seed) {
    PromptNetConfig cfg = foundation.config();
    cfg.n_classes = n_classes;
    cfg.seed = seed;
    PromptModel<float> out(cfg);
    for (std::size_t c = 0; c < 3; ++c) {
        auto& dst = out.groups()[c];
        const auto& src = foundation.groups()[c];
        for (std::size_t i = 0; i < dst.params.size() && i < src.params.size(); ++i)
            if (dst.params[i].name == src.params[i].name && dst.params[i].shape == src.params[i].shape)
                dst.params[i].value = src.params[i].value;
    }
    out.freeze(foundation.frozen_mask());
    return out;
}

}  // namespace samba
