#include "samba/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "samba/errors.hpp"
#include "samba/localizer.hpp"
#include "samba/losses.hpp"
#include "samba/promptnet.hpp"
#include "samba/voting.hpp"

namespace samba {

GradCheckReport gradient_check(const std::function<double()>& loss, const std::function<void()>& gradients,
                               const std::vector<nn::ParamGroup<double>*>& groups, const GradCheckOptions& opt) {
    struct Slot {
        nn::ParamGroup<double>* g;
        std::size_t param, index;
    };
    std::vector<Slot> all;
    for (auto* g : groups)
        for (std::size_t p = 0; p < g->params.size(); ++p)
            for (std::size_t i = 0; i < g->params[p].size(); ++i) all.push_back({g, p, i});
    if (all.empty()) throw ValidationError("gradient_check: no trainable parameters");

    std::vector<std::size_t> pick(all.size());
    std::iota(pick.begin(), pick.end(), 0);
    if (std::size_t(opt.samples) < all.size()) {
        Rng rng(opt.seed);
        std::shuffle(pick.begin(), pick.end(), rng);
        pick.resize(std::size_t(opt.samples));
        std::sort(pick.begin(), pick.end());
    }

    auto checked_loss = [&]() {
        const double v = loss();
        if (!std::isfinite(v)) throw ValidationError("gradient_check: non-finite loss");
        return v;
    };
    checked_loss();
    gradients();

    GradCheckReport r;
    for (std::size_t k : pick) {
        const Slot& s = all[k];
        auto& par = s.g->params[s.param];
        const double analytic = par.grad[s.index];
        double& v = par.value[s.index];
        const double orig = v;
        v = orig + opt.step;
        const double lp = checked_loss();
        v = orig - opt.step;
        const double lm = checked_loss();
        v = orig;
        const double numeric = (lp - lm) / (2.0 * opt.step);
        const double err =
            std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        ++r.checked;
        if (err > r.max_rel_error || r.worst_param.empty()) {
            r.max_rel_error = err;
            r.worst_param = s.g->name + "." + par.name + "[" + std::to_string(s.index) + "]";
            r.worst_analytic = analytic;
            r.worst_numeric = numeric;
        }
    }
    r.passed = r.max_rel_error < opt.tolerance;
    return r;
}

namespace {

template <class G>
void zero_all(G& groups) {
    for (auto& g : groups) g.zero_grad();
}

nn::Tensor<double> random_tensor(nn::Dims d, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::Tensor<double> t(d);
    for (auto& v : t.data) v = u(rng);
    return t;
}

bool in_blob(double y, double x, double cy, double cx, double r) {
    return (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
}

}  // namespace

GradCheckReport check_promptnet_gradients(int n_classes, bool decoder_only, int size, const GradCheckOptions& opt) {
    PromptNetConfig cfg;
    cfg.c_img = 8;
    cfg.encoder_widths = {4, 6};
    cfg.decoder_widths = {6, 4, 4};
    cfg.n_classes = n_classes;
    cfg.seed = opt.seed + 1;
    PromptModel<double> m(cfg);
    if (decoder_only) m.freeze({Collection::encoder, Collection::prompt});
    Rng rng(opt.seed + 2);
    const auto x = random_tensor({1, 1, size, size}, rng);
    const double c = 0.5 * size, r = 0.25 * size;
    Mask2D mask(size, size);
    LabelSlice labels(size, size);
    for (int y = 0; y < size; ++y)
        for (int xx = 0; xx < size; ++xx) {
            if (in_blob(y, xx, c, c, r)) {
                mask.at(y, xx) = 1;
                labels.at(y, xx) = in_blob(y, xx, c, c, 0.4 * r) ? kNetc : in_blob(y, xx, c, c, 0.7 * r) ? kEt : kSnfh;
            }
        }
    const int lo = int(c - r) - 1, hi = int(c + r) + 1;
    const Prompt prompt = Box{lo, lo, hi, hi};

    auto eval = [&](typename PromptModel<double>::Trace* t) {
        const auto logits = m.logits(x, prompt, t);
        return n_classes == 1 ? binary_loss_from_logits(logits, mask) : multiclass_loss_from_logits(logits, labels);
    };
    std::vector<nn::ParamGroup<double>*> groups;
    for (Collection col : {Collection::encoder, Collection::prompt, Collection::decoder})
        if (!m.frozen(col)) groups.push_back(&m.group(col));
    return gradient_check([&] { return eval(nullptr).loss; },
                          [&] {
                              zero_all(m.groups());
                              typename PromptModel<double>::Trace t;
                              const auto lg = eval(&t);
                              m.backward(t, lg.dlogits);
                          },
                          groups, opt);
}

GradCheckReport check_localizer_gradients(int size, const GradCheckOptions& opt) {
    LocalizerConfig cfg;
    cfg.seed = opt.seed + 1;
    Localizer<double> m(cfg);
    Rng rng(opt.seed + 2);
    const auto x = random_tensor({1, 1, size, size}, rng);
    const Box truth{size / 4, size / 8 + 1, size / 2 + 1, size / 2 + 2};
    auto eval = [&](typename Localizer<double>::Trace* t) {
        return localizer_loss(m.raw(x, t), std::optional<Box>(truth), size, size);
    };
    return gradient_check([&] { return eval(nullptr).loss; },
                          [&] {
                              zero_all(m.groups());
                              typename Localizer<double>::Trace t;
                              const auto lg = eval(&t);
                              m.backward(t, lg.dlogits);
                          },
                          {&m.groups()[0], &m.groups()[1]}, opt);
}

GradCheckReport check_votenet_gradients(int size, const GradCheckOptions& opt) {
    VoteNetConfig cfg;
    cfg.seed = opt.seed + 1;
    VoteNet<double> m(cfg);
    Rng rng(opt.seed + 2);
    const auto x = random_tensor({cfg.in_channels, size, size, size}, rng);
    LabelVolume labels({size, size, size});
    const double c = 0.5 * size, r = 0.3 * size;
    for (int z = 0; z < size; ++z)
        for (int y = 0; y < size; ++y)
            for (int xx = 0; xx < size; ++xx) {
                const double d2 = (z - c) * (z - c) + (y - c) * (y - c) + (xx - c) * (xx - c);
                if (d2 <= r * r) labels.at(z, y, xx) = d2 <= 0.2 * r * r ? kNetc : d2 <= 0.5 * r * r ? kEt : kSnfh;
            }
    auto eval = [&](typename VoteNet<double>::Trace* t) { return vote_loss_from_logits(m.raw(x, t), labels); };
    return gradient_check([&] { return eval(nullptr).loss; },
                          [&] {
                              m.group().zero_grad();
                              typename VoteNet<double>::Trace t;
                              const auto lg = eval(&t);
                              m.backward(t, lg.dlogits);
                          },
                          {&m.group()}, opt);
}

}  // namespace samba
