#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "samba/errors.hpp"
#include "samba/gradcheck.hpp"
#include "samba/losses.hpp"
#include "samba/rng.hpp"

using namespace samba;
using nn::Tensor;

namespace {

std::vector<std::uint8_t> random_mask(std::size_t n, double p, Rng& rng) {
    std::bernoulli_distribution b(p);
    std::vector<std::uint8_t> m(n);
    for (auto& v : m) v = b(rng);
    return m;
}

}  // namespace

TEST_CASE("dice_loss examples") {
    std::vector<std::uint8_t> t(400, 0);
    for (int i = 0; i < 100; ++i) t[std::size_t(i)] = 1;
    std::vector<double> p(t.begin(), t.end());
    CHECK(dice_loss(p, t) == doctest::Approx(0.0).epsilon(1e-15));

    std::vector<double> half(64 * 64, 0.5);
    std::vector<std::uint8_t> empty(64 * 64, 0);
    CHECK(dice_loss(half, empty) == doctest::Approx(1.0 - 1.0 / 2049.0).epsilon(1e-14));

    std::vector<double> inv(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) inv[i] = 1.0 - t[i];
    CHECK(dice_loss(inv, t) == doctest::Approx(1.0 - 1.0 / 401.0).epsilon(1e-14));

    CHECK_THROWS_AS(dice_loss(std::vector<double>(3), std::vector<std::uint8_t>(4)), ValidationError);
}

TEST_CASE("bce_loss examples and clamping") {
    std::vector<std::uint8_t> t{1, 0, 1, 0};
    std::vector<double> hard{1, 0, 1, 0};
    const double clamped = -std::log(1.0 - kProbClamp);
    CHECK(bce_loss(hard, t) == doctest::Approx(clamped).epsilon(1e-12));
    CHECK(bce_loss(hard, t) < 1e-6);

    std::vector<double> half(4, 0.5);
    CHECK(bce_loss(half, t) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    std::vector<double> wrong{0, 1, 0, 1};
    const double v = bce_loss(wrong, t);
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(-std::log(kProbClamp)).epsilon(1e-8));

    CHECK(combined_loss(half, t) == doctest::Approx(dice_loss(half, t) + std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("loss ranges on random inputs") {
    Rng rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + std::size_t(trial % 37);
        auto t = random_mask(n, 0.4, rng);
        std::vector<double> p(n);
        for (auto& v : p) v = u(rng);
        const double d = dice_loss(p, t);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
        CHECK(bce_loss(p, t) >= 0.0);
    }
}

TEST_CASE("multiclass dice averages tumor channels") {
    // 3 positions, labels {0, 1, 2}, k = 3; one-hot probabilities give zero loss.
    std::vector<std::uint8_t> labels{0, 1, 2};
    std::vector<double> onehot{1, 0, 0, 0, 1, 0, 0, 0, 1};
    CHECK(multiclass_dice_loss(onehot, labels, 3) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cross_entropy(onehot, labels, 3) < 1e-6);

    std::vector<double> uniform(9, 1.0 / 3.0);
    // channel c: inter = 1/3, sum p = 1, sum t = 1 -> 1 - (2/3 + 1) / 3
    const double per = 1.0 - (2.0 / 3.0 + 1.0) / 3.0;
    CHECK(multiclass_dice_loss(uniform, labels, 3) == doctest::Approx(per).epsilon(1e-14));
    CHECK(cross_entropy(uniform, labels, 3) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("logit losses agree with the probability-space definitions") {
    Rng rng(11);
    std::normal_distribution<double> n(0.0, 1.5);
    Tensor<double> logits({1, 1, 8, 8});
    for (auto& v : logits.data) v = n(rng);
    Mask2D target(8, 8);
    for (int y = 2; y < 6; ++y)
        for (int x = 1; x < 5; ++x) target.at(y, x) = 1;
    std::vector<double> p(64);
    for (std::size_t i = 0; i < 64; ++i) p[i] = 1.0 / (1.0 + std::exp(-logits.data[i]));
    CHECK(binary_loss_from_logits(logits, target).loss == doctest::Approx(combined_loss(p, target.data)).epsilon(1e-13));

    Tensor<double> ml({4, 1, 8, 8});
    for (auto& v : ml.data) v = n(rng);
    LabelSlice lab(8, 8);
    std::uniform_int_distribution<int> cls(0, 3);
    for (auto& v : lab.data) v = std::uint8_t(cls(rng));
    const Tensor<double> probs = softmax_channels(ml);
    const double want = multiclass_dice_loss(probs.data, lab.data, 4) + cross_entropy(probs.data, lab.data, 4);
    CHECK(multiclass_loss_from_logits(ml, lab).loss == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("padded logits outside the target window get zero gradient") {
    Tensor<double> logits({1, 1, 8, 8}, 0.3);
    Mask2D target(5, 6);
    target.at(1, 1) = 1;
    const auto lg = binary_loss_from_logits(logits, target);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            if (y >= 5 || x >= 6) CHECK(lg.dlogits.at(0, 0, y, x) == 0.0);
    CHECK_THROWS_AS(binary_loss_from_logits(logits, Mask2D(9, 8)), ValidationError);
}

namespace {

/// Logit tensor exposed as a parameter group so gradient_check can perturb it.
struct LogitParam {
    nn::ParamGroup<double> g;
    explicit LogitParam(nn::Dims d, std::uint64_t seed) {
        g.name = "logits";
        g.add("z", {d.c, d.d, d.h, d.w});
        Rng rng(seed);
        std::normal_distribution<double> n(0.0, 1.0);
        for (auto& v : g.params[0].value) v = n(rng);
        dims = d;
    }
    Tensor<double> tensor() const {
        Tensor<double> t(dims);
        t.data = g.params[0].value;
        return t;
    }
    nn::Dims dims;
};

}  // namespace

TEST_CASE("loss gradients match central differences") {
    SUBCASE("binary") {
        LogitParam lp({1, 1, 8, 8}, 1);
        Mask2D target(7, 6);
        for (int y = 2; y < 5; ++y)
            for (int x = 2; x < 5; ++x) target.at(y, x) = 1;
        auto r = gradient_check([&] { return binary_loss_from_logits(lp.tensor(), target).loss; },
                                [&] { lp.g.params[0].grad = binary_loss_from_logits(lp.tensor(), target).dlogits.data; },
                                {&lp.g});
        CHECK_MESSAGE(r.passed, r.worst_param, " ", r.max_rel_error);
    }
    SUBCASE("multi-class") {
        LogitParam lp({4, 1, 6, 6}, 2);
        LabelSlice lab(6, 6);
        for (int i = 0; i < 36; ++i) lab.data[std::size_t(i)] = std::uint8_t(i % 4);
        auto r = gradient_check([&] { return multiclass_loss_from_logits(lp.tensor(), lab).loss; },
                                [&] { lp.g.params[0].grad = multiclass_loss_from_logits(lp.tensor(), lab).dlogits.data; },
                                {&lp.g});
        CHECK_MESSAGE(r.passed, r.worst_param, " ", r.max_rel_error);
    }
    SUBCASE("vote") {
        LogitParam lp({4, 4, 4, 4}, 3);
        LabelVolume lab({3, 4, 4});
        for (std::size_t i = 0; i < lab.data.size(); ++i) lab.data[i] = std::uint8_t((i * 7) % 4);
        auto r = gradient_check([&] { return vote_loss_from_logits(lp.tensor(), lab).loss; },
                                [&] { lp.g.params[0].grad = vote_loss_from_logits(lp.tensor(), lab).dlogits.data; },
                                {&lp.g});
        CHECK_MESSAGE(r.passed, r.worst_param, " ", r.max_rel_error);
    }
}

TEST_CASE("gradient_check on a quadratic is exact to roundoff") {
    nn::ParamGroup<double> a, frozen;
    a.name = "a";
    frozen.name = "frozen";
    a.add("w", {300});
    frozen.add("v", {10});
    Rng rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : a.params[0].value) v = n(rng);
    for (auto& v : frozen.params[0].value) v = n(rng);
    std::vector<double> coef(300);
    for (auto& c : coef) c = 0.5 + std::abs(n(rng));

    auto loss = [&] {
        double s = 0;
        for (std::size_t i = 0; i < 300; ++i) s += coef[i] * a.params[0].value[i] * a.params[0].value[i];
        for (double v : frozen.params[0].value) s += v * v;
        return s;
    };
    auto grads = [&] {
        for (std::size_t i = 0; i < 300; ++i) a.params[0].grad[i] = 2.0 * coef[i] * a.params[0].value[i];
        std::fill(frozen.params[0].grad.begin(), frozen.params[0].grad.end(), 1e9);
    };
    GradCheckOptions opt;
    opt.samples = 200;
    opt.step = 1e-3;
    const auto before = frozen.params[0].value;
    auto r = gradient_check(loss, grads, {&a}, opt);
    CHECK(r.passed);
    CHECK(r.checked == 200);
    CHECK(r.max_rel_error < 1e-9);
    CHECK(r.worst_param.rfind("a.w[", 0) == 0);
    CHECK(frozen.params[0].value == before);

    SUBCASE("a wrong gradient is caught and located") {
        auto bad = [&] {
            grads();
            a.params[0].grad[17] *= 1.01;
        };
        opt.samples = 300;
        auto rb = gradient_check(loss, bad, {&a}, opt);
        CHECK_FALSE(rb.passed);
        CHECK(rb.worst_param == "a.w[17]");
    }
    SUBCASE("non-finite loss") {
        CHECK_THROWS_AS(gradient_check([] { return NAN; }, [] {}, {&a}, opt), ValidationError);
    }
}
