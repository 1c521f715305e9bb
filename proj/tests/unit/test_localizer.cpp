#include <doctest.h>

#include <random>

#include "samba/errors.hpp"
#include "samba/localizer.hpp"
#include "samba/promptnet.hpp"

using namespace samba;
using nn::Dims;
using nn::Tensor;

namespace {

DetectionGrid flat_grid(int s, double objectness) {
    DetectionGrid g;
    g.rows = g.cols = s;
    const std::size_t n = std::size_t(s * s);
    g.objectness.assign(n, objectness);
    g.cx.assign(n, 0.5);
    g.cy.assign(n, 0.5);
    g.w.assign(n, 0.1);
    g.h.assign(n, 0.1);
    return g;
}

}  // namespace

TEST_CASE("localizer output shape and determinism") {
    Localizer<float> m(LocalizerConfig{});
    Tensor<float> s({1, 1, 64, 64});
    Rng rng(1);
    std::uniform_real_distribution<float> u(0, 1);
    for (float& v : s.data) v = u(rng);
    const auto raw = m.raw(s, nullptr);
    CHECK(raw.dims == Dims{5, 1, 4, 4});
    const auto g = m.forward(s);
    CHECK(g.rows == 4);
    CHECK(g.cols == 4);
    CHECK(g.objectness.size() == 16);
    const auto g2 = m.forward(s);
    CHECK(g.objectness == g2.objectness);
    CHECK(g.w == g2.w);
    CHECK_THROWS_AS(m.raw(Tensor<float>({1, 1, 64, 40}), nullptr), ValidationError);
}

TEST_CASE("zero parameters give objectness logit 0") {
    Localizer<double> m(LocalizerConfig{});
    for (auto& g : m.groups())
        for (auto& p : g.params) std::fill(p.value.begin(), p.value.end(), 0.0);
    Tensor<double> s({1, 1, 32, 32}, 0.7);
    const auto g = m.forward(s);
    for (double o : g.objectness) CHECK(o == 0.0);
    for (double c : g.cx) CHECK(c == 0.5);
    const auto d = decode_detection(g, 32, 32);
    REQUIRE(d.has_value());
    CHECK(d->confidence == 0.5);
}

TEST_CASE("decode_detection examples") {
    SUBCASE("all below threshold") {
        CHECK_FALSE(decode_detection(flat_grid(4, -10.0), 64, 64).has_value());
    }
    SUBCASE("hand-computed box") {
        auto g = flat_grid(4, -10.0);
        const std::size_t cell = 1 * 4 + 1;
        g.objectness[cell] = 10.0;
        g.cx[cell] = g.cy[cell] = 0.5;
        g.w[cell] = g.h[cell] = 0.25;
        const auto d = decode_detection(g, 64, 64);
        REQUIRE(d.has_value());
        CHECK(d->box == Box{16, 16, 31, 31});
        CHECK(d->confidence == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))));
    }
    SUBCASE("row-major tie break") {
        auto g = flat_grid(4, -10.0);
        g.objectness[6] = 3.0;   // row 1, col 2
        g.objectness[9] = 3.0;   // row 2, col 1
        g.w[6] = 0.5;
        const auto d = decode_detection(g, 64, 64);
        REQUIRE(d.has_value());
        // cell 6 center: x = 2.5 * 16 = 40, y = 1.5 * 16 = 24; width 32 px, height 6.4 px.
        CHECK(d->box == Box{24, 21, 55, 26});
    }
    SUBCASE("threshold is inclusive of equality") {
        CHECK(decode_detection(flat_grid(2, 0.0), 32, 32, 0.5).has_value());
        CHECK_FALSE(decode_detection(flat_grid(2, 0.0), 32, 32, 0.6).has_value());
    }
}

TEST_CASE("decoded boxes stay in bounds for arbitrary finite grids") {
    Rng rng(7);
    std::normal_distribution<double> n(0.0, 50.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        auto g = flat_grid(4, 0.0);
        for (std::size_t i = 0; i < 16; ++i) {
            g.objectness[i] = n(rng);
            g.cx[i] = u(rng);
            g.cy[i] = u(rng);
            g.w[i] = std::abs(n(rng));
            g.h[i] = u(rng) * 1e-3;
        }
        g.objectness[std::size_t(trial % 16)] = 1e3;
        const int h = 50 + trial % 14, w = 49 + trial % 15;
        const auto d = decode_detection(g, h, w, 0.0);
        REQUIRE(d.has_value());
        CHECK(d->box.in_bounds(h, w));
        CHECK(d->confidence > 0.0);
        CHECK(d->confidence <= 1.0);
    }
}

TEST_CASE("box_from_labels examples") {
    LabelSlice l(8, 10);
    CHECK_FALSE(box_from_labels(l).has_value());
    l.at(2, 3) = kSnfh;
    l.at(5, 7) = kNetc;
    CHECK(box_from_labels(l, Composite::wt) == Box{3, 2, 7, 5});
    CHECK(box_from_labels(l, Composite::tc) == Box{7, 5, 7, 5});
    CHECK_FALSE(box_from_labels(l, Composite::et).has_value());

    LabelSlice single(8, 8);
    single.at(4, 4) = kEt;
    CHECK(box_from_labels(single) == Box{4, 4, 4, 4});
}

TEST_CASE("box_from_labels is the minimal enclosing box") {
    Rng rng(3);
    std::uniform_int_distribution<int> lab(0, 3);
    std::bernoulli_distribution sparse(0.03);
    for (int trial = 0; trial < 100; ++trial) {
        LabelSlice l(12, 17);
        for (auto& v : l.data) v = sparse(rng) ? std::uint8_t(lab(rng)) : std::uint8_t(0);
        for (Composite c : {Composite::et, Composite::tc, Composite::wt}) {
            const auto mask = composite_mask(l.data, c);
            const auto b = box_from_labels(l, c);
            const bool any = std::count(mask.begin(), mask.end(), 1) > 0;
            REQUIRE(b.has_value() == any);
            if (!any) continue;
            bool top = false, bottom = false, left = false, right = false;
            for (int y = 0; y < l.h; ++y)
                for (int x = 0; x < l.w; ++x) {
                    if (!mask[std::size_t(y * l.w + x)]) continue;
                    CHECK(b->contains(x, y));
                    top |= y == b->y_min;
                    bottom |= y == b->y_max;
                    left |= x == b->x_min;
                    right |= x == b->x_max;
                }
            CHECK((top && bottom && left && right));
        }
    }
}

TEST_CASE("full_brain_box") {
    CHECK(full_brain_box(64, 64) == Box{0, 0, 63, 63});
    CHECK(full_brain_box(32, 48) == Box{0, 0, 47, 31});
    const Box b = full_brain_box(32, 48);
    CHECK(b.in_bounds(32, 48));
    CHECK(Box::from_corners(std::clamp(b.x_min, 0, 47), std::clamp(b.y_min, 0, 31), std::clamp(b.x_max, 0, 47),
                            std::clamp(b.y_max, 0, 31)) == b);
}

TEST_CASE("box_loss examples") {
    const Box a{10, 10, 18, 18};
    CHECK(box_loss(a, a, 64, 64) == 0.0);
    CHECK(box_loss(Box{0, 0, 3, 3}, Box{50, 50, 60, 60}, 64, 64) > 1.0);
    // 9-wide squares shifted by one pixel: intersection 8x9 = 72, union 90.
    const Box s = a.shifted(1, 0);
    const double center = 1.0 / 64.0;
    CHECK(box_loss(s, a, 64, 64) == doctest::Approx(1.0 - 72.0 / 90.0 + center));
    CHECK(1.0 - iou(BoxF::from(s), BoxF::from(a)) == doctest::Approx(0.2));
}

TEST_CASE("box_loss is symmetric and non-negative") {
    Rng rng(5);
    std::uniform_int_distribution<int> u(0, 63);
    for (int i = 0; i < 200; ++i) {
        const Box a = Box::from_corners(u(rng), u(rng), u(rng), u(rng));
        const Box b = Box::from_corners(u(rng), u(rng), u(rng), u(rng));
        CHECK(box_loss(a, b, 64, 64) >= 0.0);
        CHECK(box_loss(a, b, 64, 64) == doctest::Approx(box_loss(b, a, 64, 64)));
        CHECK(iou(BoxF::from(a), BoxF::from(b)) == iou(BoxF::from(b), BoxF::from(a)));
        if (!(a == b)) CHECK(box_loss(a, b, 64, 64) > 0.0);
    }
}

TEST_CASE("box_loss_grad matches central differences") {
    const BoxF truth{20, 14, 40, 30};
    struct P {
        double cx, cy, w, h;
    };
    for (P p : {P{28.3, 21.7, 14.2, 9.9}, P{35.1, 27.2, 30.4, 20.6}, P{12.0, 10.0, 8.5, 6.5}, P{30.2, 22.1, 24.3, 19.2}}) {
        const auto g = box_loss_grad(p.cx, p.cy, p.w, p.h, truth, 48, 64);
        auto loss = [&](double cx, double cy, double w, double h) {
            return box_loss(BoxF{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, truth, 48, 64);
        };
        CHECK(g.loss == doctest::Approx(loss(p.cx, p.cy, p.w, p.h)));
        const double e = 1e-6;
        CHECK(g.d_cx == doctest::Approx((loss(p.cx + e, p.cy, p.w, p.h) - loss(p.cx - e, p.cy, p.w, p.h)) / (2 * e)).epsilon(1e-5));
        CHECK(g.d_cy == doctest::Approx((loss(p.cx, p.cy + e, p.w, p.h) - loss(p.cx, p.cy - e, p.w, p.h)) / (2 * e)).epsilon(1e-5));
        CHECK(g.d_w == doctest::Approx((loss(p.cx, p.cy, p.w + e, p.h) - loss(p.cx, p.cy, p.w - e, p.h)) / (2 * e)).epsilon(1e-5));
        CHECK(g.d_h == doctest::Approx((loss(p.cx, p.cy, p.w, p.h + e) - loss(p.cx, p.cy, p.w, p.h - e)) / (2 * e)).epsilon(1e-5));
    }
}

TEST_CASE("detect pads and clips to the original slice") {
    Localizer<float> m(LocalizerConfig{});
    Image2D img(40, 56, 0.2f);
    const auto d = detect(m, img, 0.0);
    REQUIRE(d.has_value());
    CHECK(d->box.in_bounds(40, 56));
}

TEST_CASE("localizer parameter collections") {
    Localizer<float> m(LocalizerConfig{});
    const std::size_t backbone = (8 * 9 + 8) + (16 * 8 * 9 + 16) + (32 * 16 * 9 + 32) + (32 * 32 * 9 + 32);
    CHECK(m.groups()[0].count() == backbone);
    CHECK(m.groups()[1].count() == 5 * 32 + 5);
    CHECK(m.parameter_count() == backbone + 165);
}
