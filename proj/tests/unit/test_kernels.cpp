#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <random>

#include "samba/nn/kernels.hpp"
#include "samba/rng.hpp"

using namespace samba;
using namespace samba::nn;

namespace {

template <class T>
Tensor<T> random_tensor(Dims d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor<T> t(d);
    for (T& v : t.data) v = T(n(rng));
    return t;
}

template <class T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> u(0.0, 0.5);
    std::vector<T> v(n);
    for (T& x : v) x = T(u(rng));
    return v;
}

template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

struct ConvCase {
    Dims in;
    int out_c;
    Kernel k;
};

const ConvCase kCases[] = {
    {{1, 1, 8, 8}, 4, Kernel::k2d(3)},   {{3, 1, 16, 12}, 5, Kernel::k2d(3)},
    {{6, 1, 9, 7}, 2, Kernel::k2d(1)},   {{4, 1, 64, 64}, 8, Kernel::k2d(3)},
    {{2, 6, 8, 10}, 3, Kernel::k3d(3)},  {{5, 4, 4, 4}, 4, Kernel::k3d(1)},
    {{3, 8, 16, 16}, 6, Kernel::k3d(3)}, {{2, 1, 5, 5}, 3, Kernel{1, 5, 5}},
};

}  // namespace

TEST_CASE("conv forward matches a hand-computed 3x3 example") {
    Tensor<double> x({1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) x.data[std::size_t(i)] = i + 1;
    std::vector<double> w(9, 1.0), b{0.5};
    for (Backend be : {Backend::serial, Backend::parallel}) {
        ScopedBackend sb(be);
        Tensor<double> y;
        conv_forward<double>(x, w, b, 1, Kernel::k2d(3), y);
        // Center sees all 9 pixels; corner (0,0) sees 1,2,4,5.
        CHECK(y.at(0, 0, 1, 1) == doctest::Approx(45.5));
        CHECK(y.at(0, 0, 0, 0) == doctest::Approx(12.5));
        CHECK(y.at(0, 0, 0, 1) == doctest::Approx(21.5));
        CHECK(y.at(0, 0, 2, 2) == doctest::Approx(28.5));
    }
}

TEST_CASE("parallel convolution matches the serial reference") {
    std::uint64_t seed = 1;
    for (const auto& c : kCases) {
        CAPTURE(c.in.c);
        CAPTURE(c.in.d);
        CAPTURE(c.in.h);
        const auto x = random_tensor<double>(c.in, seed++);
        const std::size_t wn = std::size_t(c.out_c) * c.in.c * c.k.volume();
        const auto w = random_vec<double>(wn, seed++);
        const auto b = random_vec<double>(std::size_t(c.out_c), seed++);

        Tensor<double> ys, yp;
        serial::conv_forward<double>(x, w, b, c.out_c, c.k, ys);
        parallel::conv_forward<double>(x, w, b, c.out_c, c.k, yp);
        CHECK(ys.dims == yp.dims);
        CHECK(max_abs_diff(ys.data, yp.data) < 1e-10);

        const auto dy = random_tensor<double>(ys.dims, seed++);
        Tensor<double> dxs, dxp;
        std::vector<double> dws(wn, 0.25), dwp(wn, 0.25), dbs(b.size(), 1.0), dbp(b.size(), 1.0);
        serial::conv_backward<double>(x, w, dy, c.k, &dxs, dws, dbs);
        parallel::conv_backward<double>(x, w, dy, c.k, &dxp, dwp, dbp);
        CHECK(max_abs_diff(dxs.data, dxp.data) < 1e-10);
        CHECK(max_abs_diff(dws, dwp) < 1e-9);
        CHECK(max_abs_diff(dbs, dbp) < 1e-10);
    }
}

TEST_CASE("parallel float convolution stays close to the serial reference") {
    const ConvCase c{{8, 1, 32, 32}, 16, Kernel::k2d(3)};
    const auto x = random_tensor<float>(c.in, 3);
    const auto w = random_vec<float>(std::size_t(16 * 8 * 9), 4);
    const auto b = random_vec<float>(16, 5);
    Tensor<float> ys, yp;
    serial::conv_forward<float>(x, w, b, 16, c.k, ys);
    parallel::conv_forward<float>(x, w, b, 16, c.k, yp);
    CHECK(max_abs_diff(ys.data, yp.data) < 1e-4);
}

TEST_CASE("parallel convolution is bit-identical across thread counts") {
    const ConvCase c{{4, 6, 24, 24}, 6, Kernel::k3d(3)};
    const auto x = random_tensor<float>(c.in, 10);
    const std::size_t wn = std::size_t(6 * 4 * 27);
    const auto w = random_vec<float>(wn, 11);
    const auto b = random_vec<float>(6, 12);
    Tensor<float> y1, dx1, y4, dx4;
    std::vector<float> dw1(wn), db1(6), dw4(wn), db4(6);
    const int prev = omp_get_max_threads();
    omp_set_num_threads(1);
    parallel::conv_forward<float>(x, w, b, 6, c.k, y1);
    parallel::conv_backward<float>(x, w, y1, c.k, &dx1, dw1, db1);
    omp_set_num_threads(4);
    parallel::conv_forward<float>(x, w, b, 6, c.k, y4);
    parallel::conv_backward<float>(x, w, y4, c.k, &dx4, dw4, db4);
    omp_set_num_threads(prev);
    CHECK(y1.data == y4.data);
    CHECK(dx1.data == dx4.data);
    CHECK(dw1 == dw4);
    CHECK(db1 == db4);
}

TEST_CASE("serial conv backward agrees with central differences") {
    const Dims in{2, 3, 5, 4};
    const Kernel k = Kernel::k3d(3);
    const int oc = 2;
    auto x = random_tensor<double>(in, 20);
    auto w = random_vec<double>(std::size_t(oc * in.c * k.volume()), 21);
    auto b = random_vec<double>(std::size_t(oc), 22);
    Tensor<double> y;
    serial::conv_forward<double>(x, w, b, oc, k, y);
    const auto r = random_tensor<double>(y.dims, 23);
    auto loss = [&]() {
        Tensor<double> yy;
        serial::conv_forward<double>(x, w, b, oc, k, yy);
        double s = 0;
        for (std::size_t i = 0; i < yy.data.size(); ++i) s += yy.data[i] * r.data[i];
        return s;
    };
    Tensor<double> dx;
    std::vector<double> dw(w.size()), db(b.size());
    serial::conv_backward<double>(x, w, r, k, &dx, dw, db);
    const double h = 1e-5;
    auto numeric = [&](double& v) {
        const double o = v;
        v = o + h;
        const double lp = loss();
        v = o - h;
        const double lm = loss();
        v = o;
        return (lp - lm) / (2 * h);
    };
    for (std::size_t i = 0; i < w.size(); i += 7) CHECK(numeric(w[i]) == doctest::Approx(dw[i]).epsilon(1e-6));
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(numeric(b[i]) == doctest::Approx(db[i]).epsilon(1e-6));
    for (std::size_t i = 0; i < x.data.size(); i += 5)
        CHECK(numeric(x.data[i]) == doctest::Approx(dx.data[i]).epsilon(1e-6));
}

TEST_CASE("pooling, upsampling and SiLU agree across backends") {
    for (Factor f : {Factor::f2d(2), Factor::f3d(2)}) {
        const Dims in = f.d == 1 ? Dims{3, 1, 8, 12} : Dims{3, 4, 8, 6};
        const auto x = random_tensor<double>(in, 30);
        Tensor<double> ps, pp, us, up;
        serial::avg_pool(x, f, ps);
        parallel::avg_pool(x, f, pp);
        CHECK(ps.data == pp.data);
        CHECK(ps.dims == Dims{3, in.d / f.d, in.h / 2, in.w / 2});

        Tensor<double> gs, gp;
        serial::avg_pool_backward(ps, f, in, gs);
        parallel::avg_pool_backward(ps, f, in, gp);
        CHECK(gs.data == gp.data);

        serial::upsample_nearest(ps, f, us);
        parallel::upsample_nearest(ps, f, up);
        CHECK(us.data == up.data);
        CHECK(us.dims == in);
        serial::upsample_nearest_backward(us, f, ps.dims, gs);
        parallel::upsample_nearest_backward(us, f, ps.dims, gp);
        CHECK(gs.data == gp.data);
        // Summing the copies of each pooled value back: factor volume times the value.
        for (std::size_t i = 0; i < gs.data.size(); ++i)
            CHECK(gs.data[i] == doctest::Approx(ps.data[i] * f.d * f.h * f.w));
    }
    const auto x = random_tensor<double>({2, 1, 7, 9}, 31);
    Tensor<double> ss, sp, ds, dp;
    serial::silu(x, ss);
    parallel::silu(x, sp);
    CHECK(max_abs_diff(ss.data, sp.data) < 1e-15);
    serial::silu_backward(x, x, ds);
    parallel::silu_backward(x, x, dp);
    CHECK(max_abs_diff(ds.data, dp.data) < 1e-15);
}

TEST_CASE("avg pool of a 2x2 block and SiLU values") {
    Tensor<double> x({1, 1, 2, 2});
    x.data = {1, 2, 3, 6};
    Tensor<double> y;
    avg_pool(x, Factor::f2d(2), y);
    CHECK(y.data[0] == doctest::Approx(3.0));

    Tensor<double> z({1, 1, 1, 3});
    z.data = {0.0, 1.0, -2.0};
    silu(z, y);
    CHECK(y.data[0] == 0.0);
    CHECK(y.data[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(y.data[2] == doctest::Approx(-2.0 / (1.0 + std::exp(2.0))));
}

TEST_CASE("backend switch is scoped") {
    set_backend(Backend::parallel);
    {
        ScopedBackend s(Backend::serial);
        CHECK(backend() == Backend::serial);
    }
    CHECK(backend() == Backend::parallel);
}
