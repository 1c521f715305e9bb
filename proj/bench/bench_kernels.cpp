#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "samba/nn/kernels.hpp"
#include "samba/rng.hpp"
#include "samba/voting.hpp"

using namespace samba;
using namespace samba::nn;

namespace {

Tensor<float> random_tensor(Dims d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    Tensor<float> t(d);
    for (float& v : t.data) v = n(rng);
    return t;
}

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<float> u(0.0f, 0.1f);
    std::vector<float> v(n);
    for (float& x : v) x = u(rng);
    return v;
}

double median_ms(const std::function<void()>& f, int reps) {
    f();
    std::vector<double> t;
    for (int r = 0; r < reps; ++r) {
        const auto a = std::chrono::steady_clock::now();
        f();
        t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
}

double max_diff(const Tensor<float>& a, const Tensor<float>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, double(std::abs(a.data[i] - b.data[i])));
    return m;
}

struct Row {
    std::string name;
    double serial_ms, parallel_ms, diff;
};

Row bench_conv(const std::string& name, Dims in, int out, Kernel k, int reps) {
    const Tensor<float> x = random_tensor(in, 1);
    const auto w = random_vec(std::size_t(out) * in.c * k.d * k.h * k.w, 2);
    const auto b = random_vec(std::size_t(out), 3);
    Tensor<float> ys, yp;
    const double s = median_ms([&] { serial::conv_forward<float>(x, w, b, out, k, ys); }, reps);
    const double p = median_ms([&] { parallel::conv_forward<float>(x, w, b, out, k, yp); }, reps);
    return {name, s, p, max_diff(ys, yp)};
}

Row bench_conv_backward(const std::string& name, Dims in, int out, Kernel k, int reps) {
    const Tensor<float> x = random_tensor(in, 4);
    const auto w = random_vec(std::size_t(out) * in.c * k.d * k.h * k.w, 5);
    Tensor<float> y;
    serial::conv_forward<float>(x, w, {}, out, k, y);
    const Tensor<float> dy = random_tensor(y.dims, 6);
    Tensor<float> dxs, dxp;
    std::vector<float> dws(w.size()), dwp(w.size()), dbs(static_cast<std::size_t>(out)), dbp(static_cast<std::size_t>(out));
    const double s = median_ms([&] { serial::conv_backward<float>(x, w, dy, k, &dxs, dws, dbs); }, reps);
    const double p = median_ms([&] { parallel::conv_backward<float>(x, w, dy, k, &dxp, dwp, dbp); }, reps);
    return {name, s, p, max_diff(dxs, dxp)};
}

Row bench_pool(Dims in, int reps) {
    const Tensor<float> x = random_tensor(in, 7);
    Tensor<float> ys, yp;
    const Factor f = Factor::f3d(2);
    const double s = median_ms([&] { serial::avg_pool<float>(x, f, ys); }, reps);
    const double p = median_ms([&] { parallel::avg_pool<float>(x, f, yp); }, reps);
    return {"avg_pool 2x2x2", s, p, max_diff(ys, yp)};
}

Row bench_silu(Dims in, int reps) {
    const Tensor<float> x = random_tensor(in, 8);
    Tensor<float> ys, yp;
    const double s = median_ms([&] { serial::silu<float>(x, ys); }, reps);
    const double p = median_ms([&] { parallel::silu<float>(x, yp); }, reps);
    return {"silu", s, p, max_diff(ys, yp)};
}

Row bench_votenet(int reps) {
    VoteNet<float> net(VoteNetConfig{});
    const Tensor<float> x = random_tensor({4, 16, 32, 32}, 9);
    Tensor<float> ys, yp;
    double s, p;
    {
        ScopedBackend sb(Backend::serial);
        s = median_ms([&] { ys = net.raw(x, nullptr); }, reps);
    }
    {
        ScopedBackend sb(Backend::parallel);
        p = median_ms([&] { yp = net.raw(x, nullptr); }, reps);
    }
    return {"votenet forward 4x16x32x32", s, p, max_diff(ys, yp)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Serial vs parallel kernel benchmark"};
    int reps = 5, threads = 0;
    app.add_option("--reps", reps, "Timed repetitions per kernel (median reported)")->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "OpenMP threads (0 keeps the runtime default)")->check(CLI::NonNegativeNumber);
    CLI11_PARSE(app, argc, argv);
    if (threads > 0) omp_set_num_threads(threads);

    std::vector<Row> rows;
    rows.push_back(bench_conv("conv2d 3x3 16->32 @64x64", {16, 1, 64, 64}, 32, Kernel::k2d(3), reps));
    rows.push_back(bench_conv("conv3d 3x3x3 12->24 @16x32x32", {12, 16, 32, 32}, 24, Kernel::k3d(3), reps));
    rows.push_back(bench_conv_backward("conv3d backward 12->24 @16x32x32", {12, 16, 32, 32}, 24, Kernel::k3d(3), reps));
    rows.push_back(bench_pool({24, 32, 64, 64}, reps));
    rows.push_back(bench_silu({24, 32, 64, 64}, reps));
    rows.push_back(bench_votenet(reps));

    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-36s %12s %12s %8s %10s\n", "kernel", "serial ms", "parallel ms", "speedup", "max diff");
    for (const Row& r : rows)
        std::printf("%-36s %12.2f %12.2f %8.2f %10.2e\n", r.name.c_str(), r.serial_ms, r.parallel_ms,
                    r.serial_ms / r.parallel_ms, r.diff);
    return 0;
}
