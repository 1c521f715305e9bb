#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "samba/nn/kernels.hpp"

namespace samba::nn {

namespace {
std::atomic<Backend> g_backend{Backend::parallel};
}

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

namespace parallel {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using MapStrided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using MapStridedC = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Target number of output positions per im2col block. Blocks always cover whole (z, y) rows.
constexpr std::size_t kBlockPositions = 2048;

struct Blocking {
    int rows_per_block;
    int n_blocks;
};

Blocking blocking(Dims in) {
    const int n_rows = in.d * in.h;
    const int rpb = std::max(1, int(kBlockPositions / std::size_t(in.w)));
    return {rpb, (n_rows + rpb - 1) / rpb};
}

// col[r][j] for r = (ic, kz, ky, kx) and j over positions of rows [row0, row1).
template <class T>
void im2col(const Tensor<T>& x, Kernel k, int row0, int row1, T* col) {
    const Dims in = x.dims;
    const int pd = k.d / 2, ph = k.h / 2, pw = k.w / 2;
    const std::size_t nb = std::size_t(row1 - row0) * in.w;
    std::size_t r = 0;
    for (int ic = 0; ic < in.c; ++ic) {
        const T* src = x.channel(ic);
        for (int kz = 0; kz < k.d; ++kz)
            for (int ky = 0; ky < k.h; ++ky)
                for (int kx = 0; kx < k.w; ++kx, ++r) {
                    T* dst = col + r * nb;
                    const int shift = kx - pw;
                    for (int row = row0; row < row1; ++row) {
                        const int z = row / in.h, yy = row % in.h;
                        const int iz = z + kz - pd, iy = yy + ky - ph;
                        T* out = dst + std::size_t(row - row0) * in.w;
                        if (iz < 0 || iz >= in.d || iy < 0 || iy >= in.h) {
                            std::fill_n(out, in.w, T(0));
                            continue;
                        }
                        const T* line = src + (std::size_t(iz) * in.h + iy) * in.w;
                        const int lo = std::max(0, -shift), hi = std::min(in.w, in.w - shift);
                        std::fill_n(out, lo, T(0));
                        if (hi > lo) std::memcpy(out + lo, line + lo + shift, sizeof(T) * (hi - lo));
                        std::fill(out + std::max(hi, lo), out + in.w, T(0));
                    }
                }
    }
}

void check_kernel(Kernel k) {
    if (k.d % 2 == 0 || k.h % 2 == 0 || k.w % 2 == 0)
        throw std::invalid_argument("convolution kernels must have odd extents");
}

}  // namespace

template <class T>
void conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                  int out_channels, Kernel k, Tensor<T>& y) {
    check_kernel(k);
    const Dims in = x.dims;
    const int ck = in.c * k.volume();
    if (weight.size() != std::size_t(out_channels) * std::size_t(ck))
        throw std::invalid_argument("conv_forward: weight size mismatch");
    y.reset({out_channels, in.d, in.h, in.w});
    const std::size_t P = in.spatial();
    const Blocking bl = blocking(in);
    const int n_rows = in.d * in.h;
    MapC<T> wmat(weight.data(), out_channels, ck);

#pragma omp parallel
    {
        std::vector<T> col;
#pragma omp for schedule(static)
        for (int b = 0; b < bl.n_blocks; ++b) {
            const int r0 = b * bl.rows_per_block, r1 = std::min(n_rows, r0 + bl.rows_per_block);
            const std::size_t p0 = std::size_t(r0) * in.w;
            const std::size_t nb = std::size_t(r1 - r0) * in.w;
            col.resize(std::size_t(ck) * nb);
            im2col(x, k, r0, r1, col.data());
            MapC<T> cmat(col.data(), ck, std::ptrdiff_t(nb));
            MapStrided<T> out(y.data.data() + p0, out_channels, std::ptrdiff_t(nb),
                              Eigen::OuterStride<>(std::ptrdiff_t(P)));
            out.noalias() = wmat * cmat;
            if (!bias.empty())
                for (int o = 0; o < out_channels; ++o) out.row(o).array() += bias[std::size_t(o)];
        }
    }
}

template <class T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& dy, Kernel k,
                   Tensor<T>* dx, std::span<T> dweight, std::span<T> dbias) {
    check_kernel(k);
    const Dims in = x.dims;
    const int oc = dy.dims.c;
    const int ck = in.c * k.volume();
    const std::size_t P = in.spatial();

    if (!dbias.empty())
        for (int o = 0; o < oc; ++o) {
            const T* g = dy.channel(o);
            T acc = 0;
            for (std::size_t p = 0; p < P; ++p) acc += g[p];
            dbias[std::size_t(o)] += acc;
        }

    if (!dweight.empty()) {
        const Blocking bl = blocking(in);
        const int n_rows = in.d * in.h;
        std::vector<T> partial(std::size_t(bl.n_blocks) * oc * ck);
#pragma omp parallel
        {
            std::vector<T> col;
#pragma omp for schedule(static)
            for (int b = 0; b < bl.n_blocks; ++b) {
                const int r0 = b * bl.rows_per_block, r1 = std::min(n_rows, r0 + bl.rows_per_block);
                const std::size_t p0 = std::size_t(r0) * in.w;
                const std::size_t nb = std::size_t(r1 - r0) * in.w;
                col.resize(std::size_t(ck) * nb);
                im2col(x, k, r0, r1, col.data());
                MapC<T> cmat(col.data(), ck, std::ptrdiff_t(nb));
                MapStridedC<T> g(dy.data.data() + p0, oc, std::ptrdiff_t(nb),
                                 Eigen::OuterStride<>(std::ptrdiff_t(P)));
                Eigen::Map<RowMat<T>> part(partial.data() + std::size_t(b) * oc * ck, oc, ck);
                part.noalias() = g * cmat.transpose();
            }
        }
        const std::size_t n = std::size_t(oc) * ck;
        for (int b = 0; b < bl.n_blocks; ++b) {
            const T* part = partial.data() + std::size_t(b) * n;
            for (std::size_t i = 0; i < n; ++i) dweight[i] += part[i];
        }
    }

    if (dx) {
        // Input gradient is a same-padded convolution of dy with the spatially flipped,
        // channel-transposed kernel.
        const int kv = k.volume();
        std::vector<T> flipped(weight.size());
        for (int o = 0; o < oc; ++o)
            for (int i = 0; i < in.c; ++i)
                for (int t = 0; t < kv; ++t)
                    flipped[(std::size_t(i) * oc + o) * kv + (kv - 1 - t)] =
                        weight[(std::size_t(o) * in.c + i) * kv + t];
        parallel::conv_forward<T>(dy, std::span<const T>(flipped), std::span<const T>{}, in.c, k, *dx);
    }
}

template <class T>
void avg_pool(const Tensor<T>& x, Factor f, Tensor<T>& y) {
    const Dims in = x.dims;
    if (in.d % f.d || in.h % f.h || in.w % f.w)
        throw std::invalid_argument("avg_pool: extents must be divisible by the factor");
    y.reset({in.c, in.d / f.d, in.h / f.h, in.w / f.w});
    const Dims od = y.dims;
    const T scale = T(1) / T(f.d * f.h * f.w);
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < od.d; ++z)
            for (int yy = 0; yy < od.h; ++yy) {
                T* out = &y.at(c, z, yy, 0);
                for (int xx = 0; xx < od.w; ++xx) out[xx] = 0;
                for (int a = 0; a < f.d; ++a)
                    for (int b = 0; b < f.h; ++b) {
                        const T* line = &x.at(c, z * f.d + a, yy * f.h + b, 0);
                        for (int xx = 0; xx < od.w; ++xx)
                            for (int e = 0; e < f.w; ++e) out[xx] += line[xx * f.w + e];
                    }
                for (int xx = 0; xx < od.w; ++xx) out[xx] *= scale;
            }
}

template <class T>
void avg_pool_backward(const Tensor<T>& dy, Factor f, Dims in, Tensor<T>& dx) {
    dx.reset(in);
    const T scale = T(1) / T(f.d * f.h * f.w);
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < in.d; ++z)
            for (int yy = 0; yy < in.h; ++yy) {
                const T* g = &dy.at(c, z / f.d, yy / f.h, 0);
                T* out = &dx.at(c, z, yy, 0);
                for (int xx = 0; xx < in.w; ++xx) out[xx] = g[xx / f.w] * scale;
            }
}

template <class T>
void upsample_nearest(const Tensor<T>& x, Factor f, Tensor<T>& y) {
    const Dims in = x.dims;
    y.reset({in.c, in.d * f.d, in.h * f.h, in.w * f.w});
    const Dims od = y.dims;
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < od.d; ++z)
            for (int yy = 0; yy < od.h; ++yy) {
                const T* src = &x.at(c, z / f.d, yy / f.h, 0);
                T* out = &y.at(c, z, yy, 0);
                for (int xx = 0; xx < od.w; ++xx) out[xx] = src[xx / f.w];
            }
}

template <class T>
void upsample_nearest_backward(const Tensor<T>& dy, Factor f, Dims in, Tensor<T>& dx) {
    dx.reset(in);
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < in.d; ++z)
            for (int yy = 0; yy < in.h; ++yy) {
                T* out = &dx.at(c, z, yy, 0);
                for (int a = 0; a < f.d; ++a)
                    for (int b = 0; b < f.h; ++b) {
                        const T* g = &dy.at(c, z * f.d + a, yy * f.h + b, 0);
                        for (int xx = 0; xx < in.w; ++xx)
                            for (int e = 0; e < f.w; ++e) out[xx] += g[xx * f.w + e];
                    }
            }
}

template <class T>
void silu(const Tensor<T>& x, Tensor<T>& y) {
    y.reset(x.dims);
    const std::ptrdiff_t n = std::ptrdiff_t(x.data.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const T v = x.data[std::size_t(i)];
        y.data[std::size_t(i)] = v / (T(1) + std::exp(-v));
    }
}

template <class T>
void silu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
    dx.reset(x.dims);
    const std::ptrdiff_t n = std::ptrdiff_t(x.data.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::size_t j = std::size_t(i);
        const T s = T(1) / (T(1) + std::exp(-x.data[j]));
        dx.data[j] = dy.data[j] * s * (T(1) + x.data[j] * (T(1) - s));
    }
}

}  // namespace parallel

// Dispatch.

template <class T>
void conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                  int out_channels, Kernel k, Tensor<T>& y) {
    backend() == Backend::serial ? serial::conv_forward(x, weight, bias, out_channels, k, y)
                                 : parallel::conv_forward(x, weight, bias, out_channels, k, y);
}
template <class T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& dy, Kernel k,
                   Tensor<T>* dx, std::span<T> dweight, std::span<T> dbias) {
    backend() == Backend::serial ? serial::conv_backward(x, weight, dy, k, dx, dweight, dbias)
                                 : parallel::conv_backward(x, weight, dy, k, dx, dweight, dbias);
}
template <class T>
void avg_pool(const Tensor<T>& x, Factor f, Tensor<T>& y) {
    backend() == Backend::serial ? serial::avg_pool(x, f, y) : parallel::avg_pool(x, f, y);
}
template <class T>
void avg_pool_backward(const Tensor<T>& dy, Factor f, Dims in, Tensor<T>& dx) {
    backend() == Backend::serial ? serial::avg_pool_backward(dy, f, in, dx)
                                 : parallel::avg_pool_backward(dy, f, in, dx);
}
template <class T>
void upsample_nearest(const Tensor<T>& x, Factor f, Tensor<T>& y) {
    backend() == Backend::serial ? serial::upsample_nearest(x, f, y)
                                 : parallel::upsample_nearest(x, f, y);
}
template <class T>
void upsample_nearest_backward(const Tensor<T>& dy, Factor f, Dims in, Tensor<T>& dx) {
    backend() == Backend::serial ? serial::upsample_nearest_backward(dy, f, in, dx)
                                 : parallel::upsample_nearest_backward(dy, f, in, dx);
}
template <class T>
void silu(const Tensor<T>& x, Tensor<T>& y) {
    backend() == Backend::serial ? serial::silu(x, y) : parallel::silu(x, y);
}
template <class T>
void silu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
    backend() == Backend::serial ? serial::silu_backward(x, dy, dx)
                                 : parallel::silu_backward(x, dy, dx);
}

#define SAMBA_INSTANTIATE(NS, T)                                                              \
    template void NS conv_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, \
                                     int, Kernel, Tensor<T>&);                                \
    template void NS conv_backward<T>(const Tensor<T>&, std::span<const T>, const Tensor<T>&, \
                                      Kernel, Tensor<T>*, std::span<T>, std::span<T>);        \
    template void NS avg_pool<T>(const Tensor<T>&, Factor, Tensor<T>&);                       \
    template void NS avg_pool_backward<T>(const Tensor<T>&, Factor, Dims, Tensor<T>&);        \
    template void NS upsample_nearest<T>(const Tensor<T>&, Factor, Tensor<T>&);               \
    template void NS upsample_nearest_backward<T>(const Tensor<T>&, Factor, Dims, Tensor<T>&); \
    template void NS silu<T>(const Tensor<T>&, Tensor<T>&);                                   \
    template void NS silu_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);

SAMBA_INSTANTIATE(parallel::, float)
SAMBA_INSTANTIATE(parallel::, double)
SAMBA_INSTANTIATE(, float)
SAMBA_INSTANTIATE(, double)

}  // namespace samba::nn
