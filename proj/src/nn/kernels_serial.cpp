// Reference kernels: straightforward loops over the definition. Slow, but each line maps to one
// term of the sum, so these serve as the oracle for the parallel implementation.

#include <cmath>
#include <stdexcept>

#include "samba/nn/kernels.hpp"

namespace samba::nn::serial {

namespace {

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
    const int pd = k.d / 2, ph = k.h / 2, pw = k.w / 2;
    if (weight.size() != std::size_t(out_channels) * in.c * k.volume())
        throw std::invalid_argument("conv_forward: weight size mismatch");
    y.reset({out_channels, in.d, in.h, in.w});
    for (int o = 0; o < out_channels; ++o)
        for (int z = 0; z < in.d; ++z)
            for (int yy = 0; yy < in.h; ++yy)
                for (int xx = 0; xx < in.w; ++xx) {
                    T acc = bias.empty() ? T(0) : bias[std::size_t(o)];
                    for (int i = 0; i < in.c; ++i)
                        for (int kz = 0; kz < k.d; ++kz)
                            for (int ky = 0; ky < k.h; ++ky)
                                for (int kx = 0; kx < k.w; ++kx) {
                                    const int iz = z + kz - pd, iy = yy + ky - ph, ix = xx + kx - pw;
                                    if (iz < 0 || iz >= in.d || iy < 0 || iy >= in.h || ix < 0 ||
                                        ix >= in.w)
                                        continue;
                                    const std::size_t wi =
                                        ((((std::size_t(o) * in.c + i) * k.d + kz) * k.h + ky) * k.w) + kx;
                                    acc += weight[wi] * x.at(i, iz, iy, ix);
                                }
                    y.at(o, z, yy, xx) = acc;
                }
}

template <class T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& dy, Kernel k,
                   Tensor<T>* dx, std::span<T> dweight, std::span<T> dbias) {
    check_kernel(k);
    const Dims in = x.dims;
    const int oc = dy.dims.c;
    const int pd = k.d / 2, ph = k.h / 2, pw = k.w / 2;
    if (dx) dx->reset(in);
    for (int o = 0; o < oc; ++o)
        for (int z = 0; z < in.d; ++z)
            for (int yy = 0; yy < in.h; ++yy)
                for (int xx = 0; xx < in.w; ++xx) {
                    const T g = dy.at(o, z, yy, xx);
                    if (!dbias.empty()) dbias[std::size_t(o)] += g;
                    for (int i = 0; i < in.c; ++i)
                        for (int kz = 0; kz < k.d; ++kz)
                            for (int ky = 0; ky < k.h; ++ky)
                                for (int kx = 0; kx < k.w; ++kx) {
                                    const int iz = z + kz - pd, iy = yy + ky - ph, ix = xx + kx - pw;
                                    if (iz < 0 || iz >= in.d || iy < 0 || iy >= in.h || ix < 0 ||
                                        ix >= in.w)
                                        continue;
                                    const std::size_t wi =
                                        ((((std::size_t(o) * in.c + i) * k.d + kz) * k.h + ky) * k.w) + kx;
                                    if (!dweight.empty()) dweight[wi] += g * x.at(i, iz, iy, ix);
                                    if (dx) dx->at(i, iz, iy, ix) += g * weight[wi];
                                }
                }
}

template <class T>
void avg_pool(const Tensor<T>& x, Factor f, Tensor<T>& y) {
    const Dims in = x.dims;
    if (in.d % f.d || in.h % f.h || in.w % f.w)
        throw std::invalid_argument("avg_pool: extents must be divisible by the factor");
    y.reset({in.c, in.d / f.d, in.h / f.h, in.w / f.w});
    const T scale = T(1) / T(f.d * f.h * f.w);
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < y.dims.d; ++z)
            for (int yy = 0; yy < y.dims.h; ++yy)
                for (int xx = 0; xx < y.dims.w; ++xx) {
                    T acc = 0;
                    for (int a = 0; a < f.d; ++a)
                        for (int b = 0; b < f.h; ++b)
                            for (int e = 0; e < f.w; ++e)
                                acc += x.at(c, z * f.d + a, yy * f.h + b, xx * f.w + e);
                    y.at(c, z, yy, xx) = acc * scale;
                }
}

template <class T>
void avg_pool_backward(const Tensor<T>& dy, Factor f, Dims in, Tensor<T>& dx) {
    dx.reset(in);
    const T scale = T(1) / T(f.d * f.h * f.w);
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < in.d; ++z)
            for (int yy = 0; yy < in.h; ++yy)
                for (int xx = 0; xx < in.w; ++xx)
                    dx.at(c, z, yy, xx) = dy.at(c, z / f.d, yy / f.h, xx / f.w) * scale;
}

template <class T>
void upsample_nearest(const Tensor<T>& x, Factor f, Tensor<T>& y) {
    const Dims in = x.dims;
    y.reset({in.c, in.d * f.d, in.h * f.h, in.w * f.w});
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < y.dims.d; ++z)
            for (int yy = 0; yy < y.dims.h; ++yy)
                for (int xx = 0; xx < y.dims.w; ++xx)
                    y.at(c, z, yy, xx) = x.at(c, z / f.d, yy / f.h, xx / f.w);
}

template <class T>
void upsample_nearest_backward(const Tensor<T>& dy, Factor f, Dims in, Tensor<T>& dx) {
    dx.reset(in);
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < dy.dims.d; ++z)
            for (int yy = 0; yy < dy.dims.h; ++yy)
                for (int xx = 0; xx < dy.dims.w; ++xx)
                    dx.at(c, z / f.d, yy / f.h, xx / f.w) += dy.at(c, z, yy, xx);
}

template <class T>
void silu(const Tensor<T>& x, Tensor<T>& y) {
    y.reset(x.dims);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const T v = x.data[i];
        y.data[i] = v / (T(1) + std::exp(-v));
    }
}

template <class T>
void silu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
    dx.reset(x.dims);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x.data[i]));
        dx.data[i] = dy.data[i] * s * (T(1) + x.data[i] * (T(1) - s));
    }
}

#define SAMBA_INSTANTIATE(T)                                                                  \
    template void conv_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,   \
                                  int, Kernel, Tensor<T>&);                                   \
    template void conv_backward<T>(const Tensor<T>&, std::span<const T>, const Tensor<T>&,    \
                                   Kernel, Tensor<T>*, std::span<T>, std::span<T>);           \
    template void avg_pool<T>(const Tensor<T>&, Factor, Tensor<T>&);                          \
    template void avg_pool_backward<T>(const Tensor<T>&, Factor, Dims, Tensor<T>&);           \
    template void upsample_nearest<T>(const Tensor<T>&, Factor, Tensor<T>&);                  \
    template void upsample_nearest_backward<T>(const Tensor<T>&, Factor, Dims, Tensor<T>&);   \
    template void silu<T>(const Tensor<T>&, Tensor<T>&);                                      \
    template void silu_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);

SAMBA_INSTANTIATE(float)
SAMBA_INSTANTIATE(double)

}  // namespace samba::nn::serial
