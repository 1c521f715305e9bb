#pragma once

#include <span>

#include "samba/nn/tensor.hpp"

// Compute kernels behind every model in the project.
//
// Two implementations share one contract:
//   serial::   direct nested loops, used as the test oracle and by the benchmark baseline;
//   parallel:: blocked im2col + GEMM for convolutions, OpenMP over output blocks.
//
// The parallel path is deterministic for any thread count: blocks are fixed-size, each block
// writes disjoint outputs, and weight-gradient partials are reduced in block order.
//
// Weight layout is [out][in][kd][kh][kw]. `bias` may be empty. Backward functions
// accumulate into dweight/dbias and overwrite dx (dx may be null).

namespace samba::nn {

enum class Backend { serial, parallel };

Backend backend();
void set_backend(Backend b);

/// Restores the previous backend on destruction.
class ScopedBackend {
public:
    explicit ScopedBackend(Backend b) : prev_(backend()) { set_backend(b); }
    ~ScopedBackend() { set_backend(prev_); }
    ScopedBackend(const ScopedBackend&) = delete;
    ScopedBackend& operator=(const ScopedBackend&) = delete;

private:
    Backend prev_;
};

#define SAMBA_KERNEL_DECLS                                                                    \
    template <class T>                                                                        \
    void conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, \
                      int out_channels, Kernel k, Tensor<T>& y);                              \
    template <class T>                                                                        \
    void conv_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& dy,    \
                       Kernel k, Tensor<T>* dx, std::span<T> dweight, std::span<T> dbias);    \
    template <class T>                                                                        \
    void avg_pool(const Tensor<T>& x, Factor f, Tensor<T>& y);                                \
    template <class T>                                                                        \
    void avg_pool_backward(const Tensor<T>& dy, Factor f, Dims in, Tensor<T>& dx);            \
    template <class T>                                                                        \
    void upsample_nearest(const Tensor<T>& x, Factor f, Tensor<T>& y);                        \
    template <class T>                                                                        \
    void upsample_nearest_backward(const Tensor<T>& dy, Factor f, Dims in, Tensor<T>& dx);    \
    template <class T>                                                                        \
    void silu(const Tensor<T>& x, Tensor<T>& y);                                              \
    template <class T>                                                                        \
    void silu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

namespace serial {
SAMBA_KERNEL_DECLS
}
namespace parallel {
SAMBA_KERNEL_DECLS
}

// Dispatch on backend().
SAMBA_KERNEL_DECLS

#undef SAMBA_KERNEL_DECLS

}  // namespace samba::nn
