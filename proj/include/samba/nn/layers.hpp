#pragma once

#include <string>

#include "samba/nn/kernels.hpp"
#include "samba/nn/params.hpp"
#include "samba/nn/tensor.hpp"

namespace samba::nn {

/// Convolution whose weight and bias live in a ParamGroup, addressed by index so that
/// models stay copyable.
struct Conv {
    int weight = -1, bias = -1;
    int in_c = 0, out_c = 0;
    Kernel k;

    template <class T>
    static Conv make(ParamGroup<T>& g, const std::string& prefix, int in_c, int out_c, Kernel k) {
        Conv c;
        c.in_c = in_c;
        c.out_c = out_c;
        c.k = k;
        std::vector<int> shape{out_c, in_c};
        if (k.d > 1) shape.push_back(k.d);
        shape.push_back(k.h);
        shape.push_back(k.w);
        c.weight = g.add(prefix + ".weight", shape);
        c.bias = g.add(prefix + ".bias", {out_c});
        return c;
    }

    template <class T>
    void init(ParamGroup<T>& g, Rng& rng) const {
        init_he_uniform(g[weight], rng);
        std::fill(g[bias].value.begin(), g[bias].value.end(), T(0));
    }

    template <class T>
    void forward(const ParamGroup<T>& g, const Tensor<T>& x, Tensor<T>& y) const {
        conv_forward<T>(x, g[weight].value, g[bias].value, out_c, k, y);
    }

    /// Accumulates parameter gradients when `param_grads` is set; dx may be null.
    template <class T>
    void backward(ParamGroup<T>& g, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx,
                  bool param_grads) const {
        conv_backward<T>(x, g[weight].value, dy, k, dx,
                         param_grads ? std::span<T>(g[weight].grad) : std::span<T>{},
                         param_grads ? std::span<T>(g[bias].grad) : std::span<T>{});
    }
};

}  // namespace samba::nn
