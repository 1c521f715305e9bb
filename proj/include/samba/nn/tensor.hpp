#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace samba::nn {

/// Single-sample activation layout: [c][d][h][w]. 2D maps use d == 1.
struct Dims {
    int c = 0, d = 1, h = 1, w = 1;

    std::size_t spatial() const { return std::size_t(d) * std::size_t(h) * std::size_t(w); }
    std::size_t size() const { return std::size_t(c) * spatial(); }
    bool operator==(const Dims&) const = default;
};

template <class T>
struct Tensor {
    Dims dims;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Dims s, T fill = T{}) : dims(s), data(s.size(), fill) {}

    void reset(Dims s, T fill = T{}) {
        dims = s;
        data.assign(s.size(), fill);
    }

    T* channel(int c) { return data.data() + std::size_t(c) * dims.spatial(); }
    const T* channel(int c) const { return data.data() + std::size_t(c) * dims.spatial(); }
    std::span<T> span() { return data; }
    std::span<const T> span() const { return data; }

    T& at(int c, int z, int y, int x) {
        return data[((std::size_t(c) * dims.d + z) * dims.h + y) * dims.w + x];
    }
    const T& at(int c, int z, int y, int x) const {
        return data[((std::size_t(c) * dims.d + z) * dims.h + y) * dims.w + x];
    }
};

/// Convolution window. Stride is 1 and padding is "same" (k / 2 zeros per side); odd sizes only.
struct Kernel {
    int d = 1, h = 3, w = 3;

    int volume() const { return d * h * w; }
    static constexpr Kernel k2d(int k) { return {1, k, k}; }
    static constexpr Kernel k3d(int k) { return {k, k, k}; }
};

/// Integer scale factor per spatial axis for pooling and upsampling.
struct Factor {
    int d = 1, h = 2, w = 2;

    static constexpr Factor f2d(int f) { return {1, f, f}; }
    static constexpr Factor f3d(int f) { return {f, f, f}; }
};

}  // namespace samba::nn
