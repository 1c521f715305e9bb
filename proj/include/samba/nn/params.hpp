#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "samba/rng.hpp"

namespace samba::nn {

template <class T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;

    std::size_t size() const { return value.size(); }
};

/// A named collection of parameters (e.g. "encoder"). Freezing acts on whole collections.
template <class T>
struct ParamGroup {
    std::string name;
    std::vector<Param<T>> params;

    int add(std::string pname, std::vector<int> shape) {
        std::size_t n = 1;
        for (int s : shape) n *= std::size_t(s);
        params.push_back({std::move(pname), std::move(shape), std::vector<T>(n), std::vector<T>(n)});
        return int(params.size()) - 1;
    }

    Param<T>& operator[](int i) { return params[std::size_t(i)]; }
    const Param<T>& operator[](int i) const { return params[std::size_t(i)]; }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params) std::fill(p.grad.begin(), p.grad.end(), T(0));
    }

    /// FNV-1a over the float32 representation of every value, in declaration order.
    std::uint64_t digest() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : params)
            for (T v : p.value) {
                const float f = float(v);
                h = fnv1a({reinterpret_cast<const unsigned char*>(&f), sizeof f}, h);
            }
        return h;
    }
};

/// Converts parameter values between precisions (grads are zeroed).
template <class To, class From>
ParamGroup<To> cast_group(const ParamGroup<From>& g) {
    ParamGroup<To> out;
    out.name = g.name;
    for (const auto& p : g.params) {
        Param<To> q{p.name, p.shape, std::vector<To>(p.value.begin(), p.value.end()),
                    std::vector<To>(p.size())};
        out.params.push_back(std::move(q));
    }
    return out;
}

/// He-uniform weights (fan_in = product of shape[1:]) and zero biases.
template <class T>
void init_he_uniform(Param<T>& p, Rng& rng) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < p.shape.size(); ++i) fan_in *= std::size_t(p.shape[i]);
    const double bound = std::sqrt(6.0 / double(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (T& v : p.value) v = T(u(rng));
}

template <class T>
void init_normal(Param<T>& p, Rng& rng, double stddev) {
    std::normal_distribution<double> n(0.0, stddev);
    for (T& v : p.value) v = T(n(rng));
}

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. State is allocated lazily per (group, param).
template <class T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    /// Advances the shared step counter; call once per optimizer step before update().
    void begin_step() { ++t_; }

    void update(ParamGroup<T>& g) {
        auto& st = state_for(g);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < g.params.size(); ++i) {
            Param<T>& p = g.params[i];
            auto& m = st[i].m;
            auto& v = st[i].v;
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gr = double(p.grad[j]);
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gr;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gr * gr;
                const double step = cfg_.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
                p.value[j] = T(double(p.value[j]) - step);
            }
        }
    }

    long steps() const { return t_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    struct Slot {
        std::string group;
        std::vector<Moments> moments;
    };

    std::vector<Moments>& state_for(const ParamGroup<T>& g) {
        for (auto& s : slots_)
            if (s.group == g.name) return s.moments;
        Slot s{g.name, {}};
        for (const auto& p : g.params) s.moments.push_back({std::vector<double>(p.size()), std::vector<double>(p.size())});
        slots_.push_back(std::move(s));
        return slots_.back().moments;
    }

    AdamConfig cfg_;
    long t_ = 0;
    std::vector<Slot> slots_;
};

}  // namespace samba::nn
