#include "samba/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "samba/rng.hpp"

namespace samba {

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

struct Tumor {
    Vec3 center;
    Vec3 radii;
    Mat3 rot;  // rows are the local axes

    double normalized_radius(double z, double y, double x) const {
        const Vec3 p{z - center[0], y - center[1], x - center[2]};
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double l = rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2];
            acc += (l / radii[i]) * (l / radii[i]);
        }
        return std::sqrt(acc);
    }
};

Mat3 rotation(double a, double b, double c) {
    const double ca = std::cos(a), sa = std::sin(a);
    const double cb = std::cos(b), sb = std::sin(b);
    const double cc = std::cos(c), sc = std::sin(c);
    const Mat3 rz{{{ca, -sa, 0}, {sa, ca, 0}, {0, 0, 1}}};
    const Mat3 ry{{{cb, 0, sb}, {0, 1, 0}, {-sb, 0, cb}}};
    const Mat3 rx{{{1, 0, 0}, {0, cc, -sc}, {0, sc, cc}}};
    auto mul = [](const Mat3& p, const Mat3& q) {
        Mat3 r{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) r[i][j] += p[i][k] * q[k][j];
        return r;
    };
    return mul(mul(rz, ry), rx);
}

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void add_noise(Volume3D& v, double sigma, Rng& rng) {
    if (sigma <= 0.0) return;
    std::normal_distribution<double> n(0.0, sigma);
    for (float& x : v.data) x = float(double(x) + n(rng));
}

// Block-average down by f, then trilinear back up to the original grid.
Volume3D resample(const Volume3D& v, int f) {
    const Shape3 s = v.shape;
    const Shape3 lo{(s.d + f - 1) / f, (s.h + f - 1) / f, (s.w + f - 1) / f};
    Volume3D small(lo);
    for (int z = 0; z < lo.d; ++z)
        for (int y = 0; y < lo.h; ++y)
            for (int x = 0; x < lo.w; ++x) {
                double acc = 0.0;
                int cnt = 0;
                for (int dz = 0; dz < f && z * f + dz < s.d; ++dz)
                    for (int dy = 0; dy < f && y * f + dy < s.h; ++dy)
                        for (int dx = 0; dx < f && x * f + dx < s.w; ++dx) {
                            acc += v.at(z * f + dz, y * f + dy, x * f + dx);
                            ++cnt;
                        }
                small.at(z, y, x) = float(acc / cnt);
            }

    auto coord = [f](int i, int n, int& i0, int& i1, double& t) {
        double u = (i + 0.5) / f - 0.5;
        u = std::clamp(u, 0.0, double(n - 1));
        i0 = int(std::floor(u));
        i1 = std::min(i0 + 1, n - 1);
        t = u - i0;
    };
    Volume3D out(s);
    for (int z = 0; z < s.d; ++z) {
        int z0, z1;
        double tz;
        coord(z, lo.d, z0, z1, tz);
        for (int y = 0; y < s.h; ++y) {
            int y0, y1;
            double ty;
            coord(y, lo.h, y0, y1, ty);
            for (int x = 0; x < s.w; ++x) {
                int x0, x1;
                double tx;
                coord(x, lo.w, x0, x1, tx);
                auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
                auto plane = [&](int zz) {
                    return lerp(lerp(small.at(zz, y0, x0), small.at(zz, y0, x1), tx),
                                lerp(small.at(zz, y1, x0), small.at(zz, y1, x1), tx), ty);
                };
                out.at(z, y, x) = float(lerp(plane(z0), plane(z1), tz));
            }
        }
    }
    return out;
}

void coarsen_slices(Volume3D& v, int t) {
    const Shape3 s = v.shape;
    const std::size_t plane = std::size_t(s.h) * s.w;
    std::vector<double> acc(plane);
    for (int z0 = 0; z0 < s.d; z0 += t) {
        const int z1 = std::min(z0 + t, s.d);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int z = z0; z < z1; ++z)
            for (std::size_t i = 0; i < plane; ++i) acc[i] += v.data[std::size_t(z) * plane + i];
        for (int z = z0; z < z1; ++z)
            for (std::size_t i = 0; i < plane; ++i)
                v.data[std::size_t(z) * plane + i] = float(acc[i] / (z1 - z0));
    }
}

}  // namespace

void validate(const PhantomConfig& cfg) {
    const Shape3 s = cfg.shape;
    if (s.d <= 0 || s.h <= 0 || s.w <= 0) throw ConfigError("phantom shape must be positive");
    if (cfg.healthy_case) return;
    if (cfg.tumor_count < 1)
        throw ConfigError("tumor_count must be >= 1 (use healthy_case for tumor-free cases)");
    if (!(cfg.radius_min > 0.0) || cfg.radius_max < cfg.radius_min)
        throw ConfigError("radius range must satisfy 0 < min <= max");
    if (!(cfg.rim_fraction > 0.0 && cfg.rim_fraction < 1.0) ||
        !(cfg.halo_fraction > 0.0 && cfg.halo_fraction < 1.0))
        throw ConfigError("rim_fraction and halo_fraction must lie in (0,1)");
    if (cfg.noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    const double need = 2.0 * (cfg.radius_max + 2.0) + 1.0;
    if (need > s.d || need > s.h || need > s.w)
        throw ConfigError("tumor radius " + std::to_string(cfg.radius_max) +
                          " does not fit the volume with a 2-voxel margin");
}

void validate(const QualityProfile& q) {
    if (q.downsample_factor < 1 || q.slice_thickness_factor < 1 || q.extra_noise_sigma < 0.0)
        throw ConfigError("quality profile factors must be >= 1 and noise >= 0");
}

Case generate_case(const PhantomConfig& cfg, const std::string& id) {
    validate(cfg);
    Rng rng(cfg.seed);
    const Shape3 s = cfg.shape;

    std::vector<Tumor> tumors;
    if (!cfg.healthy_case) {
        const double m = cfg.radius_max + 2.0;
        for (int t = 0; t < cfg.tumor_count; ++t) {
            Tumor tu;
            // Keep the center inside the inner half of the brain when possible.
            for (int attempt = 0; attempt < 64; ++attempt) {
                tu.center = {uniform(rng, m, s.d - 1 - m), uniform(rng, m, s.h - 1 - m),
                             uniform(rng, m, s.w - 1 - m)};
                double r = 0.0;
                const std::array<int, 3> dims{s.d, s.h, s.w};
                for (int i = 0; i < 3; ++i) {
                    const double c = (dims[i] - 1) / 2.0;
                    r += std::pow((tu.center[i] - c) / (0.45 * dims[i]), 2);
                }
                if (std::sqrt(r) <= 0.5) break;
            }
            for (double& r : tu.radii) r = uniform(rng, cfg.radius_min, cfg.radius_max);
            const double pi = std::numbers::pi;
            tu.rot = rotation(uniform(rng, 0, 2 * pi), uniform(rng, 0, 2 * pi),
                              uniform(rng, 0, 2 * pi));
            tumors.push_back(tu);
        }
    }

    const double r_core = 1.0 - cfg.halo_fraction;
    const double r_netc = r_core * (1.0 - cfg.rim_fraction);
    using TI = TissueIntensities;

    Case c;
    c.id = id;
    c.labels = LabelVolume(s);
    for (Modality mo : kAllModalities) c.modality(mo) = Volume3D(s);

    for (int z = 0; z < s.d; ++z)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                const double bz = (z - (s.d - 1) / 2.0) / (0.46 * s.d);
                const double by = (y - (s.h - 1) / 2.0) / (0.46 * s.h);
                const double bx = (x - (s.w - 1) / 2.0) / (0.46 * s.w);
                const double rb = std::sqrt(bz * bz + by * by + bx * bx);

                double best = 2.0;
                for (const Tumor& tu : tumors) best = std::min(best, tu.normalized_radius(z, y, x));

                std::uint8_t label = kBackground;
                const float* table = nullptr;
                double t = 0.0;  // position within the region, 0 inner edge .. 1 outer edge
                if (best <= r_netc) {
                    label = kNetc, table = TI::netc, t = best / r_netc;
                } else if (best <= r_core) {
                    label = kEt, table = TI::et, t = (best - r_netc) / (r_core - r_netc);
                } else if (best <= 1.0) {
                    label = kSnfh, table = TI::snfh, t = (best - r_core) / (1.0 - r_core);
                } else if (rb <= 1.0) {
                    table = TI::parenchyma, t = rb;
                }
                c.labels.at(z, y, x) = label;
                for (int mi = 0; mi < 4; ++mi) {
                    const float v = table ? float(table[mi] * (1.0 - TI::ramp * t)) : TI::outside;
                    c.modalities[std::size_t(mi)].at(z, y, x) = v;
                }
            }

    // Close the ET rim: NETC voxels that touch anything outside the core become ET.
    std::vector<std::size_t> exposed;
    auto in_core = [](std::uint8_t l) { return l == kNetc || l == kEt; };
    for (int z = 0; z < s.d; ++z)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                if (c.labels.at(z, y, x) != kNetc) continue;
                const bool open = (z > 0 && !in_core(c.labels.at(z - 1, y, x))) ||
                                  (z + 1 < s.d && !in_core(c.labels.at(z + 1, y, x))) ||
                                  (y > 0 && !in_core(c.labels.at(z, y - 1, x))) ||
                                  (y + 1 < s.h && !in_core(c.labels.at(z, y + 1, x))) ||
                                  (x > 0 && !in_core(c.labels.at(z, y, x - 1))) ||
                                  (x + 1 < s.w && !in_core(c.labels.at(z, y, x + 1)));
                if (open) exposed.push_back(c.labels.index(z, y, x));
            }
    for (std::size_t i : exposed) {
        c.labels.data[i] = kEt;
        for (int mi = 0; mi < 4; ++mi) c.modalities[std::size_t(mi)].data[i] = TI::et[mi];
    }

    for (Modality mo : kAllModalities) add_noise(c.modality(mo), cfg.noise_sigma, rng);
    return c;
}

Case degrade(const Case& in, const QualityProfile& q, std::uint64_t seed) {
    validate(q);
    Case c = in;
    c.quality = Quality::degraded;
    Rng rng(seed);
    for (Modality mo : kAllModalities) {
        Volume3D& v = c.modality(mo);
        if (q.downsample_factor > 1) v = resample(v, q.downsample_factor);
        add_noise(v, q.extra_noise_sigma, rng);
        if (q.slice_thickness_factor > 1) coarsen_slices(v, q.slice_thickness_factor);
    }
    return c;
}

std::string case_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03d", index);
    return buf;
}

Dataset generate_dataset(int n, const PhantomConfig& tmpl, const QualityProfile& q,
                         std::uint64_t seed) {
    if (n < 4) throw ConfigError("dataset needs at least 4 cases, got " + std::to_string(n));
    validate(tmpl);
    validate(q);
    std::vector<Case> cases(static_cast<std::size_t>(n));
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) seeds[std::size_t(i)] = child_seed(seed, std::uint64_t(i));

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        PhantomConfig cfg = tmpl;
        cfg.seed = seeds[std::size_t(i)];
        Case c = generate_case(cfg, case_id(i));
        if (!q.is_standard()) c = degrade(c, q, child_seed(cfg.seed, 1));
        cases[std::size_t(i)] = std::move(c);
    }

    const int n_train = (3 * n + 3) / 4;
    Dataset ds;
    for (int i = 0; i < n; ++i) {
        auto& dst = i < n_train ? ds.train : ds.val;
        auto& dst_seeds = i < n_train ? ds.train_seeds : ds.val_seeds;
        dst.push_back(std::move(cases[std::size_t(i)]));
        dst_seeds.push_back(seeds[std::size_t(i)]);
    }
    return ds;
}

double laplacian_energy(const Volume3D& v) {
    const Shape3 s = v.shape;
    double acc = 0.0;
    std::size_t cnt = 0;
    for (int z = 1; z + 1 < s.d; ++z)
        for (int y = 1; y + 1 < s.h; ++y)
            for (int x = 1; x + 1 < s.w; ++x) {
                const double l = v.at(z - 1, y, x) + v.at(z + 1, y, x) + v.at(z, y - 1, x) +
                                 v.at(z, y + 1, x) + v.at(z, y, x - 1) + v.at(z, y, x + 1) -
                                 6.0 * v.at(z, y, x);
                acc += l * l;
                ++cnt;
            }
    return cnt ? acc / double(cnt) : 0.0;
}

}  // namespace samba
