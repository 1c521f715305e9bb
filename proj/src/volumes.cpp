#include "samba/volumes.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace samba {

namespace {

constexpr std::array<std::string_view, 4> kModalityNames{"t1", "t2", "flair", "t1ce"};

}  // namespace

std::string_view modality_name(Modality m) { return kModalityNames[std::size_t(m)]; }

Modality parse_modality(std::string_view name) {
    for (std::size_t i = 0; i < kModalityNames.size(); ++i)
        if (kModalityNames[i] == name) return Modality(i);
    throw FormatError(FormatErrorKind::UnknownModality,
                      "unknown modality name '" + std::string(name) + "'");
}

std::string_view view_name(ViewAxis v) {
    switch (v) {
        case ViewAxis::axial: return "axial";
        case ViewAxis::coronal: return "coronal";
        case ViewAxis::sagittal: return "sagittal";
    }
    return "?";
}

ViewAxis parse_view(std::string_view name) {
    if (name == "axial") return ViewAxis::axial;
    if (name == "coronal") return ViewAxis::coronal;
    if (name == "sagittal") return ViewAxis::sagittal;
    throw ValidationError("unknown view '" + std::string(name) + "'");
}

std::string_view composite_name(Composite c) {
    switch (c) {
        case Composite::et: return "ET";
        case Composite::tc: return "TC";
        case Composite::wt: return "WT";
    }
    return "?";
}

void validate_labels(std::span<const std::uint8_t> labels) {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] > kEt)
            throw ValidationError("label value " + std::to_string(int(labels[i])) +
                                  " outside {0,1,2,3} at voxel index " + std::to_string(i));
}

void validate(const Case& c) {
    const Shape3 s = c.labels.shape;
    if (s.d <= 0 || s.h <= 0 || s.w <= 0) throw ValidationError("case " + c.id + ": empty shape");
    if (c.labels.data.size() != s.size())
        throw ValidationError("case " + c.id + ": label buffer size mismatch");
    for (Modality m : kAllModalities) {
        const Volume3D& v = c.modality(m);
        if (!(v.shape == s) || v.data.size() != s.size())
            throw ValidationError("case " + c.id + ": modality " + std::string(modality_name(m)) +
                                  " shape differs from labels");
        for (float x : v.data)
            if (!std::isfinite(x))
                throw ValidationError("case " + c.id + ": non-finite intensity in " +
                                      std::string(modality_name(m)));
    }
    for (double sp : c.voxel_spacing)
        if (!(sp > 0.0)) throw ValidationError("case " + c.id + ": non-positive voxel spacing");
    validate_labels(c.labels.data);
}

std::vector<std::uint8_t> composite_mask(std::span<const std::uint8_t> labels, Composite which) {
    validate_labels(labels);
    std::vector<std::uint8_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto l = labels[i];
        switch (which) {
            case Composite::et: out[i] = l == kEt; break;
            case Composite::tc: out[i] = l == kEt || l == kNetc; break;
            case Composite::wt: out[i] = l != kBackground; break;
        }
    }
    return out;
}

CompositeRegions composite_regions(const LabelVolume& labels) {
    CompositeRegions r;
    for (auto [dst, which] : {std::pair{&r.et, Composite::et}, std::pair{&r.tc, Composite::tc},
                              std::pair{&r.wt, Composite::wt}}) {
        dst->shape = labels.shape;
        dst->data = composite_mask(labels.data, which);
    }
    return r;
}

int extent_along(Shape3 s, ViewAxis axis) {
    switch (axis) {
        case ViewAxis::axial: return s.d;
        case ViewAxis::coronal: return s.h;
        case ViewAxis::sagittal: return s.w;
    }
    return 0;
}

template <class T>
Grid2<T> slice_at(const Grid3<T>& vol, ViewAxis axis, int k) {
    const Shape3 s = vol.shape;
    switch (axis) {
        case ViewAxis::axial: {
            Grid2<T> g(s.h, s.w);
            std::copy_n(vol.data.begin() + std::ptrdiff_t(vol.index(k, 0, 0)), s.h * s.w,
                        g.data.begin());
            return g;
        }
        case ViewAxis::coronal: {
            Grid2<T> g(s.d, s.w);
            for (int z = 0; z < s.d; ++z)
                for (int x = 0; x < s.w; ++x) g.at(z, x) = vol.at(z, k, x);
            return g;
        }
        case ViewAxis::sagittal: {
            Grid2<T> g(s.d, s.h);
            for (int z = 0; z < s.d; ++z)
                for (int y = 0; y < s.h; ++y) g.at(z, y) = vol.at(z, y, k);
            return g;
        }
    }
    return {};
}

template <class T>
std::vector<Grid2<T>> extract_slices(const Grid3<T>& vol, ViewAxis axis) {
    if (vol.data.size() != vol.shape.size()) throw ValidationError("volume buffer size mismatch");
    const int n = extent_along(vol.shape, axis);
    std::vector<Grid2<T>> out;
    out.reserve(std::size_t(n));
    for (int k = 0; k < n; ++k) out.push_back(slice_at(vol, axis, k));
    return out;
}

template <class T>
Grid3<T> reassemble(const std::vector<Grid2<T>>& slices, ViewAxis axis) {
    if (slices.empty()) throw ValidationError("reassemble: empty slice sequence");
    const int sh = slices.front().h, sw = slices.front().w;
    for (std::size_t k = 0; k < slices.size(); ++k)
        if (slices[k].h != sh || slices[k].w != sw ||
            slices[k].data.size() != std::size_t(sh) * std::size_t(sw))
            throw ValidationError("reassemble: slice " + std::to_string(k) + " has shape (" +
                                  std::to_string(slices[k].h) + "," + std::to_string(slices[k].w) +
                                  "), expected (" + std::to_string(sh) + "," + std::to_string(sw) +
                                  ")");
    const int n = int(slices.size());
    Shape3 s;
    switch (axis) {
        case ViewAxis::axial: s = {n, sh, sw}; break;
        case ViewAxis::coronal: s = {sh, n, sw}; break;
        case ViewAxis::sagittal: s = {sh, sw, n}; break;
    }
    Grid3<T> vol(s);
    for (int k = 0; k < n; ++k) {
        const Grid2<T>& g = slices[std::size_t(k)];
        for (int a = 0; a < sh; ++a)
            for (int b = 0; b < sw; ++b) {
                switch (axis) {
                    case ViewAxis::axial: vol.at(k, a, b) = g.at(a, b); break;
                    case ViewAxis::coronal: vol.at(a, k, b) = g.at(a, b); break;
                    case ViewAxis::sagittal: vol.at(a, b, k) = g.at(a, b); break;
                }
            }
    }
    return vol;
}

template std::vector<Grid2<float>> extract_slices(const Grid3<float>&, ViewAxis);
template std::vector<Grid2<std::uint8_t>> extract_slices(const Grid3<std::uint8_t>&, ViewAxis);
template Grid3<float> reassemble(const std::vector<Grid2<float>>&, ViewAxis);
template Grid3<std::uint8_t> reassemble(const std::vector<Grid2<std::uint8_t>>&, ViewAxis);
template Grid2<float> slice_at(const Grid3<float>&, ViewAxis, int);
template Grid2<std::uint8_t> slice_at(const Grid3<std::uint8_t>&, ViewAxis, int);

// ---------------------------------------------------------------------------
// SVOL container

namespace {

constexpr char kMagic[4] = {'S', 'V', 'O', 'L'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kFixedHeader = 4 + 2 + 12 + 1 + 1 + 4;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

void put_floats(std::string& out, const std::vector<float>& v) {
    const std::size_t base = out.size();
    out.resize(base + v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(v[i]);
        for (int b = 0; b < 4; ++b) out[base + i * 4 + b] = char((bits >> (8 * b)) & 0xff);
    }
}

void get_floats(const unsigned char* p, std::vector<float>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::bit_cast<float>(get_u32(p + i * 4));
}

struct Svol {
    Shape3 shape;
    nlohmann::json meta;
    std::vector<std::pair<Modality, Volume3D>> modalities;
    bool has_labels = false;
    LabelVolume labels;
};

std::string quality_name(Quality q) { return q == Quality::standard ? "standard" : "degraded"; }

void write_svol(const Svol& s, const std::filesystem::path& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u16(buf, kVersion);
    put_u32(buf, std::uint32_t(s.shape.d));
    put_u32(buf, std::uint32_t(s.shape.h));
    put_u32(buf, std::uint32_t(s.shape.w));
    buf.push_back(char(s.modalities.size()));
    buf.push_back(char(s.has_labels ? 1 : 0));
    const std::string meta = s.meta.dump();
    put_u32(buf, std::uint32_t(meta.size()));
    buf += meta;
    for (const auto& [m, v] : s.modalities) put_floats(buf, v.data);
    if (s.has_labels) buf.append(reinterpret_cast<const char*>(s.labels.data.data()), s.labels.data.size());

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(FormatErrorKind::Io, "cannot open " + path.string() + " for writing");
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw FormatError(FormatErrorKind::Io, "write failed: " + path.string());
}

Svol read_svol(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError(FormatErrorKind::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string raw = ss.str();
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    const std::string where = path.string() + ": ";

    if (raw.size() < 4 || std::memcmp(p, kMagic, 4) != 0)
        throw FormatError(FormatErrorKind::BadMagic, where + "bad magic bytes (expected SVOL)");
    if (raw.size() < kFixedHeader)
        throw FormatError(FormatErrorKind::PayloadLength, where + "truncated header");
    const std::uint16_t version = std::uint16_t(p[4] | p[5] << 8);
    if (version != kVersion)
        throw FormatError(FormatErrorKind::VersionMismatch,
                          where + "unsupported version " + std::to_string(version));

    Svol s;
    s.shape = {int(get_u32(p + 6)), int(get_u32(p + 10)), int(get_u32(p + 14))};
    const int n_mod = p[18];
    s.has_labels = p[19] != 0;
    const std::uint32_t meta_len = get_u32(p + 20);
    if (s.shape.d <= 0 || s.shape.h <= 0 || s.shape.w <= 0)
        throw FormatError(FormatErrorKind::ShapeMismatch, where + "zero extent in header shape");
    if (raw.size() < kFixedHeader + meta_len)
        throw FormatError(FormatErrorKind::PayloadLength, where + "truncated metadata block");
    try {
        s.meta = nlohmann::json::parse(raw.begin() + kFixedHeader,
                                       raw.begin() + std::ptrdiff_t(kFixedHeader + meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorKind::Metadata, where + "metadata: " + e.what());
    }
    if (s.meta.contains("shape")) {
        const auto sh = s.meta.at("shape").get<std::vector<int>>();
        if (sh != std::vector<int>{s.shape.d, s.shape.h, s.shape.w})
            throw FormatError(FormatErrorKind::ShapeMismatch,
                              where + "metadata shape disagrees with header");
    }
    const auto names = s.meta.value("modalities", std::vector<std::string>{});
    if (int(names.size()) != n_mod)
        throw FormatError(FormatErrorKind::Metadata,
                          where + "modality count disagrees with metadata names");

    const std::size_t n = s.shape.size();
    const std::size_t expected = kFixedHeader + meta_len + std::size_t(n_mod) * n * 4 +
                                 (s.has_labels ? n : 0);
    if (raw.size() != expected)
        throw FormatError(FormatErrorKind::PayloadLength,
                          where + "payload length " + std::to_string(raw.size()) +
                              " bytes, expected " + std::to_string(expected));

    std::size_t off = kFixedHeader + meta_len;
    for (const auto& name : names) {
        Volume3D v(s.shape);
        get_floats(p + off, v.data);
        off += n * 4;
        s.modalities.emplace_back(parse_modality(name), std::move(v));
    }
    if (s.has_labels) {
        s.labels = LabelVolume(s.shape);
        std::memcpy(s.labels.data.data(), p + off, n);
    }
    return s;
}

}  // namespace

void save_case(const Case& c, const std::filesystem::path& path) {
    validate(c);
    Svol s;
    s.shape = c.shape();
    std::vector<std::string> names;
    for (Modality m : kAllModalities) {
        names.emplace_back(modality_name(m));
        s.modalities.emplace_back(m, c.modality(m));
    }
    s.meta = {{"id", c.id},
              {"modalities", names},
              {"shape", {s.shape.d, s.shape.h, s.shape.w}},
              {"voxel_spacing", c.voxel_spacing},
              {"quality", quality_name(c.quality)}};
    s.has_labels = true;
    s.labels = c.labels;
    write_svol(s, path);
}

Case load_case(const std::filesystem::path& path) {
    Svol s = read_svol(path);
    const std::string where = path.string() + ": ";
    Case c;
    try {
        c.id = s.meta.at("id").get<std::string>();
        c.voxel_spacing = s.meta.at("voxel_spacing").get<std::array<double, 3>>();
        const auto q = s.meta.at("quality").get<std::string>();
        if (q == "standard") c.quality = Quality::standard;
        else if (q == "degraded") c.quality = Quality::degraded;
        else throw FormatError(FormatErrorKind::Metadata, where + "unknown quality '" + q + "'");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorKind::Metadata, where + "metadata: " + e.what());
    }
    std::array<bool, 4> seen{};
    for (auto& [m, v] : s.modalities) {
        if (seen[std::size_t(m)])
            throw FormatError(FormatErrorKind::Metadata,
                              where + "duplicate modality " + std::string(modality_name(m)));
        seen[std::size_t(m)] = true;
        c.modality(m) = std::move(v);
    }
    if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
        throw FormatError(FormatErrorKind::Metadata, where + "case file lacks a modality");
    if (!s.has_labels) throw FormatError(FormatErrorKind::Metadata, where + "case file lacks labels");
    c.labels = std::move(s.labels);
    validate(c);
    return c;
}

void save_labels(const LabelVolume& labels, const std::string& id,
                 const std::filesystem::path& path) {
    validate_labels(labels.data);
    Svol s;
    s.shape = labels.shape;
    s.meta = {{"id", id},
              {"modalities", std::vector<std::string>{}},
              {"shape", {s.shape.d, s.shape.h, s.shape.w}}};
    s.has_labels = true;
    s.labels = labels;
    write_svol(s, path);
}

LabelVolume load_labels(const std::filesystem::path& path, std::string* id) {
    Svol s = read_svol(path);
    if (!s.has_labels)
        throw FormatError(FormatErrorKind::Metadata, path.string() + ": no label payload");
    if (id) *id = s.meta.value("id", std::string{});
    validate_labels(s.labels.data);
    return std::move(s.labels);
}

}  // namespace samba
