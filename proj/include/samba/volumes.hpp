#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "samba/errors.hpp"

namespace samba {

struct Shape3 {
    int d = 0, h = 0, w = 0;

    std::size_t size() const { return std::size_t(d) * std::size_t(h) * std::size_t(w); }
    bool operator==(const Shape3&) const = default;
};

/// Dense row-major [d][h][w] grid.
template <class T>
struct Grid3 {
    Shape3 shape;
    std::vector<T> data;

    Grid3() = default;
    explicit Grid3(Shape3 s, T fill = T{}) : shape(s), data(s.size(), fill) {}

    std::size_t index(int z, int y, int x) const {
        return (std::size_t(z) * shape.h + y) * shape.w + x;
    }
    T& at(int z, int y, int x) { return data[index(z, y, x)]; }
    const T& at(int z, int y, int x) const { return data[index(z, y, x)]; }

    bool operator==(const Grid3&) const = default;
};

/// Dense row-major [h][w] grid.
template <class T>
struct Grid2 {
    int h = 0, w = 0;
    std::vector<T> data;

    Grid2() = default;
    Grid2(int rows, int cols, T fill = T{})
        : h(rows), w(cols), data(std::size_t(rows) * std::size_t(cols), fill) {}

    std::size_t size() const { return data.size(); }
    T& at(int y, int x) { return data[std::size_t(y) * w + x]; }
    const T& at(int y, int x) const { return data[std::size_t(y) * w + x]; }

    bool operator==(const Grid2&) const = default;
};

using Volume3D = Grid3<float>;
using LabelVolume = Grid3<std::uint8_t>;
using BinaryVolume = Grid3<std::uint8_t>;
using Image2D = Grid2<float>;
using LabelSlice = Grid2<std::uint8_t>;
using Mask2D = Grid2<std::uint8_t>;

/// Label codes. ET is the highest code.
enum Label : std::uint8_t { kBackground = 0, kNetc = 1, kSnfh = 2, kEt = 3 };

enum class Modality : std::uint8_t { t1 = 0, t2 = 1, flair = 2, t1ce = 3 };
inline constexpr std::array<Modality, 4> kAllModalities{Modality::t1, Modality::t2,
                                                         Modality::flair, Modality::t1ce};

std::string_view modality_name(Modality m);
/// Throws FormatError(UnknownModality) for names outside {t1, t2, flair, t1ce}.
Modality parse_modality(std::string_view name);

enum class ViewAxis : std::uint8_t { axial, coronal, sagittal };
std::string_view view_name(ViewAxis v);
ViewAxis parse_view(std::string_view name);

enum class Quality : std::uint8_t { standard, degraded };

struct Case {
    std::string id;
    std::array<Volume3D, 4> modalities;  // indexed by Modality
    LabelVolume labels;
    std::array<double, 3> voxel_spacing{1.0, 1.0, 1.0};
    Quality quality = Quality::standard;

    const Volume3D& modality(Modality m) const { return modalities[std::size_t(m)]; }
    Volume3D& modality(Modality m) { return modalities[std::size_t(m)]; }
    Shape3 shape() const { return labels.shape; }

    bool operator==(const Case&) const = default;
};

/// Throws ValidationError on shape disagreement, non-finite intensities or bad labels.
void validate(const Case& c);
void validate_labels(std::span<const std::uint8_t> labels);

struct CompositeRegions {
    BinaryVolume et, tc, wt;
};

/// et = ET; tc = et | NETC; wt = tc | SNFH.
CompositeRegions composite_regions(const LabelVolume& labels);

enum class Composite : std::uint8_t { et, tc, wt };
std::string_view composite_name(Composite c);

/// Flat binary mask of one composite over any label buffer (2D or 3D).
std::vector<std::uint8_t> composite_mask(std::span<const std::uint8_t> labels, Composite which);

/// Slices ordered by position along the axis. Axial slices are (H, W), coronal (D, W),
/// sagittal (D, H).
template <class T>
std::vector<Grid2<T>> extract_slices(const Grid3<T>& vol, ViewAxis axis);

/// Inverse of extract_slices. Throws ValidationError on empty or ragged input.
template <class T>
Grid3<T> reassemble(const std::vector<Grid2<T>>& slices, ViewAxis axis);

/// Single slice without materializing the whole sequence.
template <class T>
Grid2<T> slice_at(const Grid3<T>& vol, ViewAxis axis, int k);

int extent_along(Shape3 s, ViewAxis axis);

// SVOL container.

/// Writes modalities in t1, t2, flair, t1ce order followed by labels.
void save_case(const Case& c, const std::filesystem::path& path);
Case load_case(const std::filesystem::path& path);

/// Label-only SVOL (modality count 0). Used for fused predictions.
void save_labels(const LabelVolume& labels, const std::string& id,
                 const std::filesystem::path& path);
LabelVolume load_labels(const std::filesystem::path& path, std::string* id = nullptr);

}  // namespace samba
