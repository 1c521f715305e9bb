#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "samba/volumes.hpp"

namespace samba {

struct PhantomConfig {
    Shape3 shape{32, 64, 64};
    int tumor_count = 1;
    /// Per-axis whole-tumor (SNFH outer boundary) radii are drawn from this range.
    double radius_min = 6.0, radius_max = 12.0;
    /// ET rim thickness as a fraction of the tumor-core radius.
    double rim_fraction = 0.25;
    /// SNFH halo thickness as a fraction of the whole-tumor radius.
    double halo_fraction = 0.5;
    double noise_sigma = 0.05;
    std::uint64_t seed = 0;
    /// Generate a tumor-free case; tumor_count is then ignored.
    bool healthy_case = false;
};

struct QualityProfile {
    int downsample_factor = 1;
    double extra_noise_sigma = 0.0;
    int slice_thickness_factor = 1;

    /// Default low-quality acquisition used by the sample configs and the acceptance run.
    static QualityProfile degraded_preset() { return {2, 0.05, 2}; }

    bool is_standard() const {
        return downsample_factor == 1 && extra_noise_sigma == 0.0 && slice_thickness_factor == 1;
    }
};

/// Noise-free tissue intensities per modality, indexed [modality][label] with label 4 standing
/// for brain parenchyma and label 0 for outside the brain.
struct TissueIntensities {
    static constexpr float outside = 0.0f;
    // t1, t2, flair, t1ce
    static constexpr float parenchyma[4] = {0.60f, 0.40f, 0.40f, 0.45f};
    static constexpr float netc[4] = {0.20f, 0.85f, 0.55f, 0.30f};
    static constexpr float snfh[4] = {0.50f, 0.80f, 0.90f, 0.50f};
    static constexpr float et[4] = {0.45f, 0.70f, 0.65f, 1.00f};
    /// Linear ramp amplitude; intensity drops by up to this fraction toward region edges.
    static constexpr float ramp = 0.10f;
};

/// Throws ConfigError when the geometry cannot fit or fractions are out of range.
void validate(const PhantomConfig& cfg);
void validate(const QualityProfile& q);

Case generate_case(const PhantomConfig& cfg, const std::string& id = "phantom");

/// Trilinear down/up resampling, then extra noise, then slice-thickness coarsening along D.
/// Labels are untouched.
Case degrade(const Case& c, const QualityProfile& q, std::uint64_t seed);

struct Dataset {
    std::vector<Case> train, val;
    std::vector<std::uint64_t> train_seeds, val_seeds;
};

/// n >= 4; first ceil(3n/4) cases train, remainder validate. Case i uses child_seed(seed, i).
/// Degradation is applied when q is not the standard profile.
Dataset generate_dataset(int n, const PhantomConfig& tmpl, const QualityProfile& q,
                         std::uint64_t seed);

std::string case_id(int index);

/// Mean squared discrete Laplacian (6-neighbour, interior voxels only).
double laplacian_energy(const Volume3D& v);

}  // namespace samba
