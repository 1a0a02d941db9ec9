#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "triplet/config.hpp"

namespace triplet {

/// Dense 3D scalar field in C order: index (i, j, k) -> (i * s1 + j) * s2 + k.
struct Volume {
    Shape3 shape{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<float> voxels;

    Volume() = default;
    explicit Volume(Shape3 s, float fill = 0.0f);

    std::size_t numel() const noexcept { return voxels.size(); }
    std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const noexcept {
        return static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k);
    }
    float& at(std::int64_t i, std::int64_t j, std::int64_t k) noexcept { return voxels[index(i, j, k)]; }
    float at(std::int64_t i, std::int64_t j, std::int64_t k) const noexcept { return voxels[index(i, j, k)]; }

    bool all_finite() const noexcept;
};

/// Trilinear sample at continuous voxel coordinates; zero outside the grid.
float sample_trilinear(const Volume& v, double x, double y, double z) noexcept;

/// Linear min-max rescale into [0, 1]. A constant volume maps to all zeros.
/// Returns false for the degenerate (constant) case.
bool rescale_intensity(Volume& v) noexcept;

/// Crops the box [origin, origin + extent) (continuous, in voxels) and
/// resamples it onto `out` voxels with corner-aligned trilinear interpolation.
Volume crop_resample(const Volume& v, const std::array<double, 3>& origin, const std::array<double, 3>& extent,
                     Shape3 out);

struct NormalizeResult {
    Volume volume;
    bool degenerate = false;
};

/// Min-max rescale, center-crop to the largest cube, resample to `target`.
NormalizeResult normalize_volume(const Volume& raw, Shape3 target);

// Volume files. `.nii` / `.nii.gz` are single-file NIfTI-1; `.raw` is
// little-endian float32 with a JSON sidecar at `<path>.json` carrying
// {"dims": [..], "spacing": [..], "dtype": "float32"}.
Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& v, const std::filesystem::path& path);

Volume read_raw(const std::filesystem::path& path);
void write_raw(const Volume& v, const std::filesystem::path& path);
Volume read_nifti(const std::filesystem::path& path);
void write_nifti(const Volume& v, const std::filesystem::path& path);

}  // namespace triplet
