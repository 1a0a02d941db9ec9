#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "triplet/config.hpp"
#include "triplet/rng.hpp"
#include "triplet/volume.hpp"

namespace triplet::augment {

enum class Stage { Ssl, Distill, Finetune, Eval };

std::string to_string(Stage s);
/// Throws ConfigError for names other than ssl, distill, finetune, eval.
Stage parse_stage(std::string_view name);

enum class Interpolation { Trilinear, Nearest };

struct RescaleIntensity {};

struct RandomCropResize {
    // Fraction of the volume kept by the crop (not of the side length).
    std::array<double, 2> scale{0.5, 1.0};
    Shape3 output{55, 55, 55};
    bool random_center = true;
};

struct RandomFlip {
    std::array<bool, 3> axes{true, true, true};
    // Applied independently per axis.
    double probability = 0.5;
};

struct RandomAffine {
    double rotation_degrees = 8.0;
    std::array<double, 3> translation_voxels{8.0, 8.0, 8.0};
    double probability = 0.5;
};

using Transform = std::variant<RescaleIntensity, RandomCropResize, RandomFlip, RandomAffine>;

std::string describe(const Transform& t);

// Deterministic building blocks.
Volume flip(const Volume& v, int axis);
/// Rotates by Euler angles (radians, applied x then y then z) about the
/// volume center, then translates by `shift` voxels. Zero outside the field
/// of view.
Volume affine(const Volume& v, const std::array<double, 3>& angles, const std::array<double, 3>& shift,
              Interpolation interp = Interpolation::Trilinear);

class Pipeline {
public:
    Pipeline(Stage stage, std::vector<Transform> transforms, std::uint64_t seed);

    Stage stage() const noexcept { return stage_; }
    const std::vector<Transform>& transforms() const noexcept { return transforms_; }

    /// Draws from the pipeline's own stream.
    Volume apply(const Volume& v);
    /// Draws from a caller-provided stream; the pipeline itself is untouched.
    Volume apply(const Volume& v, Rng& rng) const;

    /// Two independent draws on the same input.
    std::pair<Volume, Volume> paired_views(const Volume& v);
    std::pair<Volume, Volume> paired_views(const Volume& v, Rng& rng) const;

private:
    Stage stage_;
    std::vector<Transform> transforms_;
    Rng rng_;
};

/// Stage-specific pipeline from the config's augmentation settings.
Pipeline build_pipeline(Stage stage, const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace triplet::augment
