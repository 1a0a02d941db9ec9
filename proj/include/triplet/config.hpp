#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace triplet {

using Shape3 = std::array<std::int64_t, 3>;

enum class OptimizerKind { AdamW, Sgd, Lars };
enum class KlDirection { StudentTeacher, TeacherStudent };
enum class LrSchedule { Constant, Cosine };

std::string to_string(OptimizerKind k);
std::string to_string(KlDirection d);
std::string to_string(LrSchedule s);

struct StageHyperParams {
    double learning_rate = 0.01;
    double weight_decay = 0.0;
    std::int64_t batch_size = 32;
    std::int64_t iterations = 1;
    // lambda1 for the SSL stage, lambda2 for distillation; ignored elsewhere.
    double lambda = 0.0;
    std::optional<std::int64_t> early_stopping_patience;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    LrSchedule schedule = LrSchedule::Constant;

    bool operator==(const StageHyperParams&) const = default;
};

// Geometry of the stochastic augmentations. Translations are expressed on the
// reference grid (55 voxels per axis) and rescaled to the configured
// input_shape, so the full-scale profile reproduces the literal voxel values.
struct AugmentSettings {
    double reference_extent = 55.0;
    double translation_voxels = 8.0;
    double ssl_rotation_degrees = 90.0;
    double tuning_rotation_degrees = 8.0;
    std::array<double, 2> crop_scale{0.5, 1.0};
    double flip_probability = 0.5;
    double affine_probability = 0.5;

    bool operator==(const AugmentSettings&) const = default;
};

struct SyntheticSpec {
    std::int64_t n_unlabeled = 2000;
    std::int64_t n_task = 600;
    std::int64_t n_target = 150;
    Shape3 volume_shape{32, 32, 32};
    std::array<double, 3> class_proportions{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    // Domain gap between role T and roles U/D; 0 removes it entirely.
    double shift = 1.0;
    // Fraction of role-U subjects drawn from the healthy (class 0) model.
    double unlabeled_healthy_fraction = 0.8;
    // Severity range of the class-conditional regional attenuation.
    std::array<double, 2> severity{0.25, 0.5};
    // Role T is an earlier-stage cohort: milder, harder to tell apart.
    std::array<double, 2> target_severity{0.15, 0.35};
    double noise = 0.04;

    bool operator==(const SyntheticSpec&) const = default;
};

struct ExperimentConfig {
    StageHyperParams ssl;
    StageHyperParams distill;
    StageHyperParams finetune;
    // Baseline stages: random-init training on T, and plain CE pre-training on D.
    StageHyperParams supervised;
    StageHyperParams supervised_pretrain;

    std::uint64_t seed = 0;
    std::int64_t latent_dim = 512;
    std::int64_t projection_dim = 2048;
    std::int64_t num_classes = 3;
    std::int64_t base_channels = 16;
    Shape3 input_shape{55, 55, 55};

    double distill_temperature = 1.0;
    KlDirection kl_direction = KlDirection::StudentTeacher;
    bool center_embeddings = true;

    std::int64_t folds = 5;
    std::array<double, 3> split_ratios{0.65, 0.15, 0.20};
    double holdout_fraction = 0.2;
    // Fine-tuning validation cadence in optimizer steps.
    std::int64_t eval_interval = 10;
    // Periodic checkpoints every this fraction of scheduled iterations.
    double checkpoint_fraction = 0.1;

    std::filesystem::path unlabeled_manifest;
    std::filesystem::path task_manifest;
    std::filesystem::path target_manifest;
    std::filesystem::path output_dir = "runs";

    AugmentSettings augment;
    SyntheticSpec synthetic;

    bool operator==(const ExperimentConfig&) const = default;
};

enum class Profile { Full, Desk };

std::optional<Profile> parse_profile(std::string_view name);

/// Full-scale configuration: every stage scalar as published for the method.
ExperimentConfig default_config();

/// Scaled-down preset used by the acceptance experiments on a CPU.
ExperimentConfig desk_profile();

ExperimentConfig profile_config(Profile p);

/// All invariant violations, empty when the config is valid.
std::vector<std::string> validate(const ExperimentConfig& cfg);

/// Parses TOML text over the preset named by its `profile` key (or
/// `fallback`). Throws ConfigError on syntax/type errors and unknown keys,
/// ValidationError listing every violated invariant.
ExperimentConfig parse_config(std::string_view toml_text, Profile fallback = Profile::Full);

/// Reads a config file; TRIPLET_OUTPUT_DIR, when set, replaces output_dir.
ExperimentConfig load_config(const std::filesystem::path& path, Profile fallback = Profile::Full);

std::string to_toml(const ExperimentConfig& cfg);

/// Stable hash of the fields that determine the network architecture.
std::string architecture_fingerprint(const ExperimentConfig& cfg);

/// Stable hash of a single stage's training-relevant settings.
std::string stage_fingerprint(const ExperimentConfig& cfg, std::string_view stage);

std::string fnv1a_hex(std::string_view bytes);

}  // namespace triplet
