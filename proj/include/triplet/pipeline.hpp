#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "triplet/checkpoint.hpp"
#include "triplet/config.hpp"
#include "triplet/errors.hpp"
#include "triplet/manifest.hpp"
#include "triplet/report.hpp"
#include "triplet/splits.hpp"

namespace triplet {

enum class Strategy { SupervisedT, SupervisedDT, SslBtThenT, Triplet };

std::string to_string(Strategy s);
/// Accepts supervised_t, supervised_dt, ssl_bt_then_t, triplet (case and
/// dash/underscore insensitive).
std::optional<Strategy> parse_strategy(std::string_view name);

bool needs_unlabeled(Strategy s);
bool needs_task(Strategy s);

struct StageResult {
    std::string stage;
    // theta_prime, psi_prime, psi_final, ...
    std::string weights_tag;
    std::filesystem::path checkpoint;
    std::string weights_hash;
    std::vector<double> loss_curve;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    std::string fingerprint;
    bool reused = false;
    // Stage-specific facts: teacher checksums, early-stopping trace, the
    // hash of the weights the stage started from, ...
    nlohmann::json diagnostics = nlohmann::json::object();

    nlohmann::json to_json() const;
    static StageResult from_json(const nlohmann::json& j);
};

struct RunOptions {
    int jobs = 1;
    // Reuse a finished stage whose fingerprint matches.
    bool reuse = true;
    // Testing hook: stop a stage (as if interrupted) after this many steps.
    std::optional<std::int64_t> interrupt_after;
    // Testing hook: replaces the fine-tuning validation metric at a step.
    std::function<double(std::int64_t step)> validation_override;
};

/// Thrown by a stage stopped through RunOptions::interrupt_after.
class Interrupted : public Error {
public:
    using Error::Error;
};

/// Volumes of the three roles plus the target manifest (for stratification).
struct Datasets {
    VolumeStore unlabeled;
    VolumeStore task;
    VolumeStore target;
    Manifest target_manifest;
    std::string unlabeled_checksum, task_checksum, target_checksum;
};

/// Loads (and validates) the manifests a strategy needs. Missing ones throw
/// ConfigError naming the role.
Datasets load_datasets(const ExperimentConfig& cfg, Strategy strategy);

/// Task-data indices used for training and for the label-balanced holdout.
HoldoutSplit task_holdout(const ExperimentConfig& cfg, const VolumeStore& task);

/// Reuse key of the task-data stages: the data checksum plus the holdout.
std::string task_data_key(const std::string& task_checksum, const HoldoutSplit& split);

std::vector<FoldSplit> target_folds(const ExperimentConfig& cfg, const Manifest& target);

/// Barlow Twins pre-training of f and the SSL head on role U; emits theta'.
StageResult run_ssl_stage(const ExperimentConfig& cfg, const VolumeStore& unlabeled, const std::filesystem::path& dir,
                          const RunOptions& opts = {}, const std::string& data_key = "");

/// Frozen-teacher self-distillation on role D; emits psi'.
StageResult run_distillation_stage(const ExperimentConfig& cfg, const VolumeStore& task, const ModelWeights& teacher,
                                   const std::filesystem::path& dir, const RunOptions& opts = {},
                                   const std::string& data_key = "");

/// Plain cross-entropy training on role D from random init (the
/// supervised-on-D baseline); shares the student seeds with distillation.
StageResult run_supervised_pretrain_stage(const ExperimentConfig& cfg, const VolumeStore& task,
                                          const std::filesystem::path& dir, const RunOptions& opts = {},
                                          const std::string& data_key = "");

/// Fine-tunes on one fold with early stopping on validation BAcc. `init`
/// null means random init; an SSL-head checkpoint seeds only the extractor.
/// `hp` is cfg.finetune or cfg.supervised.
StageResult run_finetune_stage(const ExperimentConfig& cfg, const StageHyperParams& hp, const FoldSplit& fold,
                               const VolumeStore& target, const ModelWeights* init, const std::filesystem::path& dir,
                               const RunOptions& opts = {}, const std::string& data_key = "");

struct StrategyRun {
    Strategy strategy = Strategy::Triplet;
    std::vector<StageResult> stages;
    std::vector<StageResult> folds;
    StrategyReport report;
};

/// Fine-tunes and tests every target fold from `init` (null: random init),
/// folds running on up to `opts.jobs` threads. Fills `folds` and
/// `report.folds`.
StrategyRun run_target_folds(const ExperimentConfig& cfg, const StageHyperParams& hp, const Datasets& data,
                             const ModelWeights* init, const std::filesystem::path& dir, const RunOptions& opts = {});

/// Runs the stages of one strategy under `run_dir` ({run}/{stage}/{fold}),
/// then evaluates every fold's test split (and the task holdout where the
/// strategy trains on role D).
StrategyRun run_strategy(Strategy strategy, const ExperimentConfig& cfg, const Datasets& data,
                         const std::filesystem::path& run_dir, const RunOptions& opts = {});

/// Holdout BAcc of a classifier checkpoint on the task data.
MetricReport evaluate_holdout(const ExperimentConfig& cfg, const ModelWeights& weights, const VolumeStore& task);

}  // namespace triplet
