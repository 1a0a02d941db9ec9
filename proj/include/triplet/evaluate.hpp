#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "triplet/backbone.hpp"
#include "triplet/checkpoint.hpp"
#include "triplet/manifest.hpp"
#include "triplet/metrics.hpp"

namespace triplet {

/// Eval-mode forward in fixed-size chunks without gradients; restores the
/// model's previous train/eval mode.
torch::Tensor infer(Model& m, const torch::Tensor& volumes, bool projected, std::int64_t chunk = 64);

/// Argmax class predictions of a CLS model.
std::vector<int> predict(Model& m, const torch::Tensor& volumes);

/// Metrics of a CLS model on `indices` of a labeled store. Only the
/// deterministic intensity rescale is applied to the inputs.
MetricReport evaluate(Model& m, const VolumeStore& store, const std::vector<std::size_t>& indices,
                      std::int64_t fold = -1, std::string dataset = "T");
MetricReport evaluate(Model& m, const VolumeStore& store, std::int64_t fold = -1, std::string dataset = "T");

struct LatentTable {
    std::string stage;
    std::vector<std::string> ids;
    std::vector<DatasetRole> roles;
    std::vector<std::optional<int>> labels;
    // N x Z, float64.
    torch::Tensor latents;

    std::size_t rows() const noexcept { return ids.size(); }
};

inline constexpr std::size_t kMaxUnlabeledPlotted = 1000;

/// Seeded uniform subsample of at most `limit` indices, in ascending order.
std::vector<std::size_t> subsample(std::size_t n, std::size_t limit, std::uint64_t seed);

/// Latents of every sample in `stores` under one model.
LatentTable extract_latents(Model& m, const std::vector<const VolumeStore*>& stores, std::string stage);

/// One table per checkpoint. Role U is subsampled to at most 1,000 rows.
/// Throws IncompatibilityError when a checkpoint does not fit `cfg`.
std::vector<LatentTable> extract_latents(const std::vector<ModelWeights>& weights, const ExperimentConfig& cfg,
                                         const VolumeStore& unlabeled, const VolumeStore& task,
                                         const VolumeStore& target, std::uint64_t seed);

}  // namespace triplet
