#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "triplet/evaluate.hpp"

namespace triplet {

using Points2 = std::vector<std::array<double, 2>>;

enum class Reducer { Umap, Pca };

std::optional<Reducer> parse_reducer(std::string_view name);

struct UmapOptions {
    int neighbors = 15;
    int epochs = 200;
    int negative_samples = 5;
    // Curve parameters for min_dist = 0.1, spread = 1.
    double a = 1.577;
    double b = 0.895;
};

/// First two principal components, with signs fixed so the largest-magnitude
/// loading of each axis is positive.
Points2 pca_2d(const torch::Tensor& x);

/// Neighborhood-preserving 2-D layout in the style of UMAP: fuzzy kNN graph,
/// PCA initialization, then seeded SGD with negative sampling.
Points2 umap_2d(const torch::Tensor& x, std::uint64_t seed, const UmapOptions& opts = {});

/// Throws EvaluationError for fewer than 10 rows.
Points2 embed_latents_2d(const torch::Tensor& x, Reducer reducer, std::uint64_t seed);

/// Mean silhouette coefficient in the plane (Euclidean).
double silhouette_score(const Points2& points, const std::vector<int>& labels);

struct Rgb {
    std::uint8_t r, g, b;
    bool operator==(const Rgb&) const = default;
};

/// Role U purple; role D CN dark blue, AD red, FTD dark grey; role T CN
/// light blue, AD orange, FTD light grey.
Rgb point_color(DatasetRole role, std::optional<int> label);

/// Square scatter plot, points drawn in input order.
void write_scatter_png(const std::filesystem::path& path, const Points2& points, const std::vector<Rgb>& colors,
                       int size = 800);

/// Columns id, role, label, x, y; label empty for unlabeled rows.
void write_coordinates_csv(const std::filesystem::path& path, const LatentTable& table, const Points2& points);

/// Embeds one latent table and writes `{dir}/{stage}.png` and `{stage}.csv`.
Points2 render_latent_space(const LatentTable& table, Reducer reducer, std::uint64_t seed,
                            const std::filesystem::path& dir);

}  // namespace triplet
