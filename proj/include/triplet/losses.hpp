#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "triplet/config.hpp"

namespace triplet::losses {

// All objectives are autograd functions with hand-derived backward passes.
// They accept float32 or float64 inputs and keep the input dtype.

inline constexpr double kCorrelationEpsilon = 1e-12;

struct CrossCorrelation {
    // C x C, entry (c, j) correlates column c of zA with column j of zB.
    torch::Tensor matrix;
    std::int64_t batch_size = 0;
    // Columns whose norm fell below the epsilon (dead features).
    std::vector<std::int64_t> degenerate_a;
    std::vector<std::int64_t> degenerate_b;

    bool degenerate() const noexcept { return !degenerate_a.empty() || !degenerate_b.empty(); }
};

/// Normalized cross-correlation between two B x C embedding batches. With
/// `center` each column is mean-centered over the batch first, which turns
/// every entry into a Pearson correlation.
CrossCorrelation cross_correlation(const torch::Tensor& za, const torch::Tensor& zb, bool center = true);

/// sum_c (1 - C_cc)^2 + lambda1 * sum_{c != j} C_cj^2.
torch::Tensor barlow_twins_loss(const torch::Tensor& c, double lambda1);

/// Batch-mean KL between per-sample temperature softmaxes over the latent
/// dimension. StudentTeacher computes KL(student || teacher). The teacher
/// never receives a gradient.
torch::Tensor kl_divergence(const torch::Tensor& student, const torch::Tensor& teacher, double temperature,
                            KlDirection direction = KlDirection::StudentTeacher);

/// Mean negative log-softmax probability of the true class.
torch::Tensor cross_entropy_loss(const torch::Tensor& logits, const torch::Tensor& labels);

struct DistillationLoss {
    torch::Tensor total;
    torch::Tensor kl;
    torch::Tensor ce;
};

/// lambda2 * KL + (1 - lambda2) * CE.
DistillationLoss distillation_loss(const torch::Tensor& student_latents, const torch::Tensor& teacher_latents,
                                   const torch::Tensor& student_logits, const torch::Tensor& labels, double lambda2,
                                   double temperature, KlDirection direction = KlDirection::StudentTeacher);

}  // namespace triplet::losses
