#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "triplet/checkpoint.hpp"
#include "triplet/config.hpp"

namespace triplet {

/// Minimal first-order optimizers with exportable state, so a resumed stage
/// continues with the exact moments it was interrupted with.
class Optimizer {
public:
    Optimizer(std::vector<torch::Tensor> params, double weight_decay);
    virtual ~Optimizer() = default;

    void zero_grad();
    /// One update with the given learning rate; parameters without a
    /// gradient are skipped.
    void step(double lr);

    std::int64_t steps() const noexcept { return steps_; }
    std::size_t parameter_count() const noexcept { return params_.size(); }

    std::vector<NamedTensor> state() const;
    void load_state(const std::vector<NamedTensor>& state);

protected:
    virtual void update(std::size_t i, torch::Tensor& p, const torch::Tensor& g, double lr) = 0;

    std::vector<torch::Tensor> params_;
    double weight_decay_;
    std::int64_t steps_ = 0;
    // Per-parameter named slots ("m", "v", "momentum").
    std::vector<std::vector<std::pair<std::string, torch::Tensor>>> slots_;

    torch::Tensor& slot(std::size_t i, const std::string& name, const torch::Tensor& like);
};

/// Decoupled weight decay Adam (beta 0.9 / 0.999, eps 1e-8).
class AdamW final : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void update(std::size_t i, torch::Tensor& p, const torch::Tensor& g, double lr) override;
};

/// SGD with momentum 0.9 and L2 weight decay.
class SgdMomentum final : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void update(std::size_t i, torch::Tensor& p, const torch::Tensor& g, double lr) override;
};

/// Layer-wise adaptive rate scaling on top of SGD momentum 0.9. Weight
/// tensors get trust ratio eta * |w| / |g| and weight decay; biases and
/// normalization parameters get neither and a reduced rate.
class Lars final : public Optimizer {
public:
    static constexpr double kEta = 0.001;
    static constexpr double kBiasRateScale = 0.024;

    using Optimizer::Optimizer;

protected:
    void update(std::size_t i, torch::Tensor& p, const torch::Tensor& g, double lr) override;
};

std::unique_ptr<Optimizer> make_optimizer(const StageHyperParams& hp, std::vector<torch::Tensor> params);

/// Scheduled learning rate before optimizer step `step` (0-based).
double learning_rate_at(const StageHyperParams& hp, std::int64_t step);

}  // namespace triplet
