#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "triplet/config.hpp"

namespace triplet {

enum class HeadKind { Ssl, Cls };

std::string to_string(HeadKind h);

/// conv-BN-ReLU-conv-BN plus shortcut, then ReLU. A downsampling block
/// starts its branch with an extra stride-2 convolution and projects the
/// shortcut with a strided 1x1x1 convolution. Padding gives ceiling halving.
class ResidualBlockImpl : public torch::nn::Module {
public:
    ResidualBlockImpl(std::int64_t in_channels, std::int64_t out_channels, bool downsample);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv3d down{nullptr};
    torch::nn::BatchNorm3d down_bn{nullptr};
    torch::nn::Conv3d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm3d bn1{nullptr}, bn2{nullptr};
    torch::nn::Conv3d shortcut{nullptr};
    torch::nn::BatchNorm3d shortcut_bn{nullptr};
};
TORCH_MODULE(ResidualBlock);

class FeatureExtractorImpl : public torch::nn::Module {
public:
    static constexpr int kBlocks = 6;

    FeatureExtractorImpl(std::int64_t base_channels, std::int64_t latent_dim);
    torch::Tensor forward(const torch::Tensor& x);
    /// Spatial shape after each block, for a given input shape.
    std::vector<Shape3> block_shapes(Shape3 input);

    std::vector<ResidualBlock> blocks;
    torch::nn::Linear to_latent{nullptr};
};
TORCH_MODULE(FeatureExtractor);

/// Two affine layers around one non-linearity. The SSL variant maps Z to C
/// with batch normalization before the ReLU; the CLS variant maps Z to
/// class logits through a hidden width of max(16, Z / 4).
class ProjectionHeadImpl : public torch::nn::Module {
public:
    ProjectionHeadImpl(HeadKind kind, std::int64_t in_dim, std::int64_t out_dim);
    torch::Tensor forward(const torch::Tensor& z);

    HeadKind kind;
    std::int64_t out_dim;
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
    torch::nn::BatchNorm1d bn{nullptr};
};
TORCH_MODULE(ProjectionHead);

class ModelImpl : public torch::nn::Module {
public:
    ModelImpl(const ExperimentConfig& cfg, HeadKind head);

    void train(bool on = true) override;

    FeatureExtractor features{nullptr};
    ProjectionHead head{nullptr};
    HeadKind head_kind;
    Shape3 input_shape;
    std::string fingerprint;
    bool frozen = false;
};
TORCH_MODULE(Model);

/// Fresh model, deterministic in `seed`. Throws ConfigError when the config
/// is invalid or an input dimension is below 8.
Model init_model(const ExperimentConfig& cfg, HeadKind head, std::uint64_t seed);

/// B x Z latents. Accepts B x 1 x D x H x W or B x D x H x W.
torch::Tensor forward_features(Model& m, const torch::Tensor& batch);
/// B x C projections (SSL head) or B x K logits (CLS head).
torch::Tensor forward_projected(Model& m, const torch::Tensor& batch);

/// Disables gradients everywhere and pins normalization layers to their
/// running statistics; train() on a frozen model is a no-op.
void freeze(Model& m);

/// Parameters that still require gradients. Warns when none are left.
std::vector<torch::Tensor> trainable_parameters(Model& m);

/// Hash over every parameter and buffer, bit for bit.
std::string parameter_checksum(Model& m);

std::int64_t parameter_count(Model& m);

}  // namespace triplet
