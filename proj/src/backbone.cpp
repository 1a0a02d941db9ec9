#include "triplet/backbone.hpp"

#include <cmath>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "triplet/errors.hpp"
#include "triplet/runlog.hpp"

namespace triplet {

std::string to_string(HeadKind h) { return h == HeadKind::Ssl ? "ssl" : "cls"; }

namespace {

torch::nn::Conv3dOptions conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride) {
    return torch::nn::Conv3dOptions(in, out, k).stride(stride).padding(k / 2).bias(false);
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(std::int64_t in, std::int64_t out, bool downsample) {
    std::int64_t c = in;
    if (downsample) {
        down = register_module("down", torch::nn::Conv3d(conv(in, out, 3, 2)));
        down_bn = register_module("down_bn", torch::nn::BatchNorm3d(out));
        c = out;
    }
    conv1 = register_module("conv1", torch::nn::Conv3d(conv(c, out, 3, 1)));
    bn1 = register_module("bn1", torch::nn::BatchNorm3d(out));
    conv2 = register_module("conv2", torch::nn::Conv3d(conv(out, out, 3, 1)));
    bn2 = register_module("bn2", torch::nn::BatchNorm3d(out));
    if (downsample || in != out) {
        shortcut = register_module("shortcut", torch::nn::Conv3d(conv(in, out, 1, downsample ? 2 : 1)));
        shortcut_bn = register_module("shortcut_bn", torch::nn::BatchNorm3d(out));
    }
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    torch::Tensor h = x;
    if (down) h = torch::relu(down_bn(down(h)));
    h = torch::relu(bn1(conv1(h)));
    h = bn2(conv2(h));
    const auto s = shortcut ? shortcut_bn(shortcut(x)) : x;
    return torch::relu(h + s);
}

FeatureExtractorImpl::FeatureExtractorImpl(std::int64_t base, std::int64_t latent_dim) {
    std::int64_t in = 1;
    for (int b = 0; b < kBlocks; ++b) {
        const std::int64_t out = base << b;
        blocks.push_back(register_module("block" + std::to_string(b + 1), ResidualBlock(in, out, b > 0)));
        in = out;
    }
    to_latent = register_module("to_latent", torch::nn::Linear(in, latent_dim));
}

torch::Tensor FeatureExtractorImpl::forward(const torch::Tensor& x) {
    torch::Tensor h = x;
    for (auto& b : blocks) h = b->forward(h);
    h = h.mean({2, 3, 4});
    return to_latent(h);
}

std::vector<Shape3> FeatureExtractorImpl::block_shapes(Shape3 input) {
    torch::NoGradGuard ng;
    const bool was_training = is_training();
    eval();
    std::vector<Shape3> out;
    torch::Tensor h = torch::zeros({1, 1, input[0], input[1], input[2]});
    for (auto& b : blocks) {
        h = b->forward(h);
        out.push_back({h.size(2), h.size(3), h.size(4)});
    }
    train(was_training);
    return out;
}

ProjectionHeadImpl::ProjectionHeadImpl(HeadKind k, std::int64_t in_dim, std::int64_t out)
    : kind(k), out_dim(out) {
    const std::int64_t hidden = k == HeadKind::Ssl ? out : std::max<std::int64_t>(16, in_dim / 4);
    fc1 = register_module("fc1", torch::nn::Linear(in_dim, hidden));
    if (k == HeadKind::Ssl) bn = register_module("bn", torch::nn::BatchNorm1d(hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, out));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& z) {
    auto h = fc1(z);
    if (bn) h = bn(h);
    return fc2(torch::relu(h));
}

ModelImpl::ModelImpl(const ExperimentConfig& cfg, HeadKind kind)
    : head_kind(kind), input_shape(cfg.input_shape), fingerprint(architecture_fingerprint(cfg)) {
    features = register_module("features", FeatureExtractor(cfg.base_channels, cfg.latent_dim));
    head = register_module(
        "head", ProjectionHead(kind, cfg.latent_dim, kind == HeadKind::Ssl ? cfg.projection_dim : cfg.num_classes));
}

void ModelImpl::train(bool on) { torch::nn::Module::train(frozen ? false : on); }

namespace {

void init_weights(Model& m, std::uint64_t seed) {
    torch::NoGradGuard ng;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    for (auto& mod : m->modules(false)) {
        if (auto* c = mod->as<torch::nn::Conv3d>()) {
            const auto& w = c->weight;
            const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3) * w.size(4));
            w.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
        } else if (auto* l = mod->as<torch::nn::Linear>()) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(l->weight.size(1)));
            l->weight.uniform_(-bound, bound, gen);
            l->bias.zero_();
        } else if (auto* b = mod->as<torch::nn::BatchNorm3d>()) {
            b->weight.fill_(1.0);
            b->bias.zero_();
        } else if (auto* b1 = mod->as<torch::nn::BatchNorm1d>()) {
            b1->weight.fill_(1.0);
            b1->bias.zero_();
        }
    }
    // Each residual branch starts as the identity on top of its shortcut.
    for (auto& b : m->features->blocks) b->bn2->weight.zero_();
}

}  // namespace

Model init_model(const ExperimentConfig& cfg, HeadKind head, std::uint64_t seed) {
    for (int a = 0; a < 3; ++a)
        if (cfg.input_shape[a] < 8)
            throw ConfigError("input_shape", "dimension " + std::to_string(a) + " is " + std::to_string(cfg.input_shape[a]) +
                                                 "; the six-block stride schedule needs at least 8");
    if (const auto v = validate(cfg); !v.empty()) throw ConfigError("config", v.front());
    Model m(cfg, head);
    init_weights(m, seed);
    return m;
}

namespace {

torch::Tensor check_input(Model& m, const torch::Tensor& batch) {
    torch::Tensor x = batch.dim() == 4 ? batch.unsqueeze(1) : batch;
    const auto& s = m->input_shape;
    if (x.dim() != 5 || x.size(1) != 1 || x.size(2) != s[0] || x.size(3) != s[1] || x.size(4) != s[2]) {
        std::ostringstream o;
        o << "shape error: expected B x 1 x " << s[0] << " x " << s[1] << " x " << s[2] << ", got " << batch.sizes();
        throw ShapeError(o.str());
    }
    return x;
}

}  // namespace

torch::Tensor forward_features(Model& m, const torch::Tensor& batch) { return m->features->forward(check_input(m, batch)); }

torch::Tensor forward_projected(Model& m, const torch::Tensor& batch) {
    return m->head->forward(forward_features(m, batch));
}

void freeze(Model& m) {
    for (auto& p : m->parameters()) p.set_requires_grad(false);
    m->eval();
    m->frozen = true;
}

std::vector<torch::Tensor> trainable_parameters(Model& m) {
    std::vector<torch::Tensor> out;
    for (auto& p : m->parameters())
        if (p.requires_grad()) out.push_back(p);
    if (out.empty()) log::warn("trainable_parameters: model is frozen, optimizer receives no parameters");
    return out;
}

std::string parameter_checksum(Model& m) {
    std::string bytes;
    auto add = [&](const std::string& name, const torch::Tensor& t) {
        const auto c = t.detach().contiguous().cpu();
        bytes += name;
        bytes.append(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size());
    };
    for (const auto& p : m->named_parameters()) add(p.key(), p.value());
    for (const auto& b : m->named_buffers()) add(b.key(), b.value());
    return fnv1a_hex(bytes);
}

std::int64_t parameter_count(Model& m) {
    std::int64_t n = 0;
    for (const auto& p : m->parameters()) n += p.numel();
    return n;
}

}  // namespace triplet
