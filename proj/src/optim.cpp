#include "triplet/optim.hpp"

#include <cmath>
#include <numbers>

#include "triplet/errors.hpp"

namespace triplet {

Optimizer::Optimizer(std::vector<torch::Tensor> params, double weight_decay)
    : params_(std::move(params)), weight_decay_(weight_decay), slots_(params_.size()) {}

void Optimizer::zero_grad() {
    for (auto& p : params_)
        if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
}

void Optimizer::step(double lr) {
    torch::NoGradGuard ng;
    ++steps_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.grad().defined()) continue;
        update(i, p, p.grad(), lr);
    }
}

torch::Tensor& Optimizer::slot(std::size_t i, const std::string& name, const torch::Tensor& like) {
    for (auto& [n, t] : slots_[i])
        if (n == name) return t;
    slots_[i].emplace_back(name, torch::zeros_like(like));
    return slots_[i].back().second;
}

std::vector<NamedTensor> Optimizer::state() const {
    std::vector<NamedTensor> out;
    out.push_back({"optim/steps", torch::tensor({steps_}, torch::kInt64)});
    for (std::size_t i = 0; i < slots_.size(); ++i)
        for (const auto& [n, t] : slots_[i]) out.push_back({"optim/" + std::to_string(i) + "/" + n, t.clone()});
    return out;
}

void Optimizer::load_state(const std::vector<NamedTensor>& state) {
    for (auto& s : slots_) s.clear();
    for (const auto& t : state) {
        if (t.name == "optim/steps") {
            steps_ = t.value.item<std::int64_t>();
            continue;
        }
        if (t.name.rfind("optim/", 0) != 0) continue;
        const auto rest = t.name.substr(6);
        const auto slash = rest.find('/');
        const auto i = static_cast<std::size_t>(std::stoull(rest.substr(0, slash)));
        if (i >= params_.size() || t.value.sizes() != params_[i].sizes())
            throw IncompatibilityError("optimizer state does not match the parameter list");
        slots_[i].emplace_back(rest.substr(slash + 1), t.value.clone());
    }
}

void AdamW::update(std::size_t i, torch::Tensor& p, const torch::Tensor& g, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    // Copies of the handles: a second slot() may reallocate the slot list.
    auto m = slot(i, "m", p);
    auto v = slot(i, "v", p);
    m.mul_(b1).add_(g, 1.0 - b1);
    v.mul_(b2).addcmul_(g, g, 1.0 - b2);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    p.mul_(1.0 - lr * weight_decay_);
    const auto denom = (v / c2).sqrt_().add_(eps);
    p.addcdiv_(m, denom, -lr / c1);
}

void SgdMomentum::update(std::size_t i, torch::Tensor& p, const torch::Tensor& g, double lr) {
    auto& buf = slot(i, "momentum", p);
    buf.mul_(0.9).add_(g + weight_decay_ * p);
    p.add_(buf, -lr);
}

void Lars::update(std::size_t i, torch::Tensor& p, const torch::Tensor& g, double lr) {
    auto& buf = slot(i, "momentum", p);
    torch::Tensor d;
    double rate = lr;
    if (p.dim() > 1) {
        d = g + weight_decay_ * p;
        const double pn = p.norm().item<double>();
        const double dn = d.norm().item<double>();
        if (pn > 0.0 && dn > 0.0) rate *= kEta * pn / dn;
    } else {
        d = g;
        rate *= kBiasRateScale;
    }
    buf.mul_(0.9).add_(d, rate);
    p.sub_(buf);
}

std::unique_ptr<Optimizer> make_optimizer(const StageHyperParams& hp, std::vector<torch::Tensor> params) {
    switch (hp.optimizer) {
        case OptimizerKind::AdamW: return std::make_unique<AdamW>(std::move(params), hp.weight_decay);
        case OptimizerKind::Sgd: return std::make_unique<SgdMomentum>(std::move(params), hp.weight_decay);
        case OptimizerKind::Lars: return std::make_unique<Lars>(std::move(params), hp.weight_decay);
    }
    throw ConfigError("optimizer", "unknown optimizer");
}

double learning_rate_at(const StageHyperParams& hp, std::int64_t step) {
    if (hp.schedule == LrSchedule::Constant) return hp.learning_rate;
    const double t = static_cast<double>(step) / static_cast<double>(std::max<std::int64_t>(1, hp.iterations));
    return hp.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, t)));
}

}  // namespace triplet
