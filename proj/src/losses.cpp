#include "triplet/losses.hpp"

#include <string>

#include "triplet/errors.hpp"

namespace triplet::losses {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

namespace {

void require_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>()) throw NumericError(std::string("numeric error: non-finite values in ") + what);
}

void require_labels(const torch::Tensor& labels, std::int64_t k, std::int64_t batch) {
    if (labels.dim() != 1 || labels.size(0) != batch)
        throw ShapeError("labels: expected " + std::to_string(batch) + " entries");
    if (batch == 0) return;
    const auto lo = labels.min().item<std::int64_t>();
    const auto hi = labels.max().item<std::int64_t>();
    if (lo < 0 || hi >= k)
        throw LabelError("label error: labels must lie in 0.." + std::to_string(k - 1) + ", got range [" +
                         std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

// Column normalization a / max(|a|, eps) and its adjoint.
struct ColumnNorm {
    torch::Tensor unit;
    torch::Tensor norm;  // clamped
    torch::Tensor live;  // 1 where the norm exceeded eps
};

ColumnNorm normalize_columns(const torch::Tensor& a) {
    const auto raw = a.norm(2, 0, true);
    const auto clamped = raw.clamp_min(kCorrelationEpsilon);
    return {a / clamped, clamped, (raw > kCorrelationEpsilon).to(a.dtype())};
}

torch::Tensor normalize_columns_backward(const torch::Tensor& g, const ColumnNorm& n) {
    // d(a/|a|) = (g - u (u.g)) / |a|; below eps the norm is a constant.
    const auto proj = (n.unit * g).sum(0, true);
    return (g - n.live * n.unit * proj) / n.norm;
}

class CrossCorrelationFn : public torch::autograd::Function<CrossCorrelationFn> {
public:
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor za, torch::Tensor zb, bool center) {
        const auto a = center ? za - za.mean(0, true) : za;
        const auto b = center ? zb - zb.mean(0, true) : zb;
        const auto na = normalize_columns(a);
        const auto nb = normalize_columns(b);
        ctx->save_for_backward({na.unit, na.norm, na.live, nb.unit, nb.norm, nb.live});
        ctx->saved_data["center"] = center;
        // Entries are cosines; rounding can push them an ulp past 1.
        return na.unit.transpose(0, 1).matmul(nb.unit).clamp(-1.0, 1.0);
    }

    static variable_list backward(AutogradContext* ctx, variable_list grads) {
        const auto s = ctx->get_saved_variables();
        const ColumnNorm na{s[0], s[1], s[2]}, nb{s[3], s[4], s[5]};
        const bool center = ctx->saved_data["center"].toBool();
        const auto& g = grads[0];
        auto ga = normalize_columns_backward(nb.unit.matmul(g.transpose(0, 1)), na);
        auto gb = normalize_columns_backward(na.unit.matmul(g), nb);
        if (center) {
            ga = ga - ga.mean(0, true);
            gb = gb - gb.mean(0, true);
        }
        return {ga, gb, torch::Tensor()};
    }
};

class BarlowTwinsFn : public torch::autograd::Function<BarlowTwinsFn> {
public:
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor c, double lambda1) {
        const auto eye = torch::eye(c.size(0), c.options());
        const auto on = (1.0 - c.diagonal()).pow(2).sum();
        const auto off = (c * (1.0 - eye)).pow(2).sum();
        ctx->save_for_backward({c});
        ctx->saved_data["lambda"] = lambda1;
        return on + lambda1 * off;
    }

    static variable_list backward(AutogradContext* ctx, variable_list grads) {
        const auto c = ctx->get_saved_variables()[0];
        const double lambda1 = ctx->saved_data["lambda"].toDouble();
        const auto eye = torch::eye(c.size(0), c.options());
        const auto g = 2.0 * lambda1 * c * (1.0 - eye) + eye * (-2.0 * (1.0 - c));
        return {grads[0] * g, torch::Tensor()};
    }
};

class KlFn : public torch::autograd::Function<KlFn> {
public:
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor student, torch::Tensor teacher, double tau,
                                 bool student_first) {
        const auto log_p = torch::log_softmax(student / tau, 1);
        const auto log_q = torch::log_softmax(teacher / tau, 1);
        const auto p = log_p.exp();
        const auto q = log_q.exp();
        // Per-sample divergence, then batch mean.
        const auto per = student_first ? (p * (log_p - log_q)).sum(1) : (q * (log_q - log_p)).sum(1);
        ctx->save_for_backward({p, q, log_p, log_q, per});
        ctx->saved_data["tau"] = tau;
        ctx->saved_data["student_first"] = student_first;
        return per.mean();
    }

    static variable_list backward(AutogradContext* ctx, variable_list grads) {
        const auto s = ctx->get_saved_variables();
        const auto &p = s[0], &q = s[1], &log_p = s[2], &log_q = s[3], &per = s[4];
        const double tau = ctx->saved_data["tau"].toDouble();
        const bool student_first = ctx->saved_data["student_first"].toBool();
        const double batch = static_cast<double>(p.size(0));
        torch::Tensor g = student_first ? p * ((log_p - log_q) - per.unsqueeze(1)) : p - q;
        g = g * (grads[0] / (tau * batch));
        return {g, torch::Tensor(), torch::Tensor(), torch::Tensor()};
    }
};

class CrossEntropyFn : public torch::autograd::Function<CrossEntropyFn> {
public:
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor logits, torch::Tensor labels) {
        const auto log_sm = torch::log_softmax(logits, 1);
        const auto picked = log_sm.gather(1, labels.unsqueeze(1)).squeeze(1);
        ctx->save_for_backward({log_sm, labels});
        return -picked.mean();
    }

    static variable_list backward(AutogradContext* ctx, variable_list grads) {
        const auto s = ctx->get_saved_variables();
        const auto& log_sm = s[0];
        const auto& labels = s[1];
        const auto onehot = torch::zeros_like(log_sm).scatter_(1, labels.unsqueeze(1), 1.0);
        const double batch = static_cast<double>(log_sm.size(0));
        return {(log_sm.exp() - onehot) * (grads[0] / batch), torch::Tensor()};
    }
};

}  // namespace

CrossCorrelation cross_correlation(const torch::Tensor& za, const torch::Tensor& zb, bool center) {
    if (za.dim() != 2 || za.sizes() != zb.sizes())
        throw ShapeError("cross_correlation: expected two B x C arrays of equal shape");
    if (za.size(0) < 2) throw ShapeError("cross_correlation: batch size must be >= 2, got " + std::to_string(za.size(0)));
    require_finite(za, "cross_correlation input zA");
    require_finite(zb, "cross_correlation input zB");

    CrossCorrelation out;
    out.batch_size = za.size(0);
    out.matrix = CrossCorrelationFn::apply(za, zb, center);
    torch::NoGradGuard ng;
    auto dead = [&](const torch::Tensor& z) {
        const auto x = center ? z - z.mean(0, true) : z;
        const auto mask = (x.norm(2, 0) <= kCorrelationEpsilon).nonzero().flatten().to(torch::kInt64).contiguous();
        return std::vector<std::int64_t>(mask.data_ptr<std::int64_t>(), mask.data_ptr<std::int64_t>() + mask.numel());
    };
    out.degenerate_a = dead(za);
    out.degenerate_b = dead(zb);
    return out;
}

torch::Tensor barlow_twins_loss(const torch::Tensor& c, double lambda1) {
    if (c.dim() != 2 || c.size(0) != c.size(1)) throw ShapeError("barlow_twins_loss: expected a square matrix");
    return BarlowTwinsFn::apply(c, lambda1);
}

torch::Tensor kl_divergence(const torch::Tensor& student, const torch::Tensor& teacher, double temperature,
                            KlDirection direction) {
    if (!(temperature > 0.0)) throw ConfigError("distill_temperature", "temperature must be > 0");
    if (student.dim() != 2 || student.sizes() != teacher.sizes())
        throw ShapeError("kl_divergence: student and teacher latents must be B x Z of equal shape");
    return KlFn::apply(student, teacher.detach(), temperature, direction == KlDirection::StudentTeacher);
}

torch::Tensor cross_entropy_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
    if (logits.dim() != 2) throw ShapeError("cross_entropy_loss: logits must be B x K");
    require_labels(labels, logits.size(1), logits.size(0));
    return CrossEntropyFn::apply(logits, labels.to(torch::kInt64));
}

DistillationLoss distillation_loss(const torch::Tensor& student_latents, const torch::Tensor& teacher_latents,
                                   const torch::Tensor& student_logits, const torch::Tensor& labels, double lambda2,
                                   double temperature, KlDirection direction) {
    if (!(lambda2 >= 0.0 && lambda2 <= 1.0)) throw ConfigError("distill.lambda", "lambda2 must lie in [0, 1]");
    DistillationLoss out;
    out.kl = kl_divergence(student_latents, teacher_latents, temperature, direction);
    out.ce = losses::cross_entropy_loss(student_logits, labels);
    out.total = lambda2 * out.kl + (1.0 - lambda2) * out.ce;
    return out;
}

}  // namespace triplet::losses
