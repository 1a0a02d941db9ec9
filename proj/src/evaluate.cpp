#include "triplet/evaluate.hpp"

#include <algorithm>
#include <numeric>

#include "triplet/batches.hpp"
#include "triplet/errors.hpp"
#include "triplet/rng.hpp"

namespace triplet {

torch::Tensor infer(Model& m, const torch::Tensor& volumes, bool projected, std::int64_t chunk) {
    torch::NoGradGuard ng;
    const bool was_training = m->is_training();
    m->eval();
    std::vector<torch::Tensor> parts;
    for (std::int64_t s = 0; s < volumes.size(0); s += chunk) {
        const auto x = volumes.slice(0, s, std::min(volumes.size(0), s + chunk));
        parts.push_back(projected ? forward_projected(m, x) : forward_features(m, x));
    }
    m->train(was_training);
    if (parts.empty()) return torch::empty({0, 0});
    return torch::cat(parts, 0);
}

std::vector<int> predict(Model& m, const torch::Tensor& volumes) {
    if (m->head_kind != HeadKind::Cls) throw EvaluationError("evaluation error: predict needs a classification head");
    const auto logits = infer(m, volumes, true);
    const auto arg = logits.argmax(1).to(torch::kInt64).contiguous();
    std::vector<int> out(static_cast<std::size_t>(arg.size(0)));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(arg[static_cast<std::int64_t>(i)].item<std::int64_t>());
    return out;
}

MetricReport evaluate(Model& m, const VolumeStore& store, const std::vector<std::size_t>& indices, std::int64_t fold,
                      std::string dataset) {
    if (indices.empty()) throw EvaluationError("evaluation error: empty split");
    std::vector<int> truth;
    for (auto i : indices) {
        if (!store[i].label) throw EvaluationError("evaluation error: sample " + store[i].subject_id + " has no label");
        truth.push_back(*store[i].label);
    }
    const auto pred = predict(m, store_tensor(store, indices));
    const auto k = m->head->out_dim;
    return make_report(confusion(truth, pred, k), fold, std::move(dataset));
}

MetricReport evaluate(Model& m, const VolumeStore& store, std::int64_t fold, std::string dataset) {
    std::vector<std::size_t> all(store.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return evaluate(m, store, all, fold, std::move(dataset));
}

std::vector<std::size_t> subsample(std::size_t n, std::size_t limit, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (n <= limit) return idx;
    Rng rng = make_rng(seed, {0x5ab5});
    shuffle(idx.begin(), idx.end(), rng);
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

LatentTable extract_latents(Model& m, const std::vector<const VolumeStore*>& stores, std::string stage) {
    LatentTable t;
    t.stage = std::move(stage);
    std::vector<torch::Tensor> parts;
    for (const auto* s : stores) {
        if (s->size() == 0) continue;
        std::vector<std::size_t> all(s->size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        parts.push_back(infer(m, store_tensor(*s, all), false).to(torch::kFloat64));
        for (const auto& x : s->samples()) {
            t.ids.push_back(x.subject_id);
            t.roles.push_back(x.role);
            t.labels.push_back(x.label);
        }
    }
    t.latents = parts.empty() ? torch::empty({0, 0}, torch::kFloat64) : torch::cat(parts, 0);
    return t;
}

std::vector<LatentTable> extract_latents(const std::vector<ModelWeights>& weights, const ExperimentConfig& cfg,
                                         const VolumeStore& unlabeled, const VolumeStore& task,
                                         const VolumeStore& target, std::uint64_t seed) {
    const auto u = unlabeled.subset(subsample(unlabeled.size(), kMaxUnlabeledPlotted, seed));
    std::vector<LatentTable> out;
    for (const auto& w : weights) {
        if (w.fingerprint != architecture_fingerprint(cfg))
            throw IncompatibilityError("incompatible checkpoint: stage " + w.stage + " does not match the config");
        Model m = init_model(cfg, w.head, 0);
        apply_weights(m, w);
        out.push_back(extract_latents(m, {&u, &task, &target}, w.stage));
    }
    return out;
}

}  // namespace triplet
