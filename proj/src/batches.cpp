#include "triplet/batches.hpp"

#include <algorithm>
#include <cstring>
#include <thread>

#include "triplet/errors.hpp"
#include "triplet/rng.hpp"

namespace triplet {

torch::Tensor to_tensor(const std::vector<const Volume*>& volumes) {
    if (volumes.empty()) return torch::empty({0, 1, 0, 0, 0});
    const Shape3 s = volumes.front()->shape;
    auto t = torch::empty({static_cast<std::int64_t>(volumes.size()), 1, s[0], s[1], s[2]}, torch::kFloat32);
    float* dst = t.data_ptr<float>();
    const auto per = static_cast<std::size_t>(s[0] * s[1] * s[2]);
    for (std::size_t b = 0; b < volumes.size(); ++b) {
        if (volumes[b]->shape != s) throw ShapeError("to_tensor: volumes in a batch must share one shape");
        std::memcpy(dst + b * per, volumes[b]->voxels.data(), per * sizeof(float));
    }
    return t;
}

BatchStream::BatchStream(const VolumeStore& store, std::int64_t batch_size, std::uint64_t seed, bool drop_last,
                         const augment::Pipeline* pipeline, int workers)
    : store_(&store), batch_size_(batch_size), seed_(seed), drop_last_(drop_last), pipeline_(pipeline),
      workers_(std::max(1, workers)) {
    if (store.size() == 0) throw IterationError("iteration error: cannot iterate over an empty dataset");
    if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
    const auto n = static_cast<std::int64_t>(store.size());
    per_epoch_ = drop_last ? n / batch_size : (n + batch_size - 1) / batch_size;
    if (per_epoch_ == 0)
        throw IterationError("iteration error: " + std::to_string(n) + " samples cannot fill one batch of " +
                             std::to_string(batch_size) + " with drop_last");
}

std::vector<std::size_t> BatchStream::epoch_order(std::int64_t epoch) const {
    std::vector<std::size_t> order(store_->size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = make_rng(seed_, {0xba7c, static_cast<std::uint64_t>(epoch)});
    shuffle(order.begin(), order.end(), rng);
    return order;
}

std::vector<std::size_t> BatchStream::indices_at(std::int64_t step) const {
    const std::int64_t epoch = step / per_epoch_;
    const std::int64_t pos = step % per_epoch_;
    const auto order = epoch_order(epoch);
    const auto begin = static_cast<std::size_t>(pos * batch_size_);
    const auto end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size_));
    return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::vector<Volume> BatchStream::augment_all(const std::vector<std::size_t>& idx, std::int64_t step, int view) const {
    std::vector<Volume> out(idx.size());
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t s = lo; s < hi; ++s) {
            const Volume& v = (*store_)[idx[s]].volume;
            if (!pipeline_) {
                out[s] = v;
                continue;
            }
            Rng rng = make_rng(seed_, {0xa06, static_cast<std::uint64_t>(step), s, static_cast<std::uint64_t>(view)});
            out[s] = pipeline_->apply(v, rng);
        }
    };
    const auto w = std::min<std::size_t>(static_cast<std::size_t>(workers_), idx.size());
    if (w <= 1) {
        work(0, idx.size());
        return out;
    }
    std::vector<std::thread> threads;
    const std::size_t chunk = (idx.size() + w - 1) / w;
    for (std::size_t t = 0; t < w; ++t)
        threads.emplace_back(work, t * chunk, std::min(idx.size(), (t + 1) * chunk));
    for (auto& t : threads) t.join();
    return out;
}

namespace {

torch::Tensor stack(const std::vector<Volume>& vols) {
    std::vector<const Volume*> ptrs;
    for (const auto& v : vols) ptrs.push_back(&v);
    return to_tensor(ptrs);
}

}  // namespace

Batch BatchStream::at(std::int64_t step) const {
    Batch b;
    b.indices = indices_at(step);
    b.epoch = step / per_epoch_;
    b.volumes = stack(augment_all(b.indices, step, 0));
    bool labeled = true;
    std::vector<std::int64_t> labels;
    for (auto i : b.indices) {
        const auto& l = (*store_)[i].label;
        if (!l) labeled = false;
        else labels.push_back(*l);
    }
    if (labeled) b.labels = torch::tensor(labels, torch::kInt64);
    return b;
}

PairedBatch BatchStream::paired_at(std::int64_t step) const {
    PairedBatch b;
    b.indices = indices_at(step);
    b.epoch = step / per_epoch_;
    b.view_a = stack(augment_all(b.indices, step, 1));
    b.view_b = stack(augment_all(b.indices, step, 2));
    return b;
}

std::vector<Batch> BatchStream::epoch(std::int64_t e) const {
    std::vector<Batch> out;
    for (std::int64_t p = 0; p < per_epoch_; ++p) out.push_back(at(e * per_epoch_ + p));
    return out;
}

torch::Tensor store_tensor(const VolumeStore& store, const std::vector<std::size_t>& indices) {
    std::vector<Volume> vols;
    vols.reserve(indices.size());
    for (auto i : indices) {
        Volume v = store[i].volume;
        rescale_intensity(v);
        vols.push_back(std::move(v));
    }
    return stack(vols);
}

}  // namespace triplet
