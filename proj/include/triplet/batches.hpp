#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "triplet/augment.hpp"
#include "triplet/manifest.hpp"

namespace triplet {

struct Batch {
    // B x 1 x D x H x W, float32.
    torch::Tensor volumes;
    // B int64 labels; undefined for unlabeled stores.
    torch::Tensor labels;
    std::vector<std::size_t> indices;
    std::int64_t epoch = 0;
};

struct PairedBatch {
    torch::Tensor view_a;
    torch::Tensor view_b;
    std::vector<std::size_t> indices;
    std::int64_t epoch = 0;
};

/// Stacks volumes into B x 1 x D x H x W. All shapes must agree.
torch::Tensor to_tensor(const std::vector<const Volume*>& volumes);

/// Seeded, epoch-shuffled batches over a VolumeStore, addressable by global
/// step so a resumed stage sees exactly the batches it would have seen.
/// Augmentation draws are keyed by (seed, step, slot), which keeps results
/// independent of the worker count.
class BatchStream {
public:
    BatchStream(const VolumeStore& store, std::int64_t batch_size, std::uint64_t seed, bool drop_last,
                const augment::Pipeline* pipeline = nullptr, int workers = 1);

    std::int64_t batch_size() const noexcept { return batch_size_; }
    std::int64_t batches_per_epoch() const noexcept { return per_epoch_; }

    std::vector<std::size_t> epoch_order(std::int64_t epoch) const;
    std::vector<std::size_t> indices_at(std::int64_t step) const;

    Batch at(std::int64_t step) const;
    /// Two independent augmented views per sample (SSL pipelines).
    PairedBatch paired_at(std::int64_t step) const;

    /// All batches of one epoch, in order.
    std::vector<Batch> epoch(std::int64_t e) const;

private:
    std::vector<Volume> augment_all(const std::vector<std::size_t>& idx, std::int64_t step, int view) const;

    const VolumeStore* store_;
    std::int64_t batch_size_;
    std::uint64_t seed_;
    bool drop_last_;
    const augment::Pipeline* pipeline_;
    int workers_;
    std::int64_t per_epoch_ = 0;
};

/// Unaugmented tensor of a whole store (evaluation input), after the
/// deterministic intensity rescale.
torch::Tensor store_tensor(const VolumeStore& store, const std::vector<std::size_t>& indices);

}  // namespace triplet
