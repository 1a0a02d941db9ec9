#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "triplet/manifest.hpp"
#include "triplet/rng.hpp"

namespace triplet {

struct SplitDistribution {
    std::map<int, std::size_t> labels;
    std::map<std::string, std::size_t> sexes;
    std::map<int, std::size_t> age_bins;
};

struct StratificationReport {
    SplitDistribution train, validation, test;
    std::vector<std::string> merged_strata;
};

struct FoldSplit {
    std::int64_t fold = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
    StratificationReport report;
};

struct KFoldOptions {
    std::int64_t k = 5;
    std::array<double, 3> ratios{0.65, 0.15, 0.20};
};

/// Age terciles over the whole manifest: bin 0 below the first tercile, 2 at
/// or above the second.
std::vector<int> age_terciles(const std::vector<double>& ages);

/// k stratified train/validation/test splits over the records of `m`. The k
/// test sets are disjoint shards covering every record; the validation set
/// is drawn from the remainder with proportional allocation per stratum.
/// Strata are (age tercile, sex, label); strata with fewer than k records are
/// merged into a neighbouring age bin (then across sex) with a warning.
std::vector<FoldSplit> stratified_kfold(const Manifest& m, const KFoldOptions& opts, std::uint64_t seed);

struct HoldoutSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> holdout;
};

/// Label-balanced holdout: the holdout receives the same number of records
/// from each label (as close to `fraction` of the total as the smallest
/// class allows).
HoldoutSplit balanced_holdout(const std::vector<int>& labels, double fraction, std::int64_t num_classes,
                              std::uint64_t seed);

}  // namespace triplet
