#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "triplet/metrics.hpp"

namespace triplet {

struct Summary {
    double mean = 0.0;
    // Sample standard deviation (n - 1); 0 for a single value.
    double std = 0.0;
    std::size_t n = 0;
};

Summary summarize(const std::vector<double>& values);

/// "70.00 ± 0.00" from fractions, printed as percentages.
std::string format_percent(const Summary& s);

struct StrategyReport {
    std::string strategy;
    // Test-split reports, one per (seed, fold).
    std::vector<MetricReport> folds;
    // Task-data holdout reports, when the strategy trains on role D.
    std::vector<MetricReport> holdout;

    Summary balanced_accuracy() const;
    Summary macro_f1() const;
    std::optional<Summary> holdout_accuracy() const;
    /// Per-class TPRs of the confusion matrices pooled over folds.
    std::vector<double> pooled_tpr() const;

    nlohmann::json to_json() const;
    static StrategyReport from_json(const nlohmann::json& j);
};

/// Aligned text table: one row per strategy with BAcc_T, per-class TPR,
/// F1_T and BAcc_D columns.
std::string report_table(const std::vector<StrategyReport>& reports);

}  // namespace triplet
