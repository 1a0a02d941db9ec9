#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace triplet {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::int64_t k = 0;
    std::vector<std::int64_t> counts;
    std::vector<std::string> class_names;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::int64_t classes);

    std::int64_t& at(std::int64_t t, std::int64_t p) { return counts[static_cast<std::size_t>(t * k + p)]; }
    std::int64_t at(std::int64_t t, std::int64_t p) const { return counts[static_cast<std::size_t>(t * k + p)]; }
    std::int64_t total() const;
    std::int64_t support(std::int64_t t) const;
    std::int64_t predicted(std::int64_t p) const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& o);
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Throws EvaluationError on length mismatch, LabelError on labels out of
/// 0..k-1.
ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted, std::int64_t k);

/// Per-class recall; NaN for classes without true samples.
std::vector<double> true_positive_rates(const ConfusionMatrix& cm);

/// Mean TPR over classes that have true samples. Classes without support
/// are excluded with a warning.
double balanced_accuracy(const ConfusionMatrix& cm);

/// Unweighted mean of per-class 2PR / (P + R); a class with P + R = 0
/// contributes 0.
double macro_f1(const ConfusionMatrix& cm);

struct MetricReport {
    double balanced_accuracy = 0.0;
    std::vector<double> tpr;
    double macro_f1 = 0.0;
    std::int64_t fold = -1;
    // "T" for a target test split, "D" for the task-data holdout.
    std::string dataset = "T";
    ConfusionMatrix confusion;

    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
};

MetricReport make_report(const ConfusionMatrix& cm, std::int64_t fold, std::string dataset);

}  // namespace triplet
