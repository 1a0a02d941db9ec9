#include "triplet/metrics.hpp"

#include <cmath>
#include <limits>

#include "triplet/errors.hpp"
#include "triplet/manifest.hpp"
#include "triplet/runlog.hpp"

namespace triplet {

ConfusionMatrix::ConfusionMatrix(std::int64_t classes) : k(classes), counts(static_cast<std::size_t>(classes * classes), 0) {
    for (std::int64_t c = 0; c < classes; ++c)
        class_names.push_back(c < kNumDiagnoses ? kClassNames[c] : "class" + std::to_string(c));
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t n = 0;
    for (auto c : counts) n += c;
    return n;
}

std::int64_t ConfusionMatrix::support(std::int64_t t) const {
    std::int64_t n = 0;
    for (std::int64_t p = 0; p < k; ++p) n += at(t, p);
    return n;
}

std::int64_t ConfusionMatrix::predicted(std::int64_t p) const {
    std::int64_t n = 0;
    for (std::int64_t t = 0; t < k; ++t) n += at(t, p);
    return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
    if (o.k != k) throw EvaluationError("evaluation error: cannot add confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
}

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted, std::int64_t k) {
    if (truth.size() != predicted.size())
        throw EvaluationError("evaluation error: " + std::to_string(truth.size()) + " true labels vs " +
                              std::to_string(predicted.size()) + " predictions");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= k || predicted[i] < 0 || predicted[i] >= k)
            throw LabelError("label error: label out of range at index " + std::to_string(i));
        ++cm.at(truth[i], predicted[i]);
    }
    return cm;
}

std::vector<double> true_positive_rates(const ConfusionMatrix& cm) {
    std::vector<double> out;
    for (std::int64_t c = 0; c < cm.k; ++c) {
        const auto s = cm.support(c);
        out.push_back(s == 0 ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(cm.at(c, c)) / static_cast<double>(s));
    }
    return out;
}

double balanced_accuracy(const ConfusionMatrix& cm) {
    double sum = 0.0;
    std::int64_t used = 0;
    const auto tpr = true_positive_rates(cm);
    for (std::int64_t c = 0; c < cm.k; ++c) {
        if (std::isnan(tpr[c])) {
            log::warn("balanced_accuracy: class " + cm.class_names[c] + " has no true samples and is excluded");
            continue;
        }
        sum += tpr[c];
        ++used;
    }
    if (used == 0) throw EvaluationError("evaluation error: no class has true samples");
    return sum / static_cast<double>(used);
}

double macro_f1(const ConfusionMatrix& cm) {
    if (cm.k == 0) throw EvaluationError("evaluation error: empty confusion matrix");
    double sum = 0.0;
    for (std::int64_t c = 0; c < cm.k; ++c) {
        const auto tp = static_cast<double>(cm.at(c, c));
        const auto pred = cm.predicted(c);
        const auto sup = cm.support(c);
        const double precision = pred == 0 ? 0.0 : tp / static_cast<double>(pred);
        const double recall = sup == 0 ? 0.0 : tp / static_cast<double>(sup);
        sum += precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    }
    return sum / static_cast<double>(cm.k);
}

MetricReport make_report(const ConfusionMatrix& cm, std::int64_t fold, std::string dataset) {
    MetricReport r;
    r.balanced_accuracy = balanced_accuracy(cm);
    r.tpr = true_positive_rates(cm);
    r.macro_f1 = macro_f1(cm);
    r.fold = fold;
    r.dataset = std::move(dataset);
    r.confusion = cm;
    return r;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json tprs = nlohmann::json::object();
    for (std::size_t c = 0; c < tpr.size(); ++c) {
        const auto& name = confusion.class_names.at(c);
        if (std::isnan(tpr[c])) tprs[name] = nullptr;
        else tprs[name] = tpr[c];
    }
    nlohmann::json rows = nlohmann::json::array();
    for (std::int64_t t = 0; t < confusion.k; ++t) {
        std::vector<std::int64_t> row;
        for (std::int64_t p = 0; p < confusion.k; ++p) row.push_back(confusion.at(t, p));
        rows.push_back(row);
    }
    return {{"dataset", dataset},   {"fold", fold},     {"balanced_accuracy", balanced_accuracy},
            {"tpr", tprs},          {"macro_f1", macro_f1}, {"confusion", rows},
            {"classes", confusion.class_names}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    const auto rows = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
    ConfusionMatrix cm(static_cast<std::int64_t>(rows.size()));
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t p = 0; p < rows[t].size(); ++p) cm.at(static_cast<std::int64_t>(t), static_cast<std::int64_t>(p)) = rows[t][p];
    if (j.contains("classes")) cm.class_names = j.at("classes").get<std::vector<std::string>>();
    MetricReport r;
    r.balanced_accuracy = j.at("balanced_accuracy").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.fold = j.value("fold", std::int64_t{-1});
    r.dataset = j.value("dataset", std::string("T"));
    r.tpr = true_positive_rates(cm);
    r.confusion = cm;
    return r;
}

}  // namespace triplet
