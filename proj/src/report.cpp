#include "triplet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "triplet/errors.hpp"

namespace triplet {

Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.n = values.size();
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

std::string format_percent(const Summary& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * s.mean, 100.0 * s.std);
    return buf;
}

Summary StrategyReport::balanced_accuracy() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.balanced_accuracy);
    return summarize(v);
}

Summary StrategyReport::macro_f1() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.macro_f1);
    return summarize(v);
}

std::optional<Summary> StrategyReport::holdout_accuracy() const {
    if (holdout.empty()) return std::nullopt;
    std::vector<double> v;
    for (const auto& h : holdout) v.push_back(h.balanced_accuracy);
    return summarize(v);
}

std::vector<double> StrategyReport::pooled_tpr() const {
    if (folds.empty()) return {};
    ConfusionMatrix pooled(folds.front().confusion.k);
    pooled.class_names = folds.front().confusion.class_names;
    for (const auto& f : folds) pooled += f.confusion;
    return true_positive_rates(pooled);
}

nlohmann::json StrategyReport::to_json() const {
    nlohmann::json j;
    j["strategy"] = strategy;
    j["folds"] = nlohmann::json::array();
    for (const auto& f : folds) j["folds"].push_back(f.to_json());
    j["holdout"] = nlohmann::json::array();
    for (const auto& h : holdout) j["holdout"].push_back(h.to_json());
    const auto b = balanced_accuracy();
    const auto f1 = macro_f1();
    j["summary"] = {{"balanced_accuracy_mean", b.mean}, {"balanced_accuracy_std", b.std},
                    {"macro_f1_mean", f1.mean},         {"macro_f1_std", f1.std},
                    {"pooled_tpr", pooled_tpr()}};
    if (const auto h = holdout_accuracy()) {
        j["summary"]["holdout_balanced_accuracy_mean"] = h->mean;
        j["summary"]["holdout_balanced_accuracy_std"] = h->std;
    }
    return j;
}

StrategyReport StrategyReport::from_json(const nlohmann::json& j) {
    StrategyReport r;
    r.strategy = j.at("strategy").get<std::string>();
    for (const auto& f : j.at("folds")) r.folds.push_back(MetricReport::from_json(f));
    if (j.contains("holdout"))
        for (const auto& h : j.at("holdout")) r.holdout.push_back(MetricReport::from_json(h));
    return r;
}

namespace {

// Display width, counting the multi-byte "±" as one column.
std::size_t width(const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++w;
    return w;
}

std::string pad(const std::string& s, std::size_t w, bool left) {
    const std::string fill(w > width(s) ? w - width(s) : 0, ' ');
    return left ? s + fill : fill + s;
}

}  // namespace

std::string report_table(const std::vector<StrategyReport>& reports) {
    if (reports.empty()) throw EvaluationError("evaluation error: report_table needs at least one strategy");
    std::vector<std::string> header{"Strategy", "BAcc_T", "TPR_CN", "TPR_AD", "TPR_FTD", "F1_T", "BAcc_D"};
    std::vector<std::vector<std::string>> rows;
    char buf[32];
    for (const auto& r : reports) {
        std::vector<std::string> row{r.strategy, format_percent(r.balanced_accuracy())};
        auto tpr = r.pooled_tpr();
        tpr.resize(3, std::nan(""));
        for (double t : tpr) {
            if (std::isnan(t)) row.emplace_back("-");
            else {
                std::snprintf(buf, sizeof buf, "%.2f", 100.0 * t);
                row.emplace_back(buf);
            }
        }
        row.push_back(format_percent(r.macro_f1()));
        const auto h = r.holdout_accuracy();
        row.push_back(h ? format_percent(*h) : "-");
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> w(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        w[c] = width(header[c]);
        for (const auto& row : rows) w[c] = std::max(w[c], width(row[c]));
    }
    std::ostringstream o;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c) o << "  ";
            o << pad(cells[c], w[c], c == 0);
        }
        o << '\n';
    };
    line(header);
    std::size_t total = 0;
    for (auto x : w) total += x;
    o << std::string(total + 2 * (w.size() - 1), '-') << '\n';
    for (const auto& row : rows) line(row);
    return o.str();
}

}  // namespace triplet
