#include "triplet/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "triplet/errors.hpp"
#include "triplet/runlog.hpp"

namespace triplet {

std::vector<int> age_terciles(const std::vector<double>& ages) {
    std::vector<int> bins(ages.size(), 0);
    if (ages.empty()) return bins;
    std::vector<double> sorted = ages;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    const double t1 = quantile(1.0 / 3.0), t2 = quantile(2.0 / 3.0);
    for (std::size_t i = 0; i < ages.size(); ++i) bins[i] = ages[i] < t1 ? 0 : (ages[i] < t2 ? 1 : 2);
    return bins;
}

namespace {

struct Stratum {
    int label = 0;
    std::string name;
    std::vector<std::size_t> members;
};

// Hamilton apportionment: integer counts summing to `total`, proportional to
// `weights`, each within one of its exact quota.
std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
    std::vector<std::size_t> out(weights.size(), 0);
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (weights.empty() || wsum <= 0.0 || total == 0) return out;
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double quota = weights[i] / wsum * static_cast<double>(total);
        out[i] = static_cast<std::size_t>(std::floor(quota));
        used += out[i];
        rema.emplace_back(quota - std::floor(quota), i);
    }
    std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; used < total && r < rema.size(); ++r, ++used) ++out[rema[r].second];
    return out;
}

std::vector<Stratum> build_strata(const Manifest& m, const std::vector<int>& age_bin, std::int64_t k,
                                  std::vector<std::string>& merged) {
    // label -> sex -> age bin -> members
    std::map<int, std::map<std::string, std::map<int, std::vector<std::size_t>>>> tree;
    for (std::size_t i = 0; i < m.size(); ++i) tree[*m[i].label][*m[i].sex][age_bin[i]].push_back(i);

    const auto kk = static_cast<std::size_t>(k);
    std::vector<Stratum> strata;
    for (auto& [label, by_sex] : tree) {
        std::vector<Stratum> label_strata;
        for (auto& [sex, by_age] : by_sex) {
            // Age bins as mergeable runs: (bins in run, members).
            std::vector<std::pair<std::vector<int>, std::vector<std::size_t>>> runs;
            for (auto& [bin, members] : by_age) runs.push_back({{bin}, members});
            while (runs.size() > 1) {
                std::size_t worst = runs.size();
                for (std::size_t r = 0; r < runs.size(); ++r)
                    if (runs[r].second.size() < kk && (worst == runs.size() || runs[r].second.size() < runs[worst].second.size()))
                        worst = r;
                if (worst == runs.size()) break;
                // Nearest neighbour in age; prefer the smaller one on ties.
                std::size_t into;
                if (worst == 0) into = 1;
                else if (worst + 1 == runs.size()) into = worst - 1;
                else into = runs[worst - 1].second.size() <= runs[worst + 1].second.size() ? worst - 1 : worst + 1;
                auto& dst = runs[into];
                dst.first.insert(dst.first.end(), runs[worst].first.begin(), runs[worst].first.end());
                dst.second.insert(dst.second.end(), runs[worst].second.begin(), runs[worst].second.end());
                std::sort(dst.first.begin(), dst.first.end());
                runs.erase(runs.begin() + static_cast<std::ptrdiff_t>(worst));
                merged.push_back("label " + std::to_string(label) + ", sex " + sex + ": merged age bins into a stratum of " +
                                 std::to_string(dst.second.size()));
            }
            for (auto& [bins, members] : runs) {
                std::string name = "label=" + std::to_string(label) + "/sex=" + sex + "/age=";
                for (int b : bins) name += std::to_string(b);
                label_strata.push_back({label, std::move(name), std::move(members)});
            }
        }
        // A sex group that is still too small is folded into the smallest
        // other stratum of the same label.
        bool changed = true;
        while (changed && label_strata.size() > 1) {
            changed = false;
            for (std::size_t s = 0; s < label_strata.size(); ++s) {
                if (label_strata[s].members.size() >= kk) continue;
                std::size_t into = label_strata.size();
                for (std::size_t o = 0; o < label_strata.size(); ++o)
                    if (o != s && (into == label_strata.size() || label_strata[o].members.size() < label_strata[into].members.size()))
                        into = o;
                auto& dst = label_strata[into];
                dst.members.insert(dst.members.end(), label_strata[s].members.begin(), label_strata[s].members.end());
                dst.name += "+" + label_strata[s].name;
                merged.push_back("label " + std::to_string(label) + ": merged " + label_strata[s].name + " across sex");
                label_strata.erase(label_strata.begin() + static_cast<std::ptrdiff_t>(s));
                changed = true;
                break;
            }
        }
        for (auto& s : label_strata) {
            std::sort(s.members.begin(), s.members.end());
            strata.push_back(std::move(s));
        }
    }
    return strata;
}

SplitDistribution describe(const Manifest& m, const std::vector<int>& age_bin, const std::vector<std::size_t>& idx) {
    SplitDistribution d;
    for (auto i : idx) {
        ++d.labels[*m[i].label];
        ++d.sexes[*m[i].sex];
        ++d.age_bins[age_bin[i]];
    }
    return d;
}

}  // namespace

std::vector<FoldSplit> stratified_kfold(const Manifest& m, const KFoldOptions& opts, std::uint64_t seed) {
    if (opts.k < 2) throw ConfigError("folds", "k must be >= 2, got " + std::to_string(opts.k));
    const double rsum = opts.ratios[0] + opts.ratios[1] + opts.ratios[2];
    if (!(opts.ratios[0] > 0 && opts.ratios[1] > 0 && opts.ratios[2] > 0) || std::abs(rsum - 1.0) > 1e-9)
        throw ConfigError("split_ratios", "ratios must be positive and sum to 1");
    for (std::size_t i = 0; i < m.size(); ++i)
        if (!m[i].label || !m[i].age || !m[i].sex)
            throw ManifestError("manifest error: row " + std::to_string(i + 2) + ": stratification needs label, age and sex");

    const std::size_t n = m.size();
    const auto k = static_cast<std::size_t>(opts.k);
    std::vector<double> ages(n);
    for (std::size_t i = 0; i < n; ++i) ages[i] = *m[i].age;
    const auto age_bin = age_terciles(ages);

    std::vector<std::string> merged;
    auto strata = build_strata(m, age_bin, opts.k, merged);
    for (const auto& w : merged) log::warn("stratified_kfold: " + w);

    Rng rng = make_rng(seed, {0x5eed, 1});
    for (auto& s : strata) shuffle(s.members.begin(), s.members.end(), rng);

    // Deal the label-major stratum order round-robin into k test shards; a
    // contiguous run of any stratum or label lands floor/ceil(n/k) per shard.
    std::vector<std::size_t> order;
    order.reserve(n);
    for (const auto& s : strata) order.insert(order.end(), s.members.begin(), s.members.end());
    const std::size_t offset = uniform_index(rng, k);
    std::vector<std::size_t> shard_of(n);
    for (std::size_t p = 0; p < order.size(); ++p) shard_of[order[p]] = (p + offset) % k;

    std::vector<FoldSplit> folds;
    for (std::size_t f = 0; f < k; ++f) {
        FoldSplit split;
        split.fold = static_cast<std::int64_t>(f);
        for (std::size_t i = 0; i < n; ++i)
            if (shard_of[i] == f) split.test.push_back(i);

        const std::size_t t = split.test.size();
        const std::size_t rest = n - t;
        // Validation size within one sample of both its own quota and the
        // quota implied for train.
        const double v_quota = opts.ratios[1] * static_cast<double>(n);
        const double v_from_train = static_cast<double>(rest) - opts.ratios[0] * static_cast<double>(n);
        std::size_t v = static_cast<std::size_t>(std::clamp(std::llround(0.5 * (v_quota + v_from_train)), 0LL,
                                                            static_cast<long long>(rest)));

        Rng fold_rng = make_rng(seed, {0x5eed, 2, f});
        std::vector<std::vector<std::size_t>> remaining(strata.size());
        std::map<int, std::vector<std::size_t>> strata_of_label;
        for (std::size_t s = 0; s < strata.size(); ++s) {
            for (auto i : strata[s].members)
                if (shard_of[i] != f) remaining[s].push_back(i);
            shuffle(remaining[s].begin(), remaining[s].end(), fold_rng);
            strata_of_label[strata[s].label].push_back(s);
        }

        std::vector<int> labels;
        std::vector<double> label_weights;
        for (const auto& [label, ss] : strata_of_label) {
            double c = 0;
            for (auto s : ss) c += static_cast<double>(remaining[s].size());
            labels.push_back(label);
            label_weights.push_back(c);
        }
        const auto per_label = apportion(label_weights, v);
        std::vector<char> in_val(n, 0);
        for (std::size_t li = 0; li < labels.size(); ++li) {
            const auto& ss = strata_of_label[labels[li]];
            std::vector<double> w;
            for (auto s : ss) w.push_back(static_cast<double>(remaining[s].size()));
            const auto per_stratum = apportion(w, per_label[li]);
            for (std::size_t j = 0; j < ss.size(); ++j)
                for (std::size_t c = 0; c < per_stratum[j] && c < remaining[ss[j]].size(); ++c) in_val[remaining[ss[j]][c]] = 1;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (shard_of[i] == f) continue;
            (in_val[i] ? split.validation : split.train).push_back(i);
        }
        split.report.train = describe(m, age_bin, split.train);
        split.report.validation = describe(m, age_bin, split.validation);
        split.report.test = describe(m, age_bin, split.test);
        split.report.merged_strata = merged;
        folds.push_back(std::move(split));
    }
    return folds;
}

HoldoutSplit balanced_holdout(const std::vector<int>& labels, double fraction, std::int64_t num_classes,
                              std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout_fraction", "must lie in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) throw LabelError("balanced_holdout: label out of range at index " + std::to_string(i));
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    std::size_t smallest = labels.size();
    for (const auto& c : by_class) smallest = std::min(smallest, c.size());
    const auto per_class = std::min(
        smallest, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(labels.size()) / static_cast<double>(num_classes))));

    Rng rng = make_rng(seed, {0x401d});
    std::vector<char> held(labels.size(), 0);
    for (auto& c : by_class) {
        shuffle(c.begin(), c.end(), rng);
        for (std::size_t j = 0; j < per_class; ++j) held[c[j]] = 1;
    }
    HoldoutSplit out;
    for (std::size_t i = 0; i < labels.size(); ++i) (held[i] ? out.holdout : out.train).push_back(i);
    return out;
}

}  // namespace triplet
