#include "triplet/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/Dense>

#include "triplet/errors.hpp"
#include "triplet/rng.hpp"

namespace triplet {

std::optional<Reducer> parse_reducer(std::string_view name) {
    if (name == "umap") return Reducer::Umap;
    if (name == "pca") return Reducer::Pca;
    return std::nullopt;
}

namespace {

Eigen::MatrixXd to_eigen(const torch::Tensor& x) {
    const auto c = x.to(torch::kFloat64).contiguous();
    const auto n = c.size(0), d = c.size(1);
    Eigen::MatrixXd m(n, d);
    const double* p = c.data_ptr<double>();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) m(i, j) = p[i * d + j];
    return m;
}

Points2 pca(const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const auto d = cov.rows();
    Points2 out(static_cast<std::size_t>(x.rows()), {0.0, 0.0});
    for (int axis = 0; axis < 2 && axis < d; ++axis) {
        // Eigenvalues come in ascending order.
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - axis);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        const Eigen::VectorXd proj = centered * v;
        for (Eigen::Index i = 0; i < proj.size(); ++i) out[static_cast<std::size_t>(i)][axis] = proj(i);
    }
    return out;
}

}  // namespace

Points2 pca_2d(const torch::Tensor& x) { return pca(to_eigen(x)); }

Points2 umap_2d(const torch::Tensor& xt, std::uint64_t seed, const UmapOptions& opts) {
    const Eigen::MatrixXd x = to_eigen(xt);
    const auto n = static_cast<std::size_t>(x.rows());
    const auto k = static_cast<std::size_t>(std::min<std::int64_t>(opts.neighbors, static_cast<std::int64_t>(n) - 1));

    // Exact kNN from pairwise squared distances.
    const Eigen::VectorXd sq = x.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = (-2.0 * x * x.transpose()).colwise() + sq;
    d2.rowwise() += sq.transpose();

    std::map<std::pair<std::size_t, std::size_t>, double> directed;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k + 1), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              const double da = a == i ? -1.0 : d2(i, a), db = b == i ? -1.0 : d2(i, b);
                              return da < db || (da == db && a < b);
                          });
        std::vector<std::pair<std::size_t, double>> nn;
        for (std::size_t r = 1; r <= k; ++r) nn.emplace_back(order[r], std::sqrt(std::max(0.0, d2(i, order[r]))));
        const double rho = nn.empty() ? 0.0 : nn.front().second;
        // Bandwidth so that the fuzzy neighbor weights sum to log2(k).
        const double target = std::log2(static_cast<double>(std::max<std::size_t>(k, 2)));
        double lo = 0.0, hi = std::numeric_limits<double>::infinity(), sigma = 1.0;
        for (int it = 0; it < 64; ++it) {
            double s = 0.0;
            for (const auto& [j, dist] : nn) s += std::exp(-std::max(0.0, dist - rho) / sigma);
            if (std::abs(s - target) < 1e-5) break;
            if (s > target) {
                hi = sigma;
                sigma = (lo + hi) / 2.0;
            } else {
                lo = sigma;
                sigma = std::isinf(hi) ? sigma * 2.0 : (lo + hi) / 2.0;
            }
        }
        sigma = std::max(sigma, 1e-3 * rho + 1e-12);
        for (const auto& [j, dist] : nn) directed[{i, j}] = std::exp(-std::max(0.0, dist - rho) / sigma);
    }

    struct Edge {
        std::size_t i, j;
        double w;
    };
    std::vector<Edge> edges;
    for (const auto& [key, w] : directed) {
        const auto [i, j] = key;
        const auto rev = directed.find({j, i});
        const double wr = rev == directed.end() ? 0.0 : rev->second;
        if (rev != directed.end() && j < i) continue;
        edges.push_back({i, j, w + wr - w * wr});
    }

    Points2 y = pca(x);
    double scale = 0.0;
    for (const auto& p : y) scale = std::max({scale, std::abs(p[0]), std::abs(p[1])});
    for (auto& p : y)
        for (double& v : p) v = scale > 0.0 ? 10.0 * v / scale : 0.0;

    double wmax = 0.0;
    for (const auto& e : edges) wmax = std::max(wmax, e.w);
    std::vector<double> every(edges.size()), next(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        every[e] = edges[e].w > 0.0 ? wmax / edges[e].w : std::numeric_limits<double>::infinity();
        next[e] = every[e];
    }

    Rng rng = make_rng(seed, {0x0a9a});
    const double a = opts.a, b = opts.b;
    auto clip = [](double g) { return std::clamp(g, -4.0, 4.0); };
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const double alpha = 1.0 - static_cast<double>(epoch) / static_cast<double>(opts.epochs);
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (next[e] > static_cast<double>(epoch + 1)) continue;
            next[e] += every[e];
            auto& yi = y[edges[e].i];
            auto& yj = y[edges[e].j];
            double dist2 = (yi[0] - yj[0]) * (yi[0] - yj[0]) + (yi[1] - yj[1]) * (yi[1] - yj[1]);
            if (dist2 > 0.0) {
                const double coef = -2.0 * a * b * std::pow(dist2, b - 1.0) / (a * std::pow(dist2, b) + 1.0);
                for (int c = 0; c < 2; ++c) {
                    const double g = clip(coef * (yi[c] - yj[c]));
                    yi[c] += g * alpha;
                    yj[c] -= g * alpha;
                }
            }
            for (int s = 0; s < opts.negative_samples; ++s) {
                const auto kk = static_cast<std::size_t>(uniform_index(rng, n));
                if (kk == edges[e].i) continue;
                const auto& yk = y[kk];
                dist2 = (yi[0] - yk[0]) * (yi[0] - yk[0]) + (yi[1] - yk[1]) * (yi[1] - yk[1]);
                if (dist2 <= 0.0) continue;
                const double coef = 2.0 * b / ((0.001 + dist2) * (a * std::pow(dist2, b) + 1.0));
                for (int c = 0; c < 2; ++c) yi[c] += clip(coef * (yi[c] - yk[c])) * alpha;
            }
        }
    }
    return y;
}

Points2 embed_latents_2d(const torch::Tensor& x, Reducer reducer, std::uint64_t seed) {
    if (x.dim() != 2 || x.size(0) < 10)
        throw EvaluationError("evaluation error: a 2-D embedding needs at least 10 rows, got " +
                              std::to_string(x.dim() == 2 ? x.size(0) : 0));
    if (!torch::isfinite(x).all().item<bool>()) throw NumericError("numeric error: non-finite latents");
    return reducer == Reducer::Pca ? pca_2d(x) : umap_2d(x, seed);
}

double silhouette_score(const Points2& p, const std::vector<int>& labels) {
    if (p.size() != labels.size()) throw EvaluationError("evaluation error: silhouette needs one label per point");
    std::map<int, std::size_t> sizes;
    for (int l : labels) ++sizes[l];
    if (sizes.size() < 2) throw EvaluationError("evaluation error: silhouette needs at least two clusters");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        std::map<int, double> sum;
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (i == j) continue;
            sum[labels[j]] += std::hypot(p[i][0] - p[j][0], p[i][1] - p[j][1]);
        }
        if (sizes[labels[i]] == 1) continue;
        const double a = sum[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [l, s] : sizes)
            if (l != labels[i]) b = std::min(b, sum[l] / static_cast<double>(s));
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(p.size());
}

Rgb point_color(DatasetRole role, std::optional<int> label) {
    switch (role) {
        case DatasetRole::U: return {128, 0, 160};
        case DatasetRole::D:
            if (label == 0) return {0, 0, 139};
            if (label == 1) return {200, 0, 0};
            if (label == 2) return {64, 64, 64};
            break;
        case DatasetRole::T:
            if (label == 0) return {135, 206, 250};
            if (label == 1) return {255, 165, 0};
            if (label == 2) return {192, 192, 192};
            break;
    }
    return {0, 0, 0};
}

}  // namespace triplet
