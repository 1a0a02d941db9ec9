#include "triplet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "triplet/errors.hpp"

namespace triplet::augment {

std::string to_string(Stage s) {
    switch (s) {
        case Stage::Ssl: return "ssl";
        case Stage::Distill: return "distill";
        case Stage::Finetune: return "finetune";
        case Stage::Eval: return "eval";
    }
    return "eval";
}

Stage parse_stage(std::string_view name) {
    if (name == "ssl") return Stage::Ssl;
    if (name == "distill") return Stage::Distill;
    if (name == "finetune") return Stage::Finetune;
    if (name == "eval") return Stage::Eval;
    throw ConfigError("stage", "unknown augmentation stage '" + std::string(name) + "'");
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

std::string describe(const Transform& t) {
    std::ostringstream o;
    std::visit(Overloaded{
                   [&](const RescaleIntensity&) { o << "rescale_intensity(0, 1)"; },
                   [&](const RandomCropResize& c) {
                       o << "random_crop_resize(scale=(" << c.scale[0] << ", " << c.scale[1] << "), out=" << c.output[0]
                         << "x" << c.output[1] << "x" << c.output[2] << ", random_center=" << c.random_center << ")";
                   },
                   [&](const RandomFlip& f) {
                       o << "random_flip(axes=" << f.axes[0] << f.axes[1] << f.axes[2] << ", p=" << f.probability << ")";
                   },
                   [&](const RandomAffine& a) {
                       o << "random_affine(rotation=+-" << a.rotation_degrees << "deg, translation=+-("
                         << a.translation_voxels[0] << ", " << a.translation_voxels[1] << ", " << a.translation_voxels[2]
                         << "), p=" << a.probability << ")";
                   },
               },
               t);
    return o.str();
}

Volume flip(const Volume& v, int axis) {
    Volume r(v.shape);
    r.spacing = v.spacing;
    for (std::int64_t i = 0; i < v.shape[0]; ++i)
        for (std::int64_t j = 0; j < v.shape[1]; ++j)
            for (std::int64_t k = 0; k < v.shape[2]; ++k) {
                std::int64_t s[3] = {i, j, k};
                s[axis] = v.shape[axis] - 1 - s[axis];
                r.at(i, j, k) = v.at(s[0], s[1], s[2]);
            }
    return r;
}

Volume affine(const Volume& v, const std::array<double, 3>& angles, const std::array<double, 3>& shift,
              Interpolation interp) {
    // Forward map p' = R (p - c) + c + t; we pull back each output voxel
    // through R^T (p' - c - t) + c.
    const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
    const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
    const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
    const double rx[3][3] = {{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}};
    const double ry[3][3] = {{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}};
    const double rz[3][3] = {{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}};
    double tmp[3][3]{}, rot[3][3]{};
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) tmp[a][b] += ry[a][c] * rx[c][b];
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) rot[a][b] += rz[a][c] * tmp[c][b];

    const double center[3] = {(v.shape[0] - 1) / 2.0, (v.shape[1] - 1) / 2.0, (v.shape[2] - 1) / 2.0};
    Volume r(v.shape);
    r.spacing = v.spacing;
    for (std::int64_t i = 0; i < v.shape[0]; ++i)
        for (std::int64_t j = 0; j < v.shape[1]; ++j)
            for (std::int64_t k = 0; k < v.shape[2]; ++k) {
                const double d[3] = {i - center[0] - shift[0], j - center[1] - shift[1], k - center[2] - shift[2]};
                double src[3];
                for (int a = 0; a < 3; ++a)
                    src[a] = rot[0][a] * d[0] + rot[1][a] * d[1] + rot[2][a] * d[2] + center[a];
                if (interp == Interpolation::Nearest) {
                    const auto x = static_cast<std::int64_t>(std::llround(src[0]));
                    const auto y = static_cast<std::int64_t>(std::llround(src[1]));
                    const auto z = static_cast<std::int64_t>(std::llround(src[2]));
                    const bool inside = x >= 0 && x < v.shape[0] && y >= 0 && y < v.shape[1] && z >= 0 && z < v.shape[2];
                    r.at(i, j, k) = inside ? v.at(x, y, z) : 0.0f;
                } else {
                    r.at(i, j, k) = sample_trilinear(v, src[0], src[1], src[2]);
                }
            }
    return r;
}

Pipeline::Pipeline(Stage stage, std::vector<Transform> transforms, std::uint64_t seed)
    : stage_(stage), transforms_(std::move(transforms)), rng_(seed) {}

Volume Pipeline::apply(const Volume& v) { return apply(v, rng_); }

Volume Pipeline::apply(const Volume& input, Rng& rng) const {
    if (!input.all_finite()) throw NumericError("augment: input volume contains non-finite values");
    Volume v = input;
    for (const auto& t : transforms_) {
        std::visit(Overloaded{
                       [&](const RescaleIntensity&) { rescale_intensity(v); },
                       [&](const RandomCropResize& c) {
                           const double s = uniform(rng, c.scale[0], c.scale[1]);
                           const double side = std::cbrt(s);
                           std::array<double, 3> extent{}, origin{};
                           for (int a = 0; a < 3; ++a) {
                               extent[a] = side * static_cast<double>(v.shape[a]);
                               const double slack = static_cast<double>(v.shape[a]) - extent[a];
                               origin[a] = c.random_center ? uniform(rng, 0.0, slack) : slack / 2.0;
                           }
                           v = crop_resample(v, origin, extent, c.output);
                       },
                       [&](const RandomFlip& f) {
                           for (int a = 0; a < 3; ++a) {
                               const bool hit = bernoulli(rng, f.probability);
                               if (f.axes[a] && hit) v = flip(v, a);
                           }
                       },
                       [&](const RandomAffine& a) {
                           // Draws are consumed even when the transform is skipped so
                           // the stream position never depends on the coin flip.
                           const bool hit = bernoulli(rng, a.probability);
                           std::array<double, 3> angles{}, shift{};
                           const double rad = a.rotation_degrees * std::numbers::pi / 180.0;
                           for (int ax = 0; ax < 3; ++ax) angles[ax] = uniform(rng, -rad, rad);
                           for (int ax = 0; ax < 3; ++ax)
                               shift[ax] = uniform(rng, -a.translation_voxels[ax], a.translation_voxels[ax]);
                           if (hit) v = affine(v, angles, shift);
                       },
                   },
                   t);
    }
    for (float& x : v.voxels) x = std::clamp(x, 0.0f, 1.0f);
    return v;
}

std::pair<Volume, Volume> Pipeline::paired_views(const Volume& v) { return paired_views(v, rng_); }

std::pair<Volume, Volume> Pipeline::paired_views(const Volume& v, Rng& rng) const {
    Volume a = apply(v, rng);
    Volume b = apply(v, rng);
    return {std::move(a), std::move(b)};
}

Pipeline build_pipeline(Stage stage, const ExperimentConfig& cfg, std::uint64_t seed) {
    const auto& s = cfg.augment;
    std::array<double, 3> shift{};
    for (int a = 0; a < 3; ++a)
        shift[a] = s.translation_voxels * static_cast<double>(cfg.input_shape[a]) / s.reference_extent;

    std::vector<Transform> t{RescaleIntensity{}};
    switch (stage) {
        case Stage::Ssl:
            t.push_back(RandomCropResize{s.crop_scale, cfg.input_shape, true});
            t.push_back(RandomFlip{{true, true, true}, s.flip_probability});
            t.push_back(RandomAffine{s.ssl_rotation_degrees, shift, s.affine_probability});
            break;
        case Stage::Distill:
        case Stage::Finetune:
            t.push_back(RandomAffine{s.tuning_rotation_degrees, shift, s.affine_probability});
            break;
        case Stage::Eval:
            break;
    }
    return Pipeline(stage, std::move(t), seed);
}

}  // namespace triplet::augment
