#include "triplet/synth.hpp"

#include <algorithm>
#include <cmath>

#include "triplet/errors.hpp"
#include "triplet/rng.hpp"
#include "triplet/runlog.hpp"

namespace triplet::synth {

const std::vector<Blob>& posterior_region() {
    static const std::vector<Blob> r{{{-0.28, -0.40, -0.15}, 0.20}, {{0.28, -0.40, -0.15}, 0.20}};
    return r;
}

const std::vector<Blob>& frontal_region() {
    static const std::vector<Blob> r{{{-0.25, 0.58, 0.12}, 0.22}, {{0.25, 0.58, 0.12}, 0.22}};
    return r;
}

namespace {

double blob_weight(const std::vector<Blob>& region, double x, double y, double z) {
    double w = 0.0;
    for (const auto& b : region) {
        const double dx = x - b.center[0], dy = y - b.center[1], dz = z - b.center[2];
        w = std::max(w, std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * b.sigma * b.sigma)));
    }
    return w;
}

std::uint64_t role_tag(DatasetRole r) { return static_cast<std::uint64_t>(r) + 1; }

}  // namespace

std::vector<Subject> plan_subjects(const SyntheticSpec& spec, DatasetRole role, std::int64_t count, std::uint64_t seed) {
    std::vector<Subject> out;
    if (count <= 0) return out;
    Rng rng = make_rng(seed, {0x5147, role_tag(role)});
    const auto n = static_cast<std::size_t>(count);

    std::vector<int> classes;
    if (role == DatasetRole::U) {
        for (std::size_t i = 0; i < n; ++i) {
            const double u = uniform(rng, 0.0, 1.0);
            const double rest = 1.0 - spec.unlabeled_healthy_fraction;
            classes.push_back(u < spec.unlabeled_healthy_fraction ? 0 : (u < spec.unlabeled_healthy_fraction + rest / 2 ? 1 : 2));
        }
    } else {
        const double psum = spec.class_proportions[0] + spec.class_proportions[1] + spec.class_proportions[2];
        std::array<std::size_t, 3> counts{};
        std::size_t used = 0;
        std::array<std::pair<double, int>, 3> rema{};
        for (int c = 0; c < 3; ++c) {
            const double quota = spec.class_proportions[c] / psum * static_cast<double>(n);
            counts[c] = static_cast<std::size_t>(std::floor(quota));
            used += counts[c];
            rema[c] = {quota - std::floor(quota), c};
        }
        std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
        for (std::size_t r = 0; used < n; ++r, ++used) ++counts[rema[r % 3].second];
        for (int c = 0; c < 3; ++c) classes.insert(classes.end(), counts[c], c);
        shuffle(classes.begin(), classes.end(), rng);
    }

    const char prefix = to_string(role)[0];
    for (std::size_t i = 0; i < n; ++i) {
        Subject s;
        char id[32];
        std::snprintf(id, sizeof id, "%c%05zu", prefix, i);
        s.subject_id = id;
        s.role = role;
        s.diagnosis = classes[i];
        s.sex = bernoulli(rng, 0.5) ? "F" : "M";
        if (role == DatasetRole::U) {
            s.age = uniform(rng, 45.0, 80.0);
            // Unlabeled affected subjects are mild, early-stage cases.
            s.severity = s.diagnosis == 0 ? uniform(rng, 0.0, 0.05) : uniform(rng, 0.05, spec.severity[1]);
        } else {
            static constexpr double kMeanAge[3] = {70.0, 73.0, 65.0};
            s.age = std::clamp(kMeanAge[s.diagnosis] + 7.0 * normal(rng), 45.0, 95.0);
            const auto& range = role == DatasetRole::T ? spec.target_severity : spec.severity;
            s.severity = s.diagnosis == 0 ? uniform(rng, 0.0, 0.05) : uniform(rng, range[0], range[1]);
        }
        s.seed = derive_seed(seed, {0x5147, role_tag(role), i, 7});
        out.push_back(std::move(s));
    }
    return out;
}

Volume render(const Subject& s, const SyntheticSpec& spec) {
    Rng rng(s.seed);
    const Shape3 shape = spec.volume_shape;
    Volume v(shape);
    v.spacing = {55.0 * 3.0 / static_cast<double>(shape[0]), 55.0 * 3.0 / static_cast<double>(shape[1]),
                 55.0 * 3.0 / static_cast<double>(shape[2])};

    const double size_scale = s.sex == "M" ? 1.03 : 1.0;
    std::array<double, 3> radius{0.78, 0.88, 0.74}, center{};
    for (int a = 0; a < 3; ++a) {
        radius[a] *= size_scale * (1.0 + 0.015 * normal(rng));
        center[a] = 0.015 * normal(rng);
    }
    // Global atrophy grows with age; cortex thins everywhere.
    const double global = std::clamp(1.0 - 0.006 * (s.age - 60.0) * (1.0 + 0.3 * normal(rng)), 0.7, 1.08);

    struct Bump {
        std::array<double, 3> c;
        double amp, sigma;
    };
    std::vector<Bump> bumps(6);
    for (auto& b : bumps) {
        for (int a = 0; a < 3; ++a) b.c[a] = uniform(rng, -0.6, 0.6);
        b.amp = 0.03 * normal(rng);
        b.sigma = uniform(rng, 0.2, 0.35);
    }

    // Diseased subjects lose density in their class region; everyone gets a
    // little normal variation in both regions.
    const double posterior = s.diagnosis == 1 ? s.severity : uniform(rng, 0.0, 0.05);
    const double frontal = s.diagnosis == 2 ? s.severity : uniform(rng, 0.0, 0.05);

    const bool target = s.role == DatasetRole::T;
    const double gamma = target ? 1.0 + 0.35 * spec.shift : 1.0;
    const double gain = target ? 1.0 - 0.10 * spec.shift : 1.0;
    const double offset = target ? 0.05 * spec.shift : 0.0;
    const double sigma = spec.noise * (target ? 1.0 + 0.5 * spec.shift : 1.0);

    for (std::int64_t i = 0; i < shape[0]; ++i) {
        const double x = shape[0] > 1 ? -1.0 + 2.0 * i / static_cast<double>(shape[0] - 1) : 0.0;
        for (std::int64_t j = 0; j < shape[1]; ++j) {
            const double y = shape[1] > 1 ? -1.0 + 2.0 * j / static_cast<double>(shape[1] - 1) : 0.0;
            for (std::int64_t k = 0; k < shape[2]; ++k) {
                const double z = shape[2] > 1 ? -1.0 + 2.0 * k / static_cast<double>(shape[2] - 1) : 0.0;
                const double ex = (x - center[0]) / radius[0], ey = (y - center[1]) / radius[1],
                             ez = (z - center[2]) / radius[2];
                const double rho = std::sqrt(ex * ex + ey * ey + ez * ez);
                const double mask = 1.0 / (1.0 + std::exp(-(1.0 - rho) / 0.04));
                const double cortex = std::exp(-std::pow((rho - 0.80) / 0.11, 2.0));
                double nuclei = 0.0;
                for (double side : {-0.2, 0.2}) {
                    const double dx = x - side, dz = z + 0.05;
                    nuclei += 0.4 * std::exp(-(dx * dx + y * y + dz * dz) / (2.0 * 0.12 * 0.12));
                }
                double texture = 0.0;
                for (const auto& b : bumps) {
                    const double dx = x - b.c[0], dy = y - b.c[1], dz = z - b.c[2];
                    texture += b.amp * std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * b.sigma * b.sigma));
                }
                double density = (0.75 * cortex * global + 0.25 + nuclei + texture) * mask;
                density *= 1.0 - posterior * blob_weight(posterior_region(), x, y, z);
                density *= 1.0 - frontal * blob_weight(frontal_region(), x, y, z);
                density = std::max(density, 0.0);
                density = gain * std::pow(density, gamma) + offset * mask;
                density += sigma * normal(rng);
                v.at(i, j, k) = static_cast<float>(density);
            }
        }
    }
    return v;
}

Dataset generate(const SyntheticSpec& spec, std::int64_t folds, std::uint64_t seed, const std::filesystem::path& out) {
    const std::int64_t min_target = folds * kNumDiagnoses;
    if (spec.n_target < min_target)
        throw ConfigError("synthetic.n_target", "role T needs at least folds * classes = " + std::to_string(min_target) +
                                                    " subjects, got " + std::to_string(spec.n_target));

    Dataset ds;
    ds.directory = out;
    std::filesystem::create_directories(out);
    auto build = [&](DatasetRole role, std::int64_t count, Manifest& m) {
        const auto dir = out / "volumes" / to_string(role);
        std::filesystem::create_directories(dir);
        for (const auto& s : plan_subjects(spec, role, count, seed)) {
            const auto path = dir / (s.subject_id + ".raw");
            write_raw(render(s, spec), path);
            ManifestRecord r;
            r.subject_id = s.subject_id;
            r.path = path;
            r.role = role;
            if (role != DatasetRole::U) r.label = s.diagnosis;
            r.age = s.age;
            r.sex = s.sex;
            m.records.push_back(std::move(r));
        }
        m.seal();
        write_manifest(m, out / ("manifest_" + to_string(role) + ".csv"));
        log::emit(log::Level::Info, {{"msg", "synthetic role written"}, {"role", to_string(role)}, {"count", count}});
    };
    build(DatasetRole::U, spec.n_unlabeled, ds.unlabeled);
    build(DatasetRole::D, spec.n_task, ds.task);
    build(DatasetRole::T, spec.n_target, ds.target);
    return ds;
}

}  // namespace triplet::synth
