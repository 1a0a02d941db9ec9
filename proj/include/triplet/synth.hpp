#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "triplet/config.hpp"
#include "triplet/manifest.hpp"
#include "triplet/volume.hpp"

namespace triplet::synth {

// Synthetic gray-matter density phantoms standing in for the clinical
// datasets. Coordinates are normalized to [-1, 1] per axis: axis 0 runs
// left-right, axis 1 posterior-anterior, axis 2 inferior-superior.

struct Blob {
    std::array<double, 3> center;
    double sigma;
};

/// Bilateral medial-posterior blobs attenuated for class 1 (AD).
const std::vector<Blob>& posterior_region();
/// Bilateral frontal blobs attenuated for class 2 (FTD).
const std::vector<Blob>& frontal_region();

struct Subject {
    std::string subject_id;
    DatasetRole role = DatasetRole::U;
    // Generative class; hidden (not written to the manifest) for role U.
    int diagnosis = 0;
    double severity = 0.0;
    double age = 0.0;
    std::string sex;
    std::uint64_t seed = 0;
};

/// Draws the subject roster for one role. Labeled roles get class counts
/// apportioned from `class_proportions`; role U mixes mostly healthy
/// subjects with a minority of mildly affected ones.
std::vector<Subject> plan_subjects(const SyntheticSpec& spec, DatasetRole role, std::int64_t count,
                                   std::uint64_t seed);

/// Renders one subject at `spec.volume_shape`. Deterministic in `s.seed`.
Volume render(const Subject& s, const SyntheticSpec& spec);

struct Dataset {
    Manifest unlabeled;
    Manifest task;
    Manifest target;
    std::filesystem::path directory;
};

/// Writes `{out}/volumes/{role}/{id}.raw` (+ JSON sidecars) and
/// `{out}/manifest_{U,D,T}.csv`. Throws ConfigError when role T is too
/// small to give every fold every class.
Dataset generate(const SyntheticSpec& spec, std::int64_t folds, std::uint64_t seed, const std::filesystem::path& out);

}  // namespace triplet::synth
