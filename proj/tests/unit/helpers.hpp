#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "triplet/config.hpp"
#include "triplet/manifest.hpp"
#include "triplet/rng.hpp"
#include "triplet/synth.hpp"

namespace testutil {

// Scratch directory removed on scope exit.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path = std::filesystem::temp_directory_path() /
               ("triplet-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

// The smallest network the validator accepts; each stage runs a few steps.
inline triplet::ExperimentConfig tiny_config() {
    auto c = triplet::desk_profile();
    c.input_shape = {8, 8, 8};
    c.base_channels = 2;
    c.latent_dim = 8;
    c.projection_dim = 16;
    for (auto* hp : {&c.ssl, &c.distill, &c.finetune, &c.supervised, &c.supervised_pretrain}) {
        hp->iterations = 6;
        hp->batch_size = 4;
    }
    c.eval_interval = 2;
    c.synthetic.volume_shape = {16, 16, 16};
    c.synthetic.n_unlabeled = 24;
    c.synthetic.n_task = 30;
    c.synthetic.n_target = 30;
    return c;
}

// Rendered, normalized phantoms of one role, kept in memory.
inline triplet::VolumeStore phantom_store(const triplet::ExperimentConfig& cfg, triplet::DatasetRole role,
                                          std::int64_t n, std::uint64_t seed = 1) {
    std::vector<triplet::VolumeSample> samples;
    for (const auto& s : triplet::synth::plan_subjects(cfg.synthetic, role, n, seed)) {
        auto norm = triplet::normalize_volume(triplet::synth::render(s, cfg.synthetic), cfg.input_shape);
        triplet::VolumeSample v;
        v.volume = std::move(norm.volume);
        if (role != triplet::DatasetRole::U) v.label = s.diagnosis;
        v.age = s.age;
        v.sex = s.sex;
        v.subject_id = s.subject_id;
        v.role = role;
        samples.push_back(std::move(v));
    }
    return triplet::VolumeStore::from_samples(std::move(samples));
}

}  // namespace testutil
