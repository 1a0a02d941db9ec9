#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "triplet/volume.hpp"

namespace triplet {

/// U: task-unrelated unlabeled, D: task-related labeled, T: target.
enum class DatasetRole { U, D, T };

std::string to_string(DatasetRole r);
std::optional<DatasetRole> parse_role(std::string_view s);

inline constexpr std::int64_t kNumDiagnoses = 3;
inline constexpr const char* kClassNames[] = {"CN", "AD", "FTD"};

/// Accepts class names (CN, AD, FTD) or their integer codes 0..2.
std::optional<int> parse_label(std::string_view s);

struct ManifestRecord {
    std::string subject_id;
    std::filesystem::path path;
    DatasetRole role = DatasetRole::U;
    std::optional<int> label;
    std::optional<double> age;
    std::optional<std::string> sex;

    bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    std::string checksum;

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }
    const ManifestRecord& operator[](std::size_t i) const { return records[i]; }

    /// Recomputes `checksum` from the record contents.
    void seal();
    Manifest subset(const std::vector<std::size_t>& indices) const;
};

/// CSV with header `subject_id,path,role,label,age,sex`. Relative volume
/// paths resolve against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::string_view csv, const std::filesystem::path& base_dir = {});
void write_manifest(const Manifest& m, const std::filesystem::path& path);

/// Checks role/label consistency and uniqueness; throws ManifestError.
void validate_manifest(const Manifest& m);

struct VolumeSample {
    Volume volume;
    std::optional<int> label;
    std::optional<double> age;
    std::optional<std::string> sex;
    std::string subject_id;
    DatasetRole role = DatasetRole::U;
};

/// Manifest records with their volumes loaded and normalized to one shape,
/// kept in memory for batch iteration.
class VolumeStore {
public:
    VolumeStore() = default;
    static VolumeStore load(const Manifest& m, Shape3 input_shape);
    static VolumeStore from_samples(std::vector<VolumeSample> samples);

    std::size_t size() const noexcept { return samples_.size(); }
    const VolumeSample& operator[](std::size_t i) const { return samples_[i]; }
    const std::vector<VolumeSample>& samples() const noexcept { return samples_; }
    Shape3 shape() const noexcept { return shape_; }

    VolumeStore subset(const std::vector<std::size_t>& indices) const;
    std::vector<int> labels() const;

private:
    std::vector<VolumeSample> samples_;
    Shape3 shape_{0, 0, 0};
};

}  // namespace triplet
