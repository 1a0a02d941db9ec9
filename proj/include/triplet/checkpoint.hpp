#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "triplet/backbone.hpp"
#include "triplet/config.hpp"

namespace triplet {

// Checkpoint file layout (little-endian):
//   8 bytes   magic "TRPLCKPT"
//   u32       format version
//   u64       header length N
//   N bytes   JSON header: stage, fingerprint, head, seed, meta, and a table
//             of tensors {name, dtype, shape, offset, nbytes}
//   ...       tensor payload, concatenated
//   u32       CRC-32 of header and payload

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline constexpr const char* kThetaInit = "theta_init";
inline constexpr const char* kThetaPrime = "theta_prime";
inline constexpr const char* kPsiInit = "psi_init";
inline constexpr const char* kPsiPrime = "psi_prime";
inline constexpr const char* kPsiFinal = "psi_final";

struct NamedTensor {
    std::string name;
    torch::Tensor value;
};

struct ModelWeights {
    std::string stage;
    std::string fingerprint;
    HeadKind head = HeadKind::Cls;
    std::uint64_t seed = 0;
    // Parameters and buffers of the model, in registration order.
    std::vector<NamedTensor> tensors;
    // Optimizer state and other resumable extras.
    std::vector<NamedTensor> extra;
    nlohmann::json meta = nlohmann::json::object();

    /// Content hash of `tensors` (names, shapes, bytes).
    std::string hash() const;
    const torch::Tensor* find(const std::string& name) const;
};

/// Deep copy of the model's current parameters and buffers.
ModelWeights snapshot(Model& m, std::string stage, std::uint64_t seed);

/// Copies weights into `m`. With `features_only` the head is left alone,
/// which is how an SSL checkpoint seeds a classifier. Throws
/// IncompatibilityError on fingerprint or tensor-shape mismatch.
void apply_weights(Model& m, const ModelWeights& w, bool features_only = false);

void save_weights(const ModelWeights& w, const std::filesystem::path& path);
/// Throws IntegrityError for truncated, corrupt or foreign files.
ModelWeights load_weights(const std::filesystem::path& path);
/// As above, and rejects checkpoints whose fingerprint differs from `cfg`.
ModelWeights load_weights(const std::filesystem::path& path, const ExperimentConfig& cfg);

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0);

}  // namespace triplet
