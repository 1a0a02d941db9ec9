#include "triplet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

#include "triplet/errors.hpp"

namespace triplet {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'P', 'L', 'C', 'K', 'P', 'T'};

std::string dtype_name(const torch::Tensor& t) {
    switch (t.scalar_type()) {
        case torch::kFloat32: return "float32";
        case torch::kFloat64: return "float64";
        case torch::kInt64: return "int64";
        default: throw IntegrityError("checkpoint: unsupported tensor dtype " + std::string(c10::toString(t.scalar_type())));
    }
}

torch::ScalarType parse_dtype(const std::string& s) {
    if (s == "float32") return torch::kFloat32;
    if (s == "float64") return torch::kFloat64;
    if (s == "int64") return torch::kInt64;
    throw IntegrityError("checkpoint: unknown dtype '" + s + "'");
}

void bytes_of(const torch::Tensor& t, std::string& out) {
    const auto c = t.detach().contiguous().cpu();
    out.append(static_cast<const char*>(c.data_ptr()), static_cast<std::size_t>(c.numel() * c.element_size()));
}

template <class T>
void put(std::string& s, T v) {
    s.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(const std::string& s, std::size_t& pos) {
    if (pos + sizeof(T) > s.size()) throw IntegrityError("checkpoint: file truncated");
    T v;
    std::memcpy(&v, s.data() + pos, sizeof v);
    pos += sizeof v;
    return v;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed) {
    uLong c = seed;
    const auto* p = static_cast<const Bytef*>(data);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = ::crc32(c, p, chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

std::string ModelWeights::hash() const {
    std::string bytes;
    for (const auto& t : tensors) {
        bytes += t.name;
        for (auto d : t.value.sizes()) bytes += ":" + std::to_string(d);
        bytes_of(t.value, bytes);
    }
    return fnv1a_hex(bytes);
}

const torch::Tensor* ModelWeights::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t.value;
    return nullptr;
}

ModelWeights snapshot(Model& m, std::string stage, std::uint64_t seed) {
    ModelWeights w;
    w.stage = std::move(stage);
    w.fingerprint = m->fingerprint;
    w.head = m->head_kind;
    w.seed = seed;
    for (const auto& p : m->named_parameters()) w.tensors.push_back({p.key(), p.value().detach().clone()});
    for (const auto& b : m->named_buffers()) w.tensors.push_back({b.key(), b.value().detach().clone()});
    return w;
}

void apply_weights(Model& m, const ModelWeights& w, bool features_only) {
    if (w.fingerprint != m->fingerprint)
        throw IncompatibilityError("incompatible checkpoint: fingerprint " + w.fingerprint + " does not match architecture " +
                                   m->fingerprint);
    const bool with_head = !features_only && w.head == m->head_kind;
    if (!features_only && w.head != m->head_kind)
        throw IncompatibilityError("incompatible checkpoint: head is " + to_string(w.head) + ", model expects " +
                                   to_string(m->head_kind));
    torch::NoGradGuard ng;
    auto copy = [&](const std::string& name, torch::Tensor& dst) {
        if (!with_head && name.rfind("head.", 0) == 0) return;
        const torch::Tensor* src = w.find(name);
        if (!src) throw IncompatibilityError("incompatible checkpoint: missing tensor '" + name + "'");
        if (src->sizes() != dst.sizes())
            throw IncompatibilityError("incompatible checkpoint: tensor '" + name + "' has a different shape");
        dst.copy_(*src);
    };
    for (auto& p : m->named_parameters()) copy(p.key(), p.value());
    for (auto& b : m->named_buffers()) copy(b.key(), b.value());
}

void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
    nlohmann::json header;
    header["stage"] = w.stage;
    header["fingerprint"] = w.fingerprint;
    header["head"] = to_string(w.head);
    header["seed"] = w.seed;
    header["meta"] = w.meta;
    std::string payload;
    auto table = [&](const std::vector<NamedTensor>& list) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& t : list) {
            const auto offset = payload.size();
            bytes_of(t.value, payload);
            arr.push_back({{"name", t.name},
                           {"dtype", dtype_name(t.value)},
                           {"shape", t.value.sizes().vec()},
                           {"offset", offset},
                           {"nbytes", payload.size() - offset}});
        }
        return arr;
    };
    header["tensors"] = table(w.tensors);
    header["extra"] = table(w.extra);
    const std::string h = header.dump();

    std::string body;
    body.append(kMagic, sizeof kMagic);
    put<std::uint32_t>(body, kCheckpointVersion);
    put<std::uint64_t>(body, h.size());
    body += h;
    body += payload;
    std::uint32_t crc = crc32(h.data(), h.size());
    crc = crc32(payload.data(), payload.size(), crc);
    put<std::uint32_t>(body, crc);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write-then-rename so an interrupted save never leaves a torn file.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IntegrityError("checkpoint: cannot write " + tmp.string());
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!out) throw IntegrityError("checkpoint: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

ModelWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IntegrityError("checkpoint: cannot open " + path.string());
    const std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (s.size() < sizeof kMagic || std::memcmp(s.data(), kMagic, sizeof kMagic) != 0)
        throw IntegrityError("checkpoint: " + path.string() + " is not a checkpoint (bad magic)");
    std::size_t pos = sizeof kMagic;
    const auto version = get<std::uint32_t>(s, pos);
    if (version != kCheckpointVersion)
        throw IntegrityError("checkpoint: unsupported format version " + std::to_string(version));
    const auto hlen = get<std::uint64_t>(s, pos);
    if (hlen > s.size() - pos || s.size() - pos - hlen < sizeof(std::uint32_t))
        throw IntegrityError("checkpoint: file truncated");
    const std::size_t payload_begin = pos + hlen;
    const std::size_t payload_len = s.size() - payload_begin - sizeof(std::uint32_t);
    std::size_t crc_pos = payload_begin + payload_len;
    const auto stored = get<std::uint32_t>(s, crc_pos);
    std::uint32_t crc = crc32(s.data() + pos, hlen);
    crc = crc32(s.data() + payload_begin, payload_len, crc);
    if (crc != stored) throw IntegrityError("checkpoint: CRC mismatch in " + path.string() + " (file corrupt)");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(s.substr(pos, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
    }
    ModelWeights w;
    try {
        w.stage = header.at("stage").get<std::string>();
        w.fingerprint = header.at("fingerprint").get<std::string>();
        w.head = header.at("head").get<std::string>() == "ssl" ? HeadKind::Ssl : HeadKind::Cls;
        w.seed = header.at("seed").get<std::uint64_t>();
        w.meta = header.value("meta", nlohmann::json::object());
        auto read_table = [&](const nlohmann::json& arr, std::vector<NamedTensor>& out) {
            for (const auto& e : arr) {
                const auto offset = e.at("offset").get<std::size_t>();
                const auto nbytes = e.at("nbytes").get<std::size_t>();
                if (offset + nbytes > payload_len) throw IntegrityError("checkpoint: tensor table out of range");
                const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
                auto t = torch::empty(shape, torch::TensorOptions().dtype(parse_dtype(e.at("dtype").get<std::string>())));
                if (static_cast<std::size_t>(t.numel() * t.element_size()) != nbytes)
                    throw IntegrityError("checkpoint: tensor size disagrees with its shape");
                std::memcpy(t.data_ptr(), s.data() + payload_begin + offset, nbytes);
                out.push_back({e.at("name").get<std::string>(), t});
            }
        };
        read_table(header.at("tensors"), w.tensors);
        read_table(header.value("extra", nlohmann::json::array()), w.extra);
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
    }
    return w;
}

ModelWeights load_weights(const std::filesystem::path& path, const ExperimentConfig& cfg) {
    auto w = load_weights(path);
    const auto expected = architecture_fingerprint(cfg);
    if (w.fingerprint != expected)
        throw IncompatibilityError("incompatible checkpoint: " + path.string() + " was written for architecture " +
                                   w.fingerprint + ", config expects " + expected);
    return w;
}

}  // namespace triplet
