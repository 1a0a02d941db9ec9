#include "triplet/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include <json.hpp>

#include "triplet/errors.hpp"

namespace triplet {

Volume::Volume(Shape3 s, float fill)
    : shape(s), voxels(static_cast<std::size_t>(s[0] * s[1] * s[2]), fill) {}

bool Volume::all_finite() const noexcept {
    return std::all_of(voxels.begin(), voxels.end(), [](float x) { return std::isfinite(x); });
}

float sample_trilinear(const Volume& v, double x, double y, double z) noexcept {
    const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
    const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy),
               z0 = static_cast<std::int64_t>(fz);
    const double tx = x - fx, ty = y - fy, tz = z - fz;
    double acc = 0.0;
    for (int dx = 0; dx < 2; ++dx) {
        const std::int64_t xi = x0 + dx;
        const double wx = dx ? tx : 1.0 - tx;
        if (wx == 0.0 || xi < 0 || xi >= v.shape[0]) continue;
        for (int dy = 0; dy < 2; ++dy) {
            const std::int64_t yi = y0 + dy;
            const double wy = dy ? ty : 1.0 - ty;
            if (wy == 0.0 || yi < 0 || yi >= v.shape[1]) continue;
            for (int dz = 0; dz < 2; ++dz) {
                const std::int64_t zi = z0 + dz;
                const double wz = dz ? tz : 1.0 - tz;
                if (wz == 0.0 || zi < 0 || zi >= v.shape[2]) continue;
                acc += wx * wy * wz * v.at(xi, yi, zi);
            }
        }
    }
    return static_cast<float>(acc);
}

bool rescale_intensity(Volume& v) noexcept {
    if (v.voxels.empty()) return false;
    const auto [lo_it, hi_it] = std::minmax_element(v.voxels.begin(), v.voxels.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) {
        std::fill(v.voxels.begin(), v.voxels.end(), 0.0f);
        return false;
    }
    const double inv = 1.0 / (hi - lo);
    for (float& x : v.voxels) x = static_cast<float>(std::clamp((x - lo) * inv, 0.0, 1.0));
    return true;
}

Volume crop_resample(const Volume& v, const std::array<double, 3>& origin, const std::array<double, 3>& extent,
                     Shape3 out) {
    Volume r(out);
    r.spacing = v.spacing;
    std::array<double, 3> step{};
    for (int a = 0; a < 3; ++a) {
        step[a] = out[a] > 1 ? (extent[a] - 1.0) / static_cast<double>(out[a] - 1) : 0.0;
        r.spacing[a] = v.spacing[a] * (out[a] > 1 ? step[a] : 1.0);
    }
    // Fast path: an integer-aligned box of the same size is a plain copy.
    bool copy = true;
    for (int a = 0; a < 3; ++a)
        copy = copy && step[a] == 1.0 && origin[a] == std::floor(origin[a]) && origin[a] >= 0 &&
               origin[a] + out[a] <= v.shape[a];
    for (std::int64_t i = 0; i < out[0]; ++i)
        for (std::int64_t j = 0; j < out[1]; ++j)
            for (std::int64_t k = 0; k < out[2]; ++k) {
                const double x = origin[0] + (out[0] > 1 ? i * step[0] : (extent[0] - 1.0) / 2.0);
                const double y = origin[1] + (out[1] > 1 ? j * step[1] : (extent[1] - 1.0) / 2.0);
                const double z = origin[2] + (out[2] > 1 ? k * step[2] : (extent[2] - 1.0) / 2.0);
                r.at(i, j, k) = copy ? v.at(static_cast<std::int64_t>(x), static_cast<std::int64_t>(y),
                                            static_cast<std::int64_t>(z))
                                     : sample_trilinear(v, x, y, z);
            }
    return r;
}

NormalizeResult normalize_volume(const Volume& raw, Shape3 target) {
    for (int a = 0; a < 3; ++a)
        if (raw.shape[a] < 8)
            throw ShapeError("normalize_volume: every dimension must be >= 8, got " + std::to_string(raw.shape[a]));
    if (!raw.all_finite()) throw NumericError("normalize_volume: volume contains non-finite values");

    Volume v = raw;
    NormalizeResult res;
    res.degenerate = !rescale_intensity(v);
    const std::int64_t side = std::min({v.shape[0], v.shape[1], v.shape[2]});
    std::array<double, 3> origin{}, extent{};
    for (int a = 0; a < 3; ++a) {
        origin[a] = static_cast<double>((v.shape[a] - side) / 2);
        extent[a] = static_cast<double>(side);
    }
    res.volume = crop_resample(v, origin, extent, target);
    // The crop can drop the extremes; rescaling once more makes the output
    // span [0, 1] exactly, which keeps the operation idempotent.
    if (!res.degenerate) rescale_intensity(res.volume);
    return res;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::vector<char> buf;
    if (ends_with(path.string(), ".gz")) {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (!f) throw IntegrityError("cannot open " + path.string());
        char chunk[1 << 16];
        int n;
        while ((n = gzread(f, chunk, sizeof chunk)) > 0) buf.insert(buf.end(), chunk, chunk + n);
        const bool bad = n < 0;
        gzclose(f);
        if (bad) throw IntegrityError("corrupt gzip stream in " + path.string());
        return buf;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IntegrityError("cannot open " + path.string());
    buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return buf;
}

void write_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (ends_with(path.string(), ".gz")) {
        gzFile f = gzopen(path.string().c_str(), "wb");
        if (!f) throw IntegrityError("cannot write " + path.string());
        const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        gzclose(f);
        if (n != static_cast<int>(bytes.size())) throw IntegrityError("short write to " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IntegrityError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IntegrityError("short write to " + path.string());
}

template <typename T>
T load(const std::vector<char>& b, std::size_t off) {
    T v;
    std::memcpy(&v, b.data() + off, sizeof(T));
    return v;
}

template <typename T>
void store(std::vector<char>& b, std::size_t off, T v) {
    std::memcpy(b.data() + off, &v, sizeof(T));
}

constexpr std::size_t kNiftiHeader = 348;
constexpr std::size_t kNiftiDataOffset = 352;

}  // namespace

Volume read_nifti(const std::filesystem::path& path) {
    const auto b = read_bytes(path);
    if (b.size() < kNiftiDataOffset) throw IntegrityError(path.string() + ": truncated NIfTI header");
    if (load<std::int32_t>(b, 0) != static_cast<std::int32_t>(kNiftiHeader))
        throw IntegrityError(path.string() + ": not a little-endian NIfTI-1 file");
    if (std::memcmp(b.data() + 344, "n+1", 4) != 0) throw IntegrityError(path.string() + ": expected single-file NIfTI (n+1)");

    const auto ndim = load<std::int16_t>(b, 40);
    if (ndim < 3) throw IntegrityError(path.string() + ": expected a 3D volume");
    for (int d = 4; d <= ndim; ++d)
        if (load<std::int16_t>(b, 40 + 2 * d) > 1) throw IntegrityError(path.string() + ": only single-volume files are supported");
    Shape3 shape{load<std::int16_t>(b, 42), load<std::int16_t>(b, 44), load<std::int16_t>(b, 46)};
    const auto datatype = load<std::int16_t>(b, 70);
    const auto offset = static_cast<std::size_t>(load<float>(b, 108));
    float slope = load<float>(b, 112), inter = load<float>(b, 116);
    if (slope == 0.0f) slope = 1.0f, inter = 0.0f;

    Volume v(shape);
    for (int a = 0; a < 3; ++a) v.spacing[a] = load<float>(b, 80 + 4 * a);
    const std::size_t n = v.numel();
    std::size_t width = 0;
    switch (datatype) {
        case 2: width = 1; break;
        case 4: width = 2; break;
        case 8: width = 4; break;
        case 16: width = 4; break;
        case 64: width = 8; break;
        default: throw IntegrityError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
    }
    if (b.size() < offset + n * width) throw IntegrityError(path.string() + ": truncated voxel data");

    // NIfTI stores x fastest; our (i, j, k) is (x, y, z) with k fastest.
    std::size_t e = 0;
    for (std::int64_t z = 0; z < shape[2]; ++z)
        for (std::int64_t y = 0; y < shape[1]; ++y)
            for (std::int64_t x = 0; x < shape[0]; ++x, ++e) {
                const std::size_t off = offset + e * width;
                double raw = 0.0;
                switch (datatype) {
                    case 2: raw = load<std::uint8_t>(b, off); break;
                    case 4: raw = load<std::int16_t>(b, off); break;
                    case 8: raw = load<std::int32_t>(b, off); break;
                    case 16: raw = load<float>(b, off); break;
                    case 64: raw = load<double>(b, off); break;
                }
                v.at(x, y, z) = static_cast<float>(raw * slope + inter);
            }
    return v;
}

void write_nifti(const Volume& v, const std::filesystem::path& path) {
    std::vector<char> b(kNiftiDataOffset + v.numel() * sizeof(float), 0);
    store<std::int32_t>(b, 0, static_cast<std::int32_t>(kNiftiHeader));
    store<std::int16_t>(b, 40, 3);
    for (int a = 0; a < 3; ++a) store<std::int16_t>(b, 42 + 2 * a, static_cast<std::int16_t>(v.shape[a]));
    for (int d = 4; d < 8; ++d) store<std::int16_t>(b, 40 + 2 * d, 1);
    store<std::int16_t>(b, 70, 16);  // float32
    store<std::int16_t>(b, 72, 32);
    store<float>(b, 76, 1.0f);
    for (int a = 0; a < 3; ++a) store<float>(b, 80 + 4 * a, static_cast<float>(v.spacing[a]));
    store<float>(b, 108, static_cast<float>(kNiftiDataOffset));
    store<float>(b, 112, 1.0f);
    b[123] = 2;  // millimetres
    store<std::int16_t>(b, 254, 1);  // sform: scanner anatomical
    for (int a = 0; a < 3; ++a) store<float>(b, 280 + 16 * a + 4 * a, static_cast<float>(v.spacing[a]));
    std::memcpy(b.data() + 344, "n+1", 4);
    std::size_t e = 0;
    for (std::int64_t z = 0; z < v.shape[2]; ++z)
        for (std::int64_t y = 0; y < v.shape[1]; ++y)
            for (std::int64_t x = 0; x < v.shape[0]; ++x, ++e)
                store<float>(b, kNiftiDataOffset + e * sizeof(float), v.at(x, y, z));
    write_bytes(path, b);
}

Volume read_raw(const std::filesystem::path& path) {
    auto sidecar = path;
    sidecar += ".json";
    std::ifstream js(sidecar);
    if (!js) throw IntegrityError("missing sidecar " + sidecar.string());
    nlohmann::json h;
    try {
        js >> h;
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(sidecar.string() + ": " + e.what());
    }
    if (h.value("dtype", std::string()) != "float32") throw IntegrityError(sidecar.string() + ": dtype must be float32");
    const auto dims = h.at("dims").get<std::vector<std::int64_t>>();
    if (dims.size() != 3) throw IntegrityError(sidecar.string() + ": dims must have 3 entries");
    Volume v({dims[0], dims[1], dims[2]});
    if (h.contains("spacing")) {
        const auto sp = h["spacing"].get<std::vector<double>>();
        if (sp.size() == 3) v.spacing = {sp[0], sp[1], sp[2]};
    }
    const auto bytes = read_bytes(path);
    if (bytes.size() != v.numel() * sizeof(float))
        throw IntegrityError(path.string() + ": expected " + std::to_string(v.numel() * sizeof(float)) + " bytes, found " +
                             std::to_string(bytes.size()));
    std::memcpy(v.voxels.data(), bytes.data(), bytes.size());
    return v;
}

void write_raw(const Volume& v, const std::filesystem::path& path) {
    std::vector<char> bytes(v.numel() * sizeof(float));
    std::memcpy(bytes.data(), v.voxels.data(), bytes.size());
    write_bytes(path, bytes);
    nlohmann::json h{{"dims", v.shape}, {"spacing", v.spacing}, {"dtype", "float32"}, {"order", "C"}};
    auto sidecar = path;
    sidecar += ".json";
    std::ofstream js(sidecar);
    js << h.dump(2) << "\n";
    if (!js) throw IntegrityError("cannot write " + sidecar.string());
}

Volume read_volume(const std::filesystem::path& path) {
    const auto s = path.string();
    if (ends_with(s, ".nii") || ends_with(s, ".nii.gz")) return read_nifti(path);
    if (ends_with(s, ".raw")) return read_raw(path);
    throw IntegrityError("unrecognised volume extension: " + s + " (expected .nii, .nii.gz or .raw)");
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
    const auto s = path.string();
    if (ends_with(s, ".nii") || ends_with(s, ".nii.gz")) return write_nifti(v, path);
    if (ends_with(s, ".raw")) return write_raw(v, path);
    throw IntegrityError("unrecognised volume extension: " + s + " (expected .nii, .nii.gz or .raw)");
}

}  // namespace triplet
