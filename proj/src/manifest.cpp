#include "triplet/manifest.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "triplet/errors.hpp"
#include "triplet/runlog.hpp"

namespace triplet {

std::string to_string(DatasetRole r) {
    switch (r) {
        case DatasetRole::U: return "U";
        case DatasetRole::D: return "D";
        case DatasetRole::T: return "T";
    }
    return "U";
}

std::optional<DatasetRole> parse_role(std::string_view s) {
    if (s == "U" || s == "u") return DatasetRole::U;
    if (s == "D" || s == "d") return DatasetRole::D;
    if (s == "T" || s == "t") return DatasetRole::T;
    return std::nullopt;
}

std::optional<int> parse_label(std::string_view s) {
    for (int k = 0; k < kNumDiagnoses; ++k)
        if (s == kClassNames[k]) return k;
    if (s.size() == 1 && s[0] >= '0' && s[0] < '0' + kNumDiagnoses) return s[0] - '0';
    return std::nullopt;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
            else if (ch == '"') quoted = false;
            else cur += ch;
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return out + "\"";
}

std::string fmt_age(double a) {
    std::ostringstream o;
    o.precision(17);
    o << a;
    return o.str();
}

}  // namespace

void Manifest::seal() {
    std::string canon;
    for (const auto& r : records) {
        canon += r.subject_id + "," + r.path.string() + "," + to_string(r.role) + "," +
                 (r.label ? std::to_string(*r.label) : "") + "," + (r.age ? fmt_age(*r.age) : "") + "," +
                 r.sex.value_or("") + "\n";
    }
    checksum = fnv1a_hex(canon);
}

Manifest Manifest::subset(const std::vector<std::size_t>& indices) const {
    Manifest m;
    m.records.reserve(indices.size());
    for (auto i : indices) m.records.push_back(records.at(i));
    m.seal();
    return m;
}

void validate_manifest(const Manifest& m) {
    std::vector<std::string> problems;
    std::set<std::string> paths;
    std::map<DatasetRole, std::set<std::string>> ids;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        const auto& r = m.records[i];
        const std::string row = "row " + std::to_string(i + 2);  // 1-based, after the header
        if (r.subject_id.empty()) problems.push_back(row + ": empty subject_id");
        if (!paths.insert(r.path.string()).second) problems.push_back(row + ": duplicate path " + r.path.string());
        if (!ids[r.role].insert(r.subject_id).second)
            problems.push_back(row + ": duplicate subject_id '" + r.subject_id + "' within role " + to_string(r.role));
        if (r.role == DatasetRole::U && r.label) problems.push_back(row + ": role U must not carry a label");
        if (r.role != DatasetRole::U && !r.label) problems.push_back(row + ": role " + to_string(r.role) + " requires a label");
    }
    if (!problems.empty()) {
        std::string msg = "manifest error:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ManifestError(msg);
    }
}

Manifest parse_manifest(std::string_view csv, const std::filesystem::path& base_dir) {
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line)) throw ManifestError("manifest error: missing header row");
    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* req : {"subject_id", "path", "role", "label", "age", "sex"})
        if (!col.contains(req)) throw ManifestError(std::string("manifest error: missing column '") + req + "'");

    Manifest m;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size())
            throw ManifestError("manifest error: row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                                " fields, expected " + std::to_string(header.size()));
        ManifestRecord r;
        r.subject_id = f[col["subject_id"]];
        std::filesystem::path p = f[col["path"]];
        r.path = (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
        auto role = parse_role(f[col["role"]]);
        if (!role) throw ManifestError("manifest error: row " + std::to_string(row) + ": unknown role '" + f[col["role"]] + "'");
        r.role = *role;
        if (const auto& l = f[col["label"]]; !l.empty()) {
            auto lab = parse_label(l);
            if (!lab) throw ManifestError("manifest error: row " + std::to_string(row) + ": unknown label '" + l + "'");
            r.label = lab;
        }
        if (const auto& a = f[col["age"]]; !a.empty()) {
            try {
                std::size_t used = 0;
                r.age = std::stod(a, &used);
                if (used != a.size()) throw std::invalid_argument(a);
            } catch (const std::exception&) {
                throw ManifestError("manifest error: row " + std::to_string(row) + ": invalid age '" + a + "'");
            }
        }
        if (const auto& s = f[col["sex"]]; !s.empty()) r.sex = s;
        m.records.push_back(std::move(r));
    }
    validate_manifest(m);
    if (m.empty()) log::warn("manifest has a header but no records");
    m.seal();
    return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ManifestError("manifest error: cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str(), path.parent_path());
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ManifestError("manifest error: cannot write " + path.string());
    const auto base = path.parent_path();
    out << "subject_id,path,role,label,age,sex\n";
    for (const auto& r : m.records) {
        std::filesystem::path p = r.path;
        if (!base.empty() && p.is_absolute() == std::filesystem::path(base).is_absolute()) {
            auto rel = p.lexically_relative(base);
            if (!rel.empty() && *rel.begin() != "..") p = rel;
        }
        out << csv_field(r.subject_id) << "," << csv_field(p.string()) << "," << to_string(r.role) << ","
            << (r.label ? kClassNames[*r.label] : "") << "," << (r.age ? fmt_age(*r.age) : "") << ","
            << csv_field(r.sex.value_or("")) << "\n";
    }
}

VolumeStore VolumeStore::load(const Manifest& m, Shape3 input_shape) {
    VolumeStore s;
    s.shape_ = input_shape;
    s.samples_.reserve(m.size());
    for (const auto& r : m.records) {
        auto norm = normalize_volume(read_volume(r.path), input_shape);
        if (norm.degenerate) log::warn("constant volume for subject " + r.subject_id + " normalized to zeros");
        s.samples_.push_back({std::move(norm.volume), r.label, r.age, r.sex, r.subject_id, r.role});
    }
    return s;
}

VolumeStore VolumeStore::from_samples(std::vector<VolumeSample> samples) {
    VolumeStore s;
    if (!samples.empty()) s.shape_ = samples.front().volume.shape;
    for (const auto& x : samples)
        if (x.volume.shape != s.shape_) throw ShapeError("VolumeStore: samples must share one shape");
    s.samples_ = std::move(samples);
    return s;
}

VolumeStore VolumeStore::subset(const std::vector<std::size_t>& indices) const {
    VolumeStore s;
    s.shape_ = shape_;
    s.samples_.reserve(indices.size());
    for (auto i : indices) s.samples_.push_back(samples_.at(i));
    return s;
}

std::vector<int> VolumeStore::labels() const {
    std::vector<int> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(s.label.value_or(-1));
    return out;
}

}  // namespace triplet
