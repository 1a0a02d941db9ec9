#include "triplet/config.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "triplet/errors.hpp"

namespace triplet {

std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::AdamW: return "adamw";
        case OptimizerKind::Sgd: return "sgd";
        case OptimizerKind::Lars: return "lars";
    }
    return "adamw";
}

std::string to_string(KlDirection d) {
    return d == KlDirection::StudentTeacher ? "student_teacher" : "teacher_student";
}

std::string to_string(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "constant"; }

std::optional<Profile> parse_profile(std::string_view name) {
    if (name == "full") return Profile::Full;
    if (name == "desk") return Profile::Desk;
    return std::nullopt;
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.ssl = {.learning_rate = 0.5,
             .weight_decay = 1.5e-6,
             .batch_size = 128,
             .iterations = 29300,
             .lambda = 0.005,
             .early_stopping_patience = std::nullopt,
             .optimizer = OptimizerKind::Lars,
             .schedule = LrSchedule::Cosine};
    c.distill = {.learning_rate = 0.01,
                 .weight_decay = 1.5e-6,
                 .batch_size = 128,
                 .iterations = 600,
                 .lambda = 0.001};
    c.finetune = {.learning_rate = 0.0005,
                  .weight_decay = 1e-5,
                  .batch_size = 64,
                  .iterations = 150,
                  .lambda = 0.0,
                  .early_stopping_patience = 20};
    c.supervised = {.learning_rate = 0.01,
                    .weight_decay = 1e-5,
                    .batch_size = 64,
                    .iterations = 150,
                    .lambda = 0.0,
                    .early_stopping_patience = 20};
    c.supervised_pretrain = {.learning_rate = 0.01,
                             .weight_decay = 1.5e-6,
                             .batch_size = 128,
                             .iterations = 600};
    return c;
}

ExperimentConfig desk_profile() {
    ExperimentConfig c = default_config();
    c.input_shape = {16, 16, 16};
    c.synthetic.volume_shape = {32, 32, 32};
    c.base_channels = 4;
    c.latent_dim = 128;
    c.projection_dim = 256;
    c.ssl.iterations = 2000;
    // LARS at the full-profile rate moves each weight by ~1e-3 of its norm per
    // step, which does not get anywhere in 2,000 steps. AdamW at a small
    // rate does.
    c.ssl.optimizer = OptimizerKind::AdamW;
    c.ssl.learning_rate = 1e-3;
    // At 0.01 the small network collapses to one class on D within a few
    // steps (loss pinned at ln 3); both D stages use the same lower rate.
    c.distill.learning_rate = 1e-3;
    c.supervised_pretrain.learning_rate = 1e-3;
    c.distill.iterations = 300;
    c.supervised_pretrain.iterations = 300;
    c.finetune.iterations = 100;
    c.supervised.iterations = 100;
    for (auto* s : {&c.ssl, &c.distill, &c.finetune, &c.supervised, &c.supervised_pretrain}) s->batch_size = 32;
    c.eval_interval = 5;
    return c;
}

ExperimentConfig profile_config(Profile p) { return p == Profile::Desk ? desk_profile() : default_config(); }

namespace {

void check_stage(const StageHyperParams& s, const std::string& name, std::vector<std::string>& out) {
    if (!(s.learning_rate > 0.0)) out.push_back(name + ".learning_rate must be > 0");
    if (!(s.weight_decay >= 0.0)) out.push_back(name + ".weight_decay must be >= 0");
    if (s.batch_size < 2)
        out.push_back(name + ".batch_size must be >= 2 (batch statistics need at least two samples)");
    if (s.iterations < 1) out.push_back(name + ".iterations must be >= 1");
    if (s.early_stopping_patience && *s.early_stopping_patience < 1)
        out.push_back(name + ".early_stopping_patience must be >= 0 (0 disables it)");
}

}  // namespace

std::vector<std::string> validate(const ExperimentConfig& c) {
    std::vector<std::string> v;
    check_stage(c.ssl, "ssl", v);
    check_stage(c.distill, "distill", v);
    check_stage(c.finetune, "finetune", v);
    check_stage(c.supervised, "supervised", v);
    check_stage(c.supervised_pretrain, "supervised_pretrain", v);
    if (!(c.ssl.lambda >= 0.0)) v.push_back("ssl.lambda must be >= 0");
    if (!(c.distill.lambda >= 0.0 && c.distill.lambda <= 1.0)) v.push_back("distill.lambda must lie in [0, 1]");
    for (std::size_t i = 0; i < 3; ++i)
        if (c.input_shape[i] < 8) v.push_back("input_shape[" + std::to_string(i) + "] must be >= 8");
    if (c.num_classes < 2) v.push_back("num_classes must be >= 2");
    if (c.latent_dim < 1) v.push_back("latent_dim must be >= 1");
    if (c.projection_dim < 1) v.push_back("projection_dim must be >= 1");
    if (c.base_channels < 1) v.push_back("base_channels must be >= 1");
    if (!(c.distill_temperature > 0.0)) v.push_back("distill_temperature must be > 0");
    if (c.folds < 2) v.push_back("folds must be >= 2");
    double ratio_sum = 0.0;
    for (double r : c.split_ratios) {
        if (!(r > 0.0)) v.push_back("split_ratios entries must be > 0");
        ratio_sum += r;
    }
    if (std::abs(ratio_sum - 1.0) > 1e-9) v.push_back("split_ratios must sum to 1");
    if (!(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0)) v.push_back("holdout_fraction must lie in (0, 1)");
    if (c.eval_interval < 1) v.push_back("eval_interval must be >= 1");
    if (!(c.checkpoint_fraction > 0.0 && c.checkpoint_fraction <= 1.0))
        v.push_back("checkpoint_fraction must lie in (0, 1]");

    const auto& a = c.augment;
    if (!(a.reference_extent > 0.0)) v.push_back("augment.reference_extent must be > 0");
    if (!(a.translation_voxels >= 0.0)) v.push_back("augment.translation_voxels must be >= 0");
    if (!(a.crop_scale[0] > 0.0 && a.crop_scale[0] <= a.crop_scale[1] && a.crop_scale[1] <= 1.0))
        v.push_back("augment.crop_scale must satisfy 0 < min <= max <= 1");
    for (auto [p, n] : {std::pair{a.flip_probability, "flip_probability"}, std::pair{a.affine_probability, "affine_probability"}})
        if (!(p >= 0.0 && p <= 1.0)) v.push_back(std::string("augment.") + n + " must lie in [0, 1]");

    const auto& s = c.synthetic;
    if (s.n_unlabeled < 0 || s.n_task < 0 || s.n_target < 0) v.push_back("synthetic counts must be >= 0");
    for (std::size_t i = 0; i < 3; ++i)
        if (s.volume_shape[i] < 8) v.push_back("synthetic.volume_shape[" + std::to_string(i) + "] must be >= 8");
    double psum = 0.0;
    for (double p : s.class_proportions) {
        if (!(p >= 0.0)) v.push_back("synthetic.class_proportions entries must be >= 0");
        psum += p;
    }
    if (!(psum > 0.0)) v.push_back("synthetic.class_proportions must not all be zero");
    if (!(s.shift >= 0.0)) v.push_back("synthetic.shift must be >= 0");
    if (!(s.unlabeled_healthy_fraction >= 0.0 && s.unlabeled_healthy_fraction <= 1.0))
        v.push_back("synthetic.unlabeled_healthy_fraction must lie in [0, 1]");
    if (!(s.severity[0] >= 0.0 && s.severity[0] <= s.severity[1] && s.severity[1] < 1.0))
        v.push_back("synthetic.severity must satisfy 0 <= min <= max < 1");
    if (!(s.target_severity[0] >= 0.0 && s.target_severity[0] <= s.target_severity[1] && s.target_severity[1] < 1.0))
        v.push_back("synthetic.target_severity must satisfy 0 <= min <= max < 1");
    if (!(s.noise >= 0.0)) v.push_back("synthetic.noise must be >= 0");
    return v;
}

namespace {

// Reads typed values out of a toml table, remembering which keys were
// consumed so leftovers can be reported as unknown.
class Reader {
public:
    Reader(const toml::table& t, std::string prefix) : table_(t), prefix_(std::move(prefix)) {}

    std::string key(std::string_view k) const { return prefix_.empty() ? std::string(k) : prefix_ + "." + std::string(k); }

    const toml::node* find(std::string_view k) {
        seen_.insert(std::string(k));
        return table_.get(k);
    }

    void real(std::string_view k, double& out) {
        if (auto* n = find(k)) {
            if (auto d = n->value_exact<double>()) out = *d;
            else if (auto i = n->value_exact<std::int64_t>()) out = static_cast<double>(*i);
            else throw ConfigError(key(k), "expected a number");
        }
    }

    void integer(std::string_view k, std::int64_t& out) {
        if (auto* n = find(k)) {
            auto i = n->value_exact<std::int64_t>();
            if (!i) throw ConfigError(key(k), "expected an integer");
            out = *i;
        }
    }

    void boolean(std::string_view k, bool& out) {
        if (auto* n = find(k)) {
            auto b = n->value_exact<bool>();
            if (!b) throw ConfigError(key(k), "expected a boolean");
            out = *b;
        }
    }

    void string(std::string_view k, std::string& out) {
        if (auto* n = find(k)) {
            auto s = n->value_exact<std::string>();
            if (!s) throw ConfigError(key(k), "expected a string");
            out = *s;
        }
    }

    void path(std::string_view k, std::filesystem::path& out) {
        std::string s;
        bool present = table_.contains(k);
        string(k, s);
        if (present) out = s;
    }

    template <typename T, std::size_t N>
    void array(std::string_view k, std::array<T, N>& out) {
        auto* n = find(k);
        if (!n) return;
        auto* arr = n->as_array();
        if (!arr || arr->size() != N) throw ConfigError(key(k), "expected an array of " + std::to_string(N) + " values");
        for (std::size_t i = 0; i < N; ++i) {
            const auto& e = (*arr)[i];
            if constexpr (std::is_floating_point_v<T>) {
                if (auto d = e.value_exact<double>()) out[i] = *d;
                else if (auto iv = e.value_exact<std::int64_t>()) out[i] = static_cast<double>(*iv);
                else throw ConfigError(key(k), "expected numeric entries");
            } else {
                auto iv = e.value_exact<std::int64_t>();
                if (!iv) throw ConfigError(key(k), "expected integer entries");
                out[i] = *iv;
            }
        }
    }

    const toml::table* subtable(std::string_view k) {
        auto* n = find(k);
        if (!n) return nullptr;
        auto* t = n->as_table();
        if (!t) throw ConfigError(key(k), "expected a table");
        return t;
    }

    void reject_unknown() const {
        for (auto&& [k, v] : table_) {
            if (!seen_.contains(std::string(k.str()))) throw ConfigError(key(k.str()), "unknown key");
        }
    }

private:
    const toml::table& table_;
    std::string prefix_;
    std::set<std::string> seen_;
};

OptimizerKind parse_optimizer(const std::string& s, const std::string& key) {
    if (s == "adamw") return OptimizerKind::AdamW;
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "lars") return OptimizerKind::Lars;
    throw ConfigError(key, "unknown optimizer '" + s + "' (expected adamw, sgd or lars)");
}

LrSchedule parse_schedule(const std::string& s, const std::string& key) {
    if (s == "constant") return LrSchedule::Constant;
    if (s == "cosine") return LrSchedule::Cosine;
    throw ConfigError(key, "unknown schedule '" + s + "' (expected constant or cosine)");
}

void read_stage(Reader& parent, std::string_view name, StageHyperParams& s) {
    const toml::table* t = parent.subtable(name);
    if (!t) return;
    Reader r(*t, std::string(name));
    r.real("learning_rate", s.learning_rate);
    r.real("weight_decay", s.weight_decay);
    r.integer("batch_size", s.batch_size);
    r.integer("iterations", s.iterations);
    r.real("lambda", s.lambda);
    if (t->contains("early_stopping_patience")) {
        std::int64_t p = 0;
        r.integer("early_stopping_patience", p);
        // 0 disables early stopping.
        s.early_stopping_patience = p == 0 ? std::nullopt : std::optional<std::int64_t>(p);
    }
    std::string text;
    if (t->contains("optimizer")) {
        r.string("optimizer", text);
        s.optimizer = parse_optimizer(text, r.key("optimizer"));
    }
    if (t->contains("schedule")) {
        r.string("schedule", text);
        s.schedule = parse_schedule(text, r.key("schedule"));
    }
    r.reject_unknown();
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, Profile fallback) {
    toml::table root;
    try {
        root = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << e.description() << " at line " << e.source().begin.line << ", column " << e.source().begin.column;
        throw ConfigError("<syntax>", msg.str());
    }

    Reader r(root, "");
    Profile profile = fallback;
    if (root.contains("profile")) {
        std::string name;
        r.string("profile", name);
        auto p = parse_profile(name);
        if (!p) throw ConfigError("profile", "unknown profile '" + name + "' (expected full or desk)");
        profile = *p;
    }
    ExperimentConfig c = profile_config(profile);

    std::int64_t seed = static_cast<std::int64_t>(c.seed);
    r.integer("seed", seed);
    if (seed < 0) throw ConfigError("seed", "must be non-negative");
    c.seed = static_cast<std::uint64_t>(seed);
    r.integer("latent_dim", c.latent_dim);
    r.integer("projection_dim", c.projection_dim);
    r.integer("num_classes", c.num_classes);
    r.integer("base_channels", c.base_channels);
    r.array("input_shape", c.input_shape);
    r.real("distill_temperature", c.distill_temperature);
    if (root.contains("kl_direction")) {
        std::string d;
        r.string("kl_direction", d);
        if (d == "student_teacher") c.kl_direction = KlDirection::StudentTeacher;
        else if (d == "teacher_student") c.kl_direction = KlDirection::TeacherStudent;
        else throw ConfigError("kl_direction", "expected student_teacher or teacher_student");
    }
    r.boolean("center_embeddings", c.center_embeddings);
    r.integer("folds", c.folds);
    r.array("split_ratios", c.split_ratios);
    r.real("holdout_fraction", c.holdout_fraction);
    r.integer("eval_interval", c.eval_interval);
    r.real("checkpoint_fraction", c.checkpoint_fraction);

    if (const toml::table* t = r.subtable("paths")) {
        Reader p(*t, "paths");
        p.path("unlabeled_manifest", c.unlabeled_manifest);
        p.path("task_manifest", c.task_manifest);
        p.path("target_manifest", c.target_manifest);
        p.path("output_dir", c.output_dir);
        p.reject_unknown();
    }

    read_stage(r, "ssl", c.ssl);
    read_stage(r, "distill", c.distill);
    read_stage(r, "finetune", c.finetune);
    read_stage(r, "supervised", c.supervised);
    read_stage(r, "supervised_pretrain", c.supervised_pretrain);

    if (const toml::table* t = r.subtable("augment")) {
        Reader a(*t, "augment");
        a.real("reference_extent", c.augment.reference_extent);
        a.real("translation_voxels", c.augment.translation_voxels);
        a.real("ssl_rotation_degrees", c.augment.ssl_rotation_degrees);
        a.real("tuning_rotation_degrees", c.augment.tuning_rotation_degrees);
        a.array("crop_scale", c.augment.crop_scale);
        a.real("flip_probability", c.augment.flip_probability);
        a.real("affine_probability", c.augment.affine_probability);
        a.reject_unknown();
    }

    if (const toml::table* t = r.subtable("synthetic")) {
        Reader s(*t, "synthetic");
        s.integer("n_unlabeled", c.synthetic.n_unlabeled);
        s.integer("n_task", c.synthetic.n_task);
        s.integer("n_target", c.synthetic.n_target);
        s.array("volume_shape", c.synthetic.volume_shape);
        s.array("class_proportions", c.synthetic.class_proportions);
        s.real("shift", c.synthetic.shift);
        s.real("unlabeled_healthy_fraction", c.synthetic.unlabeled_healthy_fraction);
        s.array("severity", c.synthetic.severity);
        s.array("target_severity", c.synthetic.target_severity);
        s.real("noise", c.synthetic.noise);
        s.reject_unknown();
    }
    r.reject_unknown();

    if (auto v = validate(c); !v.empty()) throw ValidationError(std::move(v));
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, Profile fallback) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("<file>", "cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    ExperimentConfig c = parse_config(buf.str(), fallback);

    // Relative manifest paths are resolved against the config file's directory.
    const auto base = path.parent_path();
    for (auto* p : {&c.unlabeled_manifest, &c.task_manifest, &c.target_manifest})
        if (!p->empty() && p->is_relative()) *p = base / *p;
    if (const char* env = std::getenv("TRIPLET_OUTPUT_DIR"); env && *env) c.output_dir = env;
    return c;
}

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s(buf);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\') out += '\\';
        out += ch;
    }
    return out + "\"";
}

template <typename T, std::size_t N>
std::string list(const std::array<T, N>& a) {
    std::string s = "[";
    for (std::size_t i = 0; i < N; ++i) {
        if (i) s += ", ";
        if constexpr (std::is_floating_point_v<T>) s += num(a[i]);
        else s += std::to_string(a[i]);
    }
    return s + "]";
}

void write_stage(std::ostream& o, std::string_view name, const StageHyperParams& s) {
    o << "\n[" << name << "]\n";
    o << "learning_rate = " << num(s.learning_rate) << "\n";
    o << "weight_decay = " << num(s.weight_decay) << "\n";
    o << "batch_size = " << s.batch_size << "\n";
    o << "iterations = " << s.iterations << "\n";
    o << "lambda = " << num(s.lambda) << "\n";
    o << "early_stopping_patience = " << s.early_stopping_patience.value_or(0) << "\n";
    o << "optimizer = " << quoted(to_string(s.optimizer)) << "\n";
    o << "schedule = " << quoted(to_string(s.schedule)) << "\n";
}

}  // namespace

std::string to_toml(const ExperimentConfig& c) {
    // Written against the full profile so the document is self-contained.
    std::ostringstream o;
    o << "profile = \"full\"\n";
    o << "seed = " << c.seed << "\n";
    o << "latent_dim = " << c.latent_dim << "\n";
    o << "projection_dim = " << c.projection_dim << "\n";
    o << "num_classes = " << c.num_classes << "\n";
    o << "base_channels = " << c.base_channels << "\n";
    o << "input_shape = " << list(c.input_shape) << "\n";
    o << "distill_temperature = " << num(c.distill_temperature) << "\n";
    o << "kl_direction = " << quoted(to_string(c.kl_direction)) << "\n";
    o << "center_embeddings = " << (c.center_embeddings ? "true" : "false") << "\n";
    o << "folds = " << c.folds << "\n";
    o << "split_ratios = " << list(c.split_ratios) << "\n";
    o << "holdout_fraction = " << num(c.holdout_fraction) << "\n";
    o << "eval_interval = " << c.eval_interval << "\n";
    o << "checkpoint_fraction = " << num(c.checkpoint_fraction) << "\n";

    o << "\n[paths]\n";
    o << "unlabeled_manifest = " << quoted(c.unlabeled_manifest.string()) << "\n";
    o << "task_manifest = " << quoted(c.task_manifest.string()) << "\n";
    o << "target_manifest = " << quoted(c.target_manifest.string()) << "\n";
    o << "output_dir = " << quoted(c.output_dir.string()) << "\n";

    write_stage(o, "ssl", c.ssl);
    write_stage(o, "distill", c.distill);
    write_stage(o, "finetune", c.finetune);
    write_stage(o, "supervised", c.supervised);
    write_stage(o, "supervised_pretrain", c.supervised_pretrain);

    const auto& a = c.augment;
    o << "\n[augment]\n";
    o << "reference_extent = " << num(a.reference_extent) << "\n";
    o << "translation_voxels = " << num(a.translation_voxels) << "\n";
    o << "ssl_rotation_degrees = " << num(a.ssl_rotation_degrees) << "\n";
    o << "tuning_rotation_degrees = " << num(a.tuning_rotation_degrees) << "\n";
    o << "crop_scale = " << list(a.crop_scale) << "\n";
    o << "flip_probability = " << num(a.flip_probability) << "\n";
    o << "affine_probability = " << num(a.affine_probability) << "\n";

    const auto& s = c.synthetic;
    o << "\n[synthetic]\n";
    o << "n_unlabeled = " << s.n_unlabeled << "\n";
    o << "n_task = " << s.n_task << "\n";
    o << "n_target = " << s.n_target << "\n";
    o << "volume_shape = " << list(s.volume_shape) << "\n";
    o << "class_proportions = " << list(s.class_proportions) << "\n";
    o << "shift = " << num(s.shift) << "\n";
    o << "unlabeled_healthy_fraction = " << num(s.unlabeled_healthy_fraction) << "\n";
    o << "severity = " << list(s.severity) << "\n";
    o << "target_severity = " << list(s.target_severity) << "\n";
    o << "noise = " << num(s.noise) << "\n";
    return o.str();
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

std::string architecture_fingerprint(const ExperimentConfig& c) {
    std::ostringstream o;
    o << "arch/v1;input=" << c.input_shape[0] << "x" << c.input_shape[1] << "x" << c.input_shape[2]
      << ";latent=" << c.latent_dim << ";projection=" << c.projection_dim << ";classes=" << c.num_classes
      << ";base=" << c.base_channels;
    return fnv1a_hex(o.str());
}

std::string stage_fingerprint(const ExperimentConfig& c, std::string_view stage) {
    const StageHyperParams* s = nullptr;
    if (stage == "ssl") s = &c.ssl;
    else if (stage == "distill") s = &c.distill;
    else if (stage == "finetune") s = &c.finetune;
    else if (stage == "supervised") s = &c.supervised;
    else if (stage == "supervised_pretrain") s = &c.supervised_pretrain;
    else throw ConfigError("stage", "unknown stage '" + std::string(stage) + "'");

    std::ostringstream o;
    o << "stage/v1;" << stage << ";" << architecture_fingerprint(c) << ";seed=" << c.seed
      << ";lr=" << num(s->learning_rate) << ";wd=" << num(s->weight_decay) << ";bs=" << s->batch_size
      << ";it=" << s->iterations << ";lambda=" << num(s->lambda)
      << ";patience=" << (s->early_stopping_patience ? *s->early_stopping_patience : 0)
      << ";opt=" << to_string(s->optimizer) << ";sched=" << to_string(s->schedule)
      << ";tau=" << num(c.distill_temperature) << ";kl=" << to_string(c.kl_direction)
      << ";center=" << c.center_embeddings << ";eval=" << c.eval_interval << ";holdout=" << num(c.holdout_fraction)
      << ";aug=" << num(c.augment.translation_voxels) << "," << num(c.augment.ssl_rotation_degrees) << ","
      << num(c.augment.tuning_rotation_degrees) << "," << num(c.augment.crop_scale[0]) << ","
      << num(c.augment.crop_scale[1]) << "," << num(c.augment.flip_probability) << ","
      << num(c.augment.affine_probability) << "," << num(c.augment.reference_extent)
      << ";U=" << c.unlabeled_manifest.string() << ";D=" << c.task_manifest.string()
      << ";T=" << c.target_manifest.string();
    return fnv1a_hex(o.str());
}

}  // namespace triplet
