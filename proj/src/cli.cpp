#include "triplet/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "triplet/backbone.hpp"
#include "triplet/checkpoint.hpp"
#include "triplet/config.hpp"
#include "triplet/embedding.hpp"
#include "triplet/errors.hpp"
#include "triplet/evaluate.hpp"
#include "triplet/manifest.hpp"
#include "triplet/pipeline.hpp"
#include "triplet/report.hpp"
#include "triplet/runlog.hpp"
#include "triplet/synth.hpp"

namespace triplet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad flag combinations found after parsing; reported like parse errors.
class UsageError : public Error {
public:
    using Error::Error;
};

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string strategy = "triplet";
    std::vector<std::string> checkpoints;
    std::string manifest;
    int jobs = 1;
    std::string profile;
    std::string reducer = "umap";
    bool verbose = false;
    bool quiet = false;
};

ExperimentConfig resolve_config(const Options& o) {
    std::optional<Profile> profile;
    if (!o.profile.empty()) {
        profile = parse_profile(o.profile);
        if (!profile) throw UsageError("--profile must be desk or full, got '" + o.profile + "'");
    }
    ExperimentConfig cfg;
    if (!o.config.empty()) cfg = load_config(o.config, profile.value_or(Profile::Full));
    else if (profile) cfg = profile_config(*profile);
    else throw UsageError("--config (or --profile) is required");
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (const auto v = validate(cfg); !v.empty()) throw ValidationError(v);
    return cfg;
}

std::vector<Strategy> resolve_strategies(const std::string& list) {
    std::vector<Strategy> out;
    if (list == "all") return {Strategy::SupervisedT, Strategy::SupervisedDT, Strategy::SslBtThenT, Strategy::Triplet};
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto end = std::min(list.find(',', start), list.size());
        const auto name = list.substr(start, end - start);
        const auto s = parse_strategy(name);
        if (!s) throw UsageError("unknown strategy '" + name + "'");
        out.push_back(*s);
        start = end + 1;
    }
    return out;
}

// The strategy whose data needs cover every requested one.
Strategy widest(const std::vector<Strategy>& strategies) {
    bool u = false, d = false;
    for (auto s : strategies) {
        u = u || needs_unlabeled(s);
        d = d || needs_task(s);
    }
    if (u && d) return Strategy::Triplet;
    if (u) return Strategy::SslBtThenT;
    if (d) return Strategy::SupervisedDT;
    return Strategy::SupervisedT;
}

std::pair<VolumeStore, std::string> load_role(const ExperimentConfig& cfg, DatasetRole role) {
    const auto& path = role == DatasetRole::U   ? cfg.unlabeled_manifest
                       : role == DatasetRole::D ? cfg.task_manifest
                                                : cfg.target_manifest;
    const char* key = role == DatasetRole::U ? "unlabeled_manifest" : role == DatasetRole::D ? "task_manifest" : "target_manifest";
    if (path.empty()) throw ConfigError(key, "no role-" + to_string(role) + " manifest configured");
    auto m = load_manifest(path);
    validate_manifest(m);
    return {VolumeStore::load(m, cfg.input_shape), m.checksum};
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

// Keeps the run log attached for the lifetime of a training subcommand.
struct RunLog {
    explicit RunLog(const fs::path& out) {
        fs::create_directories(out);
        log::attach_file(out / "run.log.jsonl");
    }
    ~RunLog() { log::detach_file(); }
};

RunOptions run_options(const Options& o) {
    RunOptions r;
    r.jobs = o.jobs;
    return r;
}

int cmd_synth(const Options& o) {
    auto cfg = resolve_config(o);
    const fs::path out = fs::absolute(cfg.output_dir);
    const auto data = synth::generate(cfg.synthetic, cfg.folds, cfg.seed, out);
    cfg.unlabeled_manifest = out / "manifest_U.csv";
    cfg.task_manifest = out / "manifest_D.csv";
    cfg.target_manifest = out / "manifest_T.csv";
    cfg.output_dir = out / "run";
    write_text(out / "config.toml", to_toml(cfg));
    std::cout << "U " << data.unlabeled.size() << "  D " << data.task.size() << "  T " << data.target.size() << "\n"
              << "config " << (out / "config.toml").string() << "\n";
    return kExitOk;
}

int cmd_pretrain(const Options& o) {
    const auto cfg = resolve_config(o);
    const fs::path out = cfg.output_dir;
    RunLog rl(out);
    const auto [u, checksum] = load_role(cfg, DatasetRole::U);
    const auto r = run_ssl_stage(cfg, u, out / "ssl", run_options(o), checksum);
    std::cout << r.checkpoint.string() << "\n";
    return kExitOk;
}

int cmd_distill(const Options& o) {
    if (o.checkpoints.size() != 1) throw UsageError("distill needs exactly one --checkpoint (the teacher)");
    const auto cfg = resolve_config(o);
    const fs::path out = cfg.output_dir;
    RunLog rl(out);
    const auto teacher = load_weights(o.checkpoints.front(), cfg);
    const auto [d, checksum] = load_role(cfg, DatasetRole::D);
    const auto split = task_holdout(cfg, d);
    const auto r = run_distillation_stage(cfg, d.subset(split.train), teacher, out / "distill", run_options(o),
                                          task_data_key(checksum, split));
    const auto report = evaluate_holdout(cfg, load_weights(r.checkpoint, cfg), d);
    write_text(out / "distill" / "holdout.json", report.to_json().dump(2) + "\n");
    std::cout << r.checkpoint.string() << "\nholdout BAcc " << format_percent(summarize({report.balanced_accuracy}))
              << "\n";
    return kExitOk;
}

int cmd_finetune(const Options& o) {
    if (o.checkpoints.size() > 1) throw UsageError("finetune takes at most one --checkpoint");
    const auto cfg = resolve_config(o);
    const fs::path out = cfg.output_dir;
    RunLog rl(out);
    std::optional<ModelWeights> init;
    if (!o.checkpoints.empty()) init = load_weights(o.checkpoints.front(), cfg);
    Datasets data;
    auto [t, checksum] = load_role(cfg, DatasetRole::T);
    data.target = std::move(t);
    data.target_checksum = checksum;
    data.target_manifest = load_manifest(cfg.target_manifest);
    // Without an initialization this is the supervised-on-T baseline.
    const auto& hp = init ? cfg.finetune : cfg.supervised;
    auto run = run_target_folds(cfg, hp, data, init ? &*init : nullptr, out / "finetune", run_options(o));
    run.report.strategy = init ? "finetune" : "supervised_t";
    write_text(out / "metrics.json", json{{"seed", cfg.seed}, {"strategies", {run.report.to_json()}}}.dump(2) + "\n");
    std::cout << report_table({run.report});
    return kExitOk;
}

int cmd_run(const Options& o) {
    const auto strategies = resolve_strategies(o.strategy);
    const auto cfg = resolve_config(o);
    const fs::path out = cfg.output_dir;
    RunLog rl(out);
    write_text(out / "config.toml", to_toml(cfg));
    const auto data = load_datasets(cfg, widest(strategies));
    std::vector<StrategyReport> reports;
    json j{{"seed", cfg.seed}, {"strategies", json::array()}};
    for (auto s : strategies) {
        const auto run = run_strategy(s, cfg, data, out, run_options(o));
        reports.push_back(run.report);
        auto entry = run.report.to_json();
        entry["stages"] = json::array();
        for (const auto& st : run.stages) entry["stages"].push_back(st.to_json());
        j["strategies"].push_back(entry);
    }
    write_text(out / "metrics.json", j.dump(2) + "\n");
    std::cout << report_table(reports);
    return kExitOk;
}

int cmd_eval(const Options& o) {
    if (o.checkpoints.size() != 1) throw UsageError("eval needs exactly one --checkpoint");
    if (o.manifest.empty()) throw UsageError("eval needs --manifest");
    const auto cfg = resolve_config(o);
    const auto w = load_weights(o.checkpoints.front(), cfg);
    if (w.head != HeadKind::Cls) throw IncompatibilityError("incompatible checkpoint: eval needs a classifier head");
    auto m = load_manifest(o.manifest);
    validate_manifest(m);
    const auto store = VolumeStore::load(m, cfg.input_shape);
    Model model = init_model(cfg, HeadKind::Cls, 0);
    apply_weights(model, w);
    const auto report = evaluate(model, store, -1, to_string(m.empty() ? DatasetRole::T : m[0].role));
    const auto text = report.to_json().dump(2) + "\n";
    if (!o.out.empty()) write_text(fs::path(o.out) / "eval.json", text);
    std::cout << text;
    return kExitOk;
}

int cmd_visualize(const Options& o) {
    if (o.checkpoints.empty()) throw UsageError("visualize needs at least one --checkpoint");
    const auto reducer = parse_reducer(o.reducer);
    if (!reducer) throw UsageError("--reducer must be umap or pca, got '" + o.reducer + "'");
    const auto cfg = resolve_config(o);
    const fs::path out = cfg.output_dir;
    std::vector<ModelWeights> weights;
    for (const auto& c : o.checkpoints) weights.push_back(load_weights(c, cfg));
    auto optional_role = [&](DatasetRole role, const fs::path& path) {
        return path.empty() ? VolumeStore{} : load_role(cfg, role).first;
    };
    const auto u = optional_role(DatasetRole::U, cfg.unlabeled_manifest);
    const auto d = optional_role(DatasetRole::D, cfg.task_manifest);
    const auto t = optional_role(DatasetRole::T, cfg.target_manifest);
    for (const auto& table : extract_latents(weights, cfg, u, d, t, cfg.seed)) {
        render_latent_space(table, *reducer, cfg.seed, out / "latent");
        std::cout << (out / "latent" / (table.stage + ".png")).string() << "\n";
    }
    return kExitOk;
}

int cmd_validate(const Options& o) {
    if (o.config.empty()) throw UsageError("validate-config needs --config");
    std::optional<Profile> profile;
    if (!o.profile.empty()) profile = parse_profile(o.profile);
    load_config(o.config, profile.value_or(Profile::Full));
    std::cout << "ok\n";
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"Triplet Training: SSL pre-training, self-distillation and fine-tuning for 3D volumes", "triplet"};
    app.require_subcommand(1, 1);
    app.fallthrough();
    Options o;
    app.add_option("--config", o.config, "Experiment config (TOML)");
    app.add_option("--seed", o.seed, "Master seed override");
    app.add_option("--out", o.out, "Output directory override");
    app.add_option("--strategy", o.strategy, "supervised_t, supervised_dt, ssl_bt_then_t, triplet, a comma list or all");
    app.add_option("--checkpoint", o.checkpoints, "Checkpoint path (repeatable for visualize)");
    app.add_option("--manifest", o.manifest, "Manifest CSV to evaluate");
    app.add_option("--jobs", o.jobs, "Parallel fine-tuning folds")->check(CLI::PositiveNumber);
    app.add_option("--profile", o.profile, "Preset under the config: desk or full");
    app.add_option("--reducer", o.reducer, "2-D reducer for visualize: umap or pca");
    app.add_flag("-v,--verbose", o.verbose, "Log every iteration");
    app.add_flag("-q,--quiet", o.quiet, "Only warnings and errors");

    std::vector<std::pair<CLI::App*, int (*)(const Options&)>> commands{
        {app.add_subcommand("synth", "Generate the synthetic U/D/T datasets"), cmd_synth},
        {app.add_subcommand("pretrain", "Barlow Twins pre-training on role U"), cmd_pretrain},
        {app.add_subcommand("distill", "Self-distillation on role D from a teacher checkpoint"), cmd_distill},
        {app.add_subcommand("finetune", "Cross-validated fine-tuning on role T"), cmd_finetune},
        {app.add_subcommand("run", "Run whole strategies and print the metrics table"), cmd_run},
        {app.add_subcommand("eval", "Evaluate a classifier checkpoint on a manifest"), cmd_eval},
        {app.add_subcommand("visualize", "2-D latent-space plots of checkpoints"), cmd_visualize},
        {app.add_subcommand("validate-config", "Check a config file"), cmd_validate},
    };

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    const auto previous = log::verbosity();
    log::set_verbosity(o.verbose ? log::Level::Debug : o.quiet ? log::Level::Warn : log::Level::Info);
    int code = kExitOk;
    try {
        for (const auto& [sub, fn] : commands)
            if (sub->parsed()) code = fn(o);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\nRun with --help for usage.\n";
        code = kExitUsage;
    } catch (const std::exception& e) {
        log::emit(log::Level::Error, {{"msg", "command failed"}, {"error", e.what()}});
        code = kExitFailure;
    }
    log::set_verbosity(previous);
    return code;
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args);
}

}  // namespace triplet::cli
