#include "triplet/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "triplet/augment.hpp"
#include "triplet/backbone.hpp"
#include "triplet/batches.hpp"
#include "triplet/evaluate.hpp"
#include "triplet/losses.hpp"
#include "triplet/optim.hpp"
#include "triplet/rng.hpp"
#include "triplet/runlog.hpp"

namespace triplet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::SupervisedT: return "supervised_t";
        case Strategy::SupervisedDT: return "supervised_dt";
        case Strategy::SslBtThenT: return "ssl_bt_then_t";
        case Strategy::Triplet: return "triplet";
    }
    return "triplet";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
    std::string n;
    for (char c : name) n += c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (auto s : {Strategy::SupervisedT, Strategy::SupervisedDT, Strategy::SslBtThenT, Strategy::Triplet})
        if (n == to_string(s)) return s;
    return std::nullopt;
}

bool needs_unlabeled(Strategy s) { return s == Strategy::SslBtThenT || s == Strategy::Triplet; }
bool needs_task(Strategy s) { return s == Strategy::SupervisedDT || s == Strategy::Triplet; }

json StageResult::to_json() const {
    return {{"stage", stage},
            {"weights_tag", weights_tag},
            {"checkpoint", checkpoint.string()},
            {"weights_hash", weights_hash},
            {"loss_curve", loss_curve},
            {"wall_seconds", wall_seconds},
            {"seed", seed},
            {"fingerprint", fingerprint},
            {"diagnostics", diagnostics}};
}

StageResult StageResult::from_json(const json& j) {
    StageResult r;
    r.stage = j.at("stage").get<std::string>();
    r.weights_tag = j.at("weights_tag").get<std::string>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.weights_hash = j.at("weights_hash").get<std::string>();
    r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.diagnostics = j.value("diagnostics", json::object());
    return r;
}

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t { kSslTag = 1, kStudentTag = 2, kFinetuneTag = 3, kHoldoutTag = 4, kSplitTag = 5 };

void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        out << j.dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

std::optional<json> read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        return json::parse(in);
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

std::optional<StageResult> reusable(const fs::path& dir, const std::string& fingerprint, const RunOptions& opts) {
    if (!opts.reuse) return std::nullopt;
    const auto j = read_json(dir / "result.json");
    if (!j) return std::nullopt;
    auto r = StageResult::from_json(*j);
    if (r.fingerprint != fingerprint || !fs::exists(r.checkpoint)) return std::nullopt;
    r.reused = true;
    log::emit(log::Level::Info, {{"msg", "stage reused"}, {"stage", r.stage}, {"dir", dir.string()}});
    return r;
}

std::int64_t checkpoint_every(const ExperimentConfig& cfg, const StageHyperParams& hp) {
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(cfg.checkpoint_fraction * static_cast<double>(hp.iterations))));
}

// Shared skeleton: resumable optimizer loop with periodic checkpoints. The
// step callback returns the loss; `should_stop` lets fine-tuning end early.
struct Loop {
    std::string stage;
    const StageHyperParams* hp;
    fs::path dir;
    std::string fingerprint;
    std::int64_t every = 1;
    std::function<json()> save_extra = [] { return json::object(); };
    std::function<void(const json&)> load_extra = [](const json&) {};
    std::function<bool(std::int64_t)> should_stop = [](std::int64_t) { return false; };
};

void run_loop(Model& model, Optimizer& opt, const Loop& loop, StageResult& res, const RunOptions& opts,
              const std::function<double(std::int64_t)>& step_fn) {
    const auto periodic = loop.dir / "periodic.ckpt";
    std::int64_t start = 0;
    if (fs::exists(periodic)) {
        try {
            const auto w = load_weights(periodic);
            if (w.meta.value("fingerprint", "") == loop.fingerprint) {
                apply_weights(model, w);
                opt.load_state(w.extra);
                start = w.meta.at("step").get<std::int64_t>();
                res.loss_curve = w.meta.at("loss_curve").get<std::vector<double>>();
                loop.load_extra(w.meta.value("extra", json::object()));
                log::emit(log::Level::Info, {{"msg", "stage resumed"}, {"stage", loop.stage}, {"step", start}});
            }
        } catch (const IntegrityError& e) {
            log::warn(std::string("ignoring unreadable periodic checkpoint: ") + e.what());
        }
    }
    auto save_periodic = [&](std::int64_t next_step) {
        auto w = snapshot(model, "periodic", res.seed);
        w.extra = opt.state();
        w.meta = {{"fingerprint", loop.fingerprint},
                  {"step", next_step},
                  {"loss_curve", res.loss_curve},
                  {"extra", loop.save_extra()}};
        save_weights(w, periodic);
    };

    for (std::int64_t step = start; step < loop.hp->iterations; ++step) {
        const double lr = learning_rate_at(*loop.hp, step);
        const double loss = step_fn(step);
        res.loss_curve.push_back(loss);
        log::emit(log::Level::Debug, {{"stage", loop.stage}, {"iteration", step}, {"loss", loss}, {"lr", lr}});
        const bool stop = loop.should_stop(step);
        if ((step + 1) % loop.every == 0 && step + 1 < loop.hp->iterations && !stop) save_periodic(step + 1);
        if (opts.interrupt_after && step + 1 == *opts.interrupt_after && step + 1 < loop.hp->iterations && !stop) {
            save_periodic(step + 1);
            throw Interrupted("stage " + loop.stage + " interrupted after " + std::to_string(step + 1) + " steps");
        }
        if (stop) break;
    }
}

void finish(StageResult& res, Model& model, const fs::path& dir, const std::chrono::steady_clock::time_point t0) {
    auto w = snapshot(model, res.weights_tag, res.seed);
    w.meta = {{"stage", res.stage}, {"stage_fingerprint", res.fingerprint}};
    res.checkpoint = dir / (res.weights_tag + ".ckpt");
    save_weights(w, res.checkpoint);
    res.weights_hash = w.hash();
    res.wall_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::error_code ec;
    fs::remove(dir / "periodic.ckpt", ec);
    write_json(dir / "result.json", res.to_json());
    log::emit(log::Level::Info, {{"msg", "stage finished"},
                                 {"stage", res.stage},
                                 {"iterations", res.loss_curve.size()},
                                 {"final_loss", res.loss_curve.empty() ? 0.0 : res.loss_curve.back()},
                                 {"seconds", res.wall_seconds}});
}

[[noreturn]] void abort_numeric(const fs::path& dir, const std::string& stage, std::int64_t step,
                                const std::vector<std::size_t>& indices, const VolumeStore& store, json terms) {
    json ids = json::array();
    for (auto i : indices) ids.push_back(store[i].subject_id);
    const json snap{{"stage", stage}, {"iteration", step}, {"batch_ids", ids}, {"loss_terms", std::move(terms)}};
    write_json(dir / "abort.json", snap);
    log::emit(log::Level::Error, {{"msg", "non-finite loss, stage aborted"}, {"snapshot", snap}});
    throw NumericError("numeric error: non-finite loss in stage " + stage + " at iteration " + std::to_string(step) +
                       " (snapshot in " + (dir / "abort.json").string() + ")");
}

double value(const torch::Tensor& t) { return t.item<double>(); }

std::string composite(const ExperimentConfig& cfg, std::string_view stage, std::initializer_list<std::string> parts) {
    std::string s = stage_fingerprint(cfg, stage);
    for (const auto& p : parts) s += "|" + p;
    return fnv1a_hex(s);
}

std::uint64_t student_seed(const ExperimentConfig& cfg, std::uint64_t slot) {
    return derive_seed(cfg.seed, {kStudentTag, slot});
}

// Distillation and its supervised baseline share everything but the loss.
StageResult run_task_stage(const ExperimentConfig& cfg, const VolumeStore& task, const ModelWeights* teacher_weights,
                           const fs::path& dir, const RunOptions& opts, const std::string& data_key) {
    const bool distill = teacher_weights != nullptr;
    const std::string stage = distill ? "distill" : "supervised_pretrain";
    const auto& hp = distill ? cfg.distill : cfg.supervised_pretrain;
    StageResult res;
    res.stage = stage;
    res.weights_tag = distill ? kPsiPrime : "psi_supervised";
    res.seed = cfg.seed;
    res.fingerprint = composite(cfg, stage, {data_key, distill ? teacher_weights->hash() : ""});
    if (auto r = reusable(dir, res.fingerprint, opts)) return *r;
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(dir);

    Model teacher{nullptr};
    if (distill) {
        if (teacher_weights->fingerprint != architecture_fingerprint(cfg))
            throw IncompatibilityError("incompatible teacher: checkpoint architecture " + teacher_weights->fingerprint +
                                       " does not match the student's " + architecture_fingerprint(cfg));
        teacher = init_model(cfg, teacher_weights->head, 0);
        apply_weights(teacher, *teacher_weights);
        freeze(teacher);
        res.diagnostics["teacher_hash"] = teacher_weights->hash();
        res.diagnostics["teacher_checksum_before"] = parameter_checksum(teacher);
    }

    Model student = init_model(cfg, HeadKind::Cls, student_seed(cfg, 0));
    save_weights(snapshot(student, kPsiInit, cfg.seed), dir / (std::string(kPsiInit) + ".ckpt"));
    auto opt = make_optimizer(hp, trainable_parameters(student));
    const auto pipeline = augment::build_pipeline(augment::Stage::Distill, cfg, 0);
    const auto bs = std::min<std::int64_t>(hp.batch_size, static_cast<std::int64_t>(task.size()));
    BatchStream stream(task, bs, student_seed(cfg, 1), true, &pipeline);

    Loop loop;
    loop.stage = stage;
    loop.hp = &hp;
    loop.dir = dir;
    loop.fingerprint = res.fingerprint;
    loop.every = checkpoint_every(cfg, hp);
    std::vector<double> kl_curve;
    student->train();
    run_loop(student, *opt, loop, res, opts, [&](std::int64_t step) {
        const auto b = stream.at(step);
        const auto latents = forward_features(student, b.volumes);
        const auto logits = student->head->forward(latents);
        torch::Tensor loss;
        json terms;
        if (distill) {
            torch::Tensor t_lat;
            {
                torch::NoGradGuard ng;
                t_lat = forward_features(teacher, b.volumes);
            }
            const auto l = losses::distillation_loss(latents, t_lat, logits, b.labels, hp.lambda, cfg.distill_temperature,
                                                     cfg.kl_direction);
            loss = l.total;
            terms = {{"kl", value(l.kl)}, {"ce", value(l.ce)}, {"total", value(l.total)}};
        } else {
            loss = losses::cross_entropy_loss(logits, b.labels);
            terms = {{"ce", value(loss)}};
        }
        const double v = value(loss);
        if (!std::isfinite(v)) abort_numeric(dir, stage, step, b.indices, task, terms);
        opt->zero_grad();
        loss.backward();
        opt->step(learning_rate_at(hp, step));
        return v;
    });

    if (distill) {
        res.diagnostics["teacher_checksum_after"] = parameter_checksum(teacher);
        double grad = 0.0;
        for (const auto& p : teacher->parameters())
            if (p.grad().defined()) grad += p.grad().abs().sum().item<double>();
        res.diagnostics["teacher_grad_abs_sum"] = grad;
    }
    finish(res, student, dir, t0);
    return res;
}

}  // namespace

Datasets load_datasets(const ExperimentConfig& cfg, Strategy strategy) {
    Datasets d;
    auto load = [&](const fs::path& path, DatasetRole role, const char* key, VolumeStore& store, std::string& checksum) {
        if (path.empty())
            throw ConfigError(key, "strategy " + to_string(strategy) + " needs the role-" + to_string(role) + " manifest");
        auto m = load_manifest(path);
        validate_manifest(m);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i].role != role)
                throw ManifestError("manifest error: " + path.string() + " row " + std::to_string(i + 2) + " has role " +
                                    to_string(m[i].role) + ", expected " + to_string(role));
        if (m.empty()) throw ConfigError(key, "role-" + to_string(role) + " manifest is empty");
        store = VolumeStore::load(m, cfg.input_shape);
        checksum = m.checksum;
        return m;
    };
    if (needs_unlabeled(strategy)) load(cfg.unlabeled_manifest, DatasetRole::U, "unlabeled_manifest", d.unlabeled, d.unlabeled_checksum);
    if (needs_task(strategy)) load(cfg.task_manifest, DatasetRole::D, "task_manifest", d.task, d.task_checksum);
    d.target_manifest = load(cfg.target_manifest, DatasetRole::T, "target_manifest", d.target, d.target_checksum);
    return d;
}

std::string task_data_key(const std::string& task_checksum, const HoldoutSplit& split) {
    std::string s;
    for (auto i : split.holdout) s += std::to_string(i) + ",";
    return task_checksum + ";holdout=" + fnv1a_hex(s);
}

HoldoutSplit task_holdout(const ExperimentConfig& cfg, const VolumeStore& task) {
    return balanced_holdout(task.labels(), cfg.holdout_fraction, cfg.num_classes, derive_seed(cfg.seed, {kHoldoutTag}));
}

std::vector<FoldSplit> target_folds(const ExperimentConfig& cfg, const Manifest& target) {
    KFoldOptions o;
    o.k = cfg.folds;
    o.ratios = cfg.split_ratios;
    return stratified_kfold(target, o, derive_seed(cfg.seed, {kSplitTag}));
}

StageResult run_ssl_stage(const ExperimentConfig& cfg, const VolumeStore& unlabeled, const fs::path& dir,
                          const RunOptions& opts, const std::string& data_key) {
    const auto& hp = cfg.ssl;
    StageResult res;
    res.stage = "ssl";
    res.weights_tag = kThetaPrime;
    res.seed = cfg.seed;
    res.fingerprint = composite(cfg, "ssl", {data_key});
    if (auto r = reusable(dir, res.fingerprint, opts)) return *r;
    if (unlabeled.size() == 0) throw ConfigError("unlabeled_manifest", "role-U data is empty");
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(dir);

    Model model = init_model(cfg, HeadKind::Ssl, derive_seed(cfg.seed, {kSslTag, 0}));
    save_weights(snapshot(model, kThetaInit, cfg.seed), dir / (std::string(kThetaInit) + ".ckpt"));
    auto opt = make_optimizer(hp, trainable_parameters(model));
    const auto pipeline = augment::build_pipeline(augment::Stage::Ssl, cfg, 0);
    BatchStream stream(unlabeled, hp.batch_size, derive_seed(cfg.seed, {kSslTag, 1}), true, &pipeline, opts.jobs);

    Loop loop;
    loop.stage = "ssl";
    loop.hp = &hp;
    loop.dir = dir;
    loop.fingerprint = res.fingerprint;
    loop.every = checkpoint_every(cfg, hp);
    model->train();
    std::int64_t degenerate_steps = 0;
    run_loop(model, *opt, loop, res, opts, [&](std::int64_t step) {
        const auto b = stream.paired_at(step);
        const auto za = forward_projected(model, b.view_a);
        const auto zb = forward_projected(model, b.view_b);
        if (!torch::isfinite(za).all().item<bool>() || !torch::isfinite(zb).all().item<bool>())
            abort_numeric(dir, "ssl", step, b.indices, unlabeled, {{"embeddings", "non-finite"}});
        const auto cc = losses::cross_correlation(za, zb, cfg.center_embeddings);
        if (cc.degenerate()) ++degenerate_steps;
        const auto loss = losses::barlow_twins_loss(cc.matrix, hp.lambda);
        const double v = value(loss);
        if (!std::isfinite(v)) abort_numeric(dir, "ssl", step, b.indices, unlabeled, {{"barlow_twins", v}});
        opt->zero_grad();
        loss.backward();
        opt->step(learning_rate_at(hp, step));
        return v;
    });
    res.diagnostics["degenerate_column_steps"] = degenerate_steps;
    finish(res, model, dir, t0);
    return res;
}

StageResult run_distillation_stage(const ExperimentConfig& cfg, const VolumeStore& task, const ModelWeights& teacher,
                                   const fs::path& dir, const RunOptions& opts, const std::string& data_key) {
    return run_task_stage(cfg, task, &teacher, dir, opts, data_key);
}

StageResult run_supervised_pretrain_stage(const ExperimentConfig& cfg, const VolumeStore& task, const fs::path& dir,
                                          const RunOptions& opts, const std::string& data_key) {
    return run_task_stage(cfg, task, nullptr, dir, opts, data_key);
}

StageResult run_finetune_stage(const ExperimentConfig& cfg, const StageHyperParams& hp, const FoldSplit& fold,
                               const VolumeStore& target, const ModelWeights* init, const fs::path& dir,
                               const RunOptions& opts, const std::string& data_key) {
    if (fold.train.empty()) throw ConfigError("folds", "fold " + std::to_string(fold.fold) + " has an empty train split");
    if (fold.train.size() < 2)
        throw ConfigError("folds", "fold " + std::to_string(fold.fold) + " needs at least two training samples");
    const std::string stage = &hp == &cfg.supervised ? "supervised" : "finetune";
    StageResult res;
    res.stage = stage;
    res.weights_tag = kPsiFinal;
    res.seed = cfg.seed;
    std::string split_key = "fold=" + std::to_string(fold.fold) + ";train=";
    for (auto i : fold.train) split_key += std::to_string(i) + ",";
    split_key += ";val=";
    for (auto i : fold.validation) split_key += std::to_string(i) + ",";
    res.fingerprint = composite(cfg, stage, {data_key, init ? init->hash() : "random", split_key});
    if (!opts.validation_override)
        if (auto r = reusable(dir, res.fingerprint, opts)) return *r;
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(dir);

    const auto fold_tag = static_cast<std::uint64_t>(fold.fold);
    Model model = init_model(cfg, HeadKind::Cls, derive_seed(cfg.seed, {kFinetuneTag, fold_tag, 0}));
    if (init) {
        // A classifier checkpoint continues whole; an SSL one seeds f only.
        apply_weights(model, *init, init->head != HeadKind::Cls);
        res.diagnostics["init_hash"] = init->hash();
        res.diagnostics["init_stage"] = init->stage;
    }
    auto opt = make_optimizer(hp, trainable_parameters(model));
    const auto pipeline = augment::build_pipeline(augment::Stage::Finetune, cfg, 0);
    const auto train = target.subset(fold.train);
    const auto bs = std::min<std::int64_t>(hp.batch_size, static_cast<std::int64_t>(train.size()));
    BatchStream stream(train, bs, derive_seed(cfg.seed, {kFinetuneTag, fold_tag, 1}), true, &pipeline);

    double best = -1.0;
    std::int64_t best_step = -1, since = 0, stopped_at = -1;
    json trace = json::array();
    ModelWeights best_weights = snapshot(model, "best", cfg.seed);
    const auto patience = hp.early_stopping_patience.value_or(std::numeric_limits<std::int64_t>::max());
    const auto best_path = dir / "best.ckpt";

    Loop loop;
    loop.stage = stage;
    loop.hp = &hp;
    loop.dir = dir;
    loop.fingerprint = res.fingerprint;
    loop.every = checkpoint_every(cfg, hp);
    loop.save_extra = [&] {
        save_weights(best_weights, best_path);
        return json{{"best", best}, {"best_step", best_step}, {"since", since}, {"trace", trace}};
    };
    loop.load_extra = [&](const json& j) {
        best = j.at("best").get<double>();
        best_step = j.at("best_step").get<std::int64_t>();
        since = j.at("since").get<std::int64_t>();
        trace = j.at("trace");
        best_weights = load_weights(best_path);
    };
    loop.should_stop = [&](std::int64_t step) {
        const bool last = step + 1 == hp.iterations;
        if ((step + 1) % cfg.eval_interval != 0 && !last) return false;
        double metric;
        if (opts.validation_override) metric = opts.validation_override(step);
        else if (fold.validation.empty()) metric = 0.0;
        else metric = evaluate(model, target, fold.validation, fold.fold, "T-val").balanced_accuracy;
        trace.push_back({{"iteration", step + 1}, {"val_bacc", metric}});
        log::emit(log::Level::Debug, {{"stage", stage}, {"fold", fold.fold}, {"iteration", step + 1}, {"val_bacc", metric}});
        if (metric > best) {
            best = metric;
            best_step = step + 1;
            since = 0;
            best_weights = snapshot(model, "best", cfg.seed);
        } else if (++since >= patience) {
            stopped_at = step + 1;
            return true;
        }
        return false;
    };

    model->train();
    run_loop(model, *opt, loop, res, opts, [&](std::int64_t step) {
        const auto b = stream.at(step);
        const auto loss = losses::cross_entropy_loss(forward_projected(model, b.volumes), b.labels);
        const double v = value(loss);
        if (!std::isfinite(v)) abort_numeric(dir, stage, step, b.indices, train, {{"ce", v}});
        opt->zero_grad();
        loss.backward();
        opt->step(learning_rate_at(hp, step));
        return v;
    });
    apply_weights(model, best_weights);
    res.diagnostics["fold"] = fold.fold;
    res.diagnostics["best_val_bacc"] = best;
    res.diagnostics["best_iteration"] = best_step;
    res.diagnostics["stopped_early_at"] = stopped_at;
    res.diagnostics["validation_trace"] = trace;
    std::error_code ec;
    fs::remove(best_path, ec);
    finish(res, model, dir, t0);
    return res;
}

MetricReport evaluate_holdout(const ExperimentConfig& cfg, const ModelWeights& weights, const VolumeStore& task) {
    Model m = init_model(cfg, HeadKind::Cls, 0);
    apply_weights(m, weights);
    return evaluate(m, task, task_holdout(cfg, task).holdout, -1, "D");
}

StrategyRun run_target_folds(const ExperimentConfig& cfg, const StageHyperParams& hp, const Datasets& data,
                             const ModelWeights* init, const fs::path& dir, const RunOptions& opts) {
    if (data.target.size() == 0) throw ConfigError("target_manifest", "fine-tuning needs role-T data");
    StrategyRun run;
    const auto folds = target_folds(cfg, data.target_manifest);
    std::vector<StageResult> results(folds.size());
    std::vector<MetricReport> reports(folds.size());
    std::vector<std::exception_ptr> errors(folds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t f; (f = next.fetch_add(1)) < folds.size();) {
            try {
                results[f] = run_finetune_stage(cfg, hp, folds[f], data.target, init, dir / ("fold" + std::to_string(f)),
                                                opts, data.target_checksum);
                const auto w = load_weights(results[f].checkpoint, cfg);
                Model m = init_model(cfg, HeadKind::Cls, 0);
                apply_weights(m, w);
                reports[f] = evaluate(m, data.target, folds[f].test, folds[f].fold, "T");
                if (init) results[f].diagnostics["handoff_matches"] = results[f].diagnostics.value("init_hash", "") == init->hash();
            } catch (...) {
                errors[f] = std::current_exception();
            }
        }
    };
    const auto jobs = static_cast<std::size_t>(std::clamp(opts.jobs, 1, static_cast<int>(folds.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (const auto& r : reports)
        log::emit(log::Level::Info, {{"msg", "fold evaluated"},
                                     {"fold", r.fold},
                                     {"balanced_accuracy", r.balanced_accuracy},
                                     {"macro_f1", r.macro_f1}});
    run.folds = std::move(results);
    run.report.folds = std::move(reports);
    return run;
}

StrategyRun run_strategy(Strategy strategy, const ExperimentConfig& cfg, const Datasets& data, const fs::path& run_dir,
                         const RunOptions& opts) {
    if (needs_unlabeled(strategy) && data.unlabeled.size() == 0)
        throw ConfigError("unlabeled_manifest", "strategy " + to_string(strategy) + " needs role-U data");
    if (needs_task(strategy) && data.task.size() == 0)
        throw ConfigError("task_manifest", "strategy " + to_string(strategy) + " needs role-D data");
    if (data.target.size() == 0) throw ConfigError("target_manifest", "every strategy needs role-T data");

    StrategyRun run;
    run.strategy = strategy;
    run.report.strategy = to_string(strategy);
    log::emit(log::Level::Info, {{"msg", "strategy started"}, {"strategy", to_string(strategy)}, {"seed", cfg.seed}});

    std::optional<ModelWeights> init;
    std::optional<ModelWeights> task_model;
    if (needs_unlabeled(strategy)) {
        const auto ssl = run_ssl_stage(cfg, data.unlabeled, run_dir / "ssl", opts, data.unlabeled_checksum);
        run.stages.push_back(ssl);
        init = load_weights(ssl.checkpoint, cfg);
    }
    if (needs_task(strategy)) {
        const auto split = task_holdout(cfg, data.task);
        const auto train = data.task.subset(split.train);
        const auto key = task_data_key(data.task_checksum, split);
        StageResult stage = strategy == Strategy::Triplet
                                ? run_distillation_stage(cfg, train, *init, run_dir / "distill", opts, key)
                                : run_supervised_pretrain_stage(cfg, train, run_dir / "supervised_pretrain", opts, key);
        if (init) stage.diagnostics["handoff_matches"] = stage.diagnostics.value("teacher_hash", "") == init->hash();
        run.stages.push_back(stage);
        task_model = load_weights(stage.checkpoint, cfg);
        init = task_model;
        run.report.holdout.push_back(evaluate_holdout(cfg, *task_model, data.task));
    }

    const auto& hp = strategy == Strategy::SupervisedT ? cfg.supervised : cfg.finetune;
    auto ft = run_target_folds(cfg, hp, data, init ? &*init : nullptr, run_dir / ("finetune-" + to_string(strategy)), opts);
    run.folds = std::move(ft.folds);
    run.report.folds = std::move(ft.report.folds);
    write_json(run_dir / ("report-" + to_string(strategy) + ".json"), run.report.to_json());
    return run;
}

}  // namespace triplet
