#include <doctest.h>

#include <fstream>
#include <numeric>

#include "helpers.hpp"
#include "triplet/backbone.hpp"
#include "triplet/checkpoint.hpp"
#include "triplet/errors.hpp"
#include "triplet/pipeline.hpp"
#include "triplet/runlog.hpp"
#include "triplet/synth.hpp"

using namespace triplet;
namespace fs = std::filesystem;

namespace {

FoldSplit first_fold(const ExperimentConfig& cfg, const VolumeStore& target) {
    Manifest m;
    for (std::size_t i = 0; i < target.size(); ++i) {
        ManifestRecord r;
        r.subject_id = target[i].subject_id;
        r.role = DatasetRole::T;
        r.label = target[i].label;
        r.age = target[i].age;
        r.sex = target[i].sex;
        m.records.push_back(r);
    }
    return target_folds(cfg, m).front();
}

ExperimentConfig with_data(const fs::path& dir) {
    auto cfg = testutil::tiny_config();
    const auto d = synth::generate(cfg.synthetic, cfg.folds, cfg.seed, dir / "data");
    cfg.unlabeled_manifest = dir / "data" / "manifest_U.csv";
    cfg.task_manifest = dir / "data" / "manifest_D.csv";
    cfg.target_manifest = dir / "data" / "manifest_T.csv";
    cfg.output_dir = dir / "run";
    return cfg;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("strategy names") {
    CHECK(parse_strategy("Triplet") == Strategy::Triplet);
    CHECK(parse_strategy("ssl-bt-then-t") == Strategy::SslBtThenT);
    CHECK(parse_strategy("SUPERVISED_DT") == Strategy::SupervisedDT);
    CHECK_FALSE(parse_strategy("simclr"));
    for (auto s : {Strategy::SupervisedT, Strategy::SupervisedDT, Strategy::SslBtThenT, Strategy::Triplet})
        CHECK(parse_strategy(to_string(s)) == s);
    CHECK(needs_unlabeled(Strategy::Triplet));
    CHECK_FALSE(needs_unlabeled(Strategy::SupervisedDT));
    CHECK(needs_task(Strategy::SupervisedDT));
    CHECK_FALSE(needs_task(Strategy::SslBtThenT));
}

TEST_CASE("SSL stage is deterministic and independent of the worker count") {
    testutil::TempDir tmp;
    const auto cfg = testutil::tiny_config();
    const auto u = testutil::phantom_store(cfg, DatasetRole::U, 12);
    const auto a = run_ssl_stage(cfg, u, tmp.path / "a");
    RunOptions two;
    two.jobs = 2;
    const auto b = run_ssl_stage(cfg, u, tmp.path / "b", two);
    CHECK(a.weights_hash == b.weights_hash);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(a.loss_curve.size() == 6);
    CHECK(a.weights_tag == kThetaPrime);
    CHECK(fs::exists(a.checkpoint));
    CHECK(fs::exists(tmp.path / "a" / "theta_init.ckpt"));
    CHECK_FALSE(fs::exists(tmp.path / "a" / "periodic.ckpt"));
}

TEST_CASE("an interrupted stage resumes to the uninterrupted result") {
    testutil::TempDir tmp;
    const auto cfg = testutil::tiny_config();
    const auto u = testutil::phantom_store(cfg, DatasetRole::U, 12);
    const auto straight = run_ssl_stage(cfg, u, tmp.path / "straight");
    RunOptions stop;
    stop.interrupt_after = 3;
    CHECK_THROWS_AS(run_ssl_stage(cfg, u, tmp.path / "resumed", stop), Interrupted);
    CHECK(fs::exists(tmp.path / "resumed" / "periodic.ckpt"));
    const auto resumed = run_ssl_stage(cfg, u, tmp.path / "resumed");
    CHECK(resumed.weights_hash == straight.weights_hash);
    CHECK(resumed.loss_curve == straight.loss_curve);
}

TEST_CASE("a finished stage with a matching fingerprint is reused") {
    testutil::TempDir tmp;
    const auto cfg = testutil::tiny_config();
    const auto u = testutil::phantom_store(cfg, DatasetRole::U, 12);
    const auto first = run_ssl_stage(cfg, u, tmp.path / "s");
    const auto again = run_ssl_stage(cfg, u, tmp.path / "s");
    CHECK(again.reused);
    CHECK(again.weights_hash == first.weights_hash);
    auto changed = cfg;
    changed.ssl.learning_rate *= 0.5;
    CHECK_FALSE(run_ssl_stage(changed, u, tmp.path / "s").reused);
    RunOptions fresh;
    fresh.reuse = false;
    CHECK_FALSE(run_ssl_stage(cfg, u, tmp.path / "s", fresh).reused);
}

TEST_CASE("SSL loss falls over a longer run") {
    testutil::TempDir tmp;
    auto cfg = testutil::tiny_config();
    // Batch statistics of the correlation matrix need a batch well above C.
    // LARS moves weights by ~1e-3 of their norm per step, far too slowly for
    // a short run, so this uses AdamW.
    cfg.ssl.optimizer = OptimizerKind::AdamW;
    cfg.ssl.learning_rate = 1e-3;
    cfg.ssl.schedule = LrSchedule::Constant;
    cfg.ssl.iterations = 80;
    cfg.ssl.batch_size = 32;
    const auto u = testutil::phantom_store(cfg, DatasetRole::U, 64);
    const auto r = run_ssl_stage(cfg, u, tmp.path);
    const auto& c = r.loss_curve;
    REQUIRE(c.size() == 80);
    const double head = std::accumulate(c.begin(), c.begin() + 10, 0.0) / 10;
    const double tail = std::accumulate(c.end() - 10, c.end(), 0.0) / 10;
    MESSAGE("ssl loss curve: " << nlohmann::json(c).dump());
    CHECK(tail < head);
}

TEST_CASE("distillation leaves the teacher untouched") {
    testutil::TempDir tmp;
    const auto cfg = testutil::tiny_config();
    const auto d = testutil::phantom_store(cfg, DatasetRole::D, 16);
    auto teacher = init_model(cfg, HeadKind::Ssl, 5);
    const auto w = snapshot(teacher, kThetaPrime, 5);
    const auto r = run_distillation_stage(cfg, d, w, tmp.path);
    CHECK(r.diagnostics["teacher_checksum_before"] == r.diagnostics["teacher_checksum_after"]);
    CHECK(r.diagnostics["teacher_grad_abs_sum"].get<double>() == 0.0);
    CHECK(r.diagnostics["teacher_hash"] == w.hash());
    CHECK(r.weights_tag == kPsiPrime);
    CHECK(load_weights(r.checkpoint).head == HeadKind::Cls);
}

TEST_CASE("distillation with lambda2 = 0 reduces to cross-entropy training") {
    testutil::TempDir tmp;
    auto cfg = testutil::tiny_config();
    cfg.distill.lambda = 0.0;
    cfg.supervised_pretrain = cfg.distill;
    const auto d = testutil::phantom_store(cfg, DatasetRole::D, 16);
    auto teacher = init_model(cfg, HeadKind::Ssl, 5);
    const auto kd = run_distillation_stage(cfg, d, snapshot(teacher, kThetaPrime, 5), tmp.path / "kd");
    const auto ce = run_supervised_pretrain_stage(cfg, d, tmp.path / "ce");
    REQUIRE(kd.loss_curve.size() == ce.loss_curve.size());
    for (std::size_t i = 0; i < kd.loss_curve.size(); ++i) CHECK(std::abs(kd.loss_curve[i] - ce.loss_curve[i]) < 1e-8);
    const auto a = load_weights(kd.checkpoint), b = load_weights(ce.checkpoint);
    double diff = 0;
    for (std::size_t i = 0; i < a.tensors.size(); ++i)
        diff = std::max(diff, (a.tensors[i].value.to(torch::kFloat64) - b.tensors[i].value.to(torch::kFloat64))
                                  .abs().max().item<double>());
    CHECK(diff < 1e-8);
}

TEST_CASE("a teacher of another architecture is rejected") {
    testutil::TempDir tmp;
    auto cfg = testutil::tiny_config();
    const auto d = testutil::phantom_store(cfg, DatasetRole::D, 16);
    auto other = cfg;
    other.latent_dim = 16;
    auto teacher = init_model(other, HeadKind::Ssl, 0);
    CHECK_THROWS_AS(run_distillation_stage(cfg, d, snapshot(teacher, kThetaPrime, 0), tmp.path), IncompatibilityError);
}

TEST_CASE("early stopping fires after `patience` evaluations without improvement") {
    testutil::TempDir tmp;
    auto cfg = testutil::tiny_config();
    cfg.finetune.early_stopping_patience = 1;
    cfg.finetune.iterations = 20;
    const auto t = testutil::phantom_store(cfg, DatasetRole::T, 30);
    RunOptions opts;
    opts.validation_override = [](std::int64_t) { return 0.5; };
    const auto r = run_finetune_stage(cfg, cfg.finetune, first_fold(cfg, t), t, nullptr, tmp.path, opts);
    // Evaluations at 2 and 4: the first sets the best, the second stalls.
    CHECK(r.diagnostics["stopped_early_at"] == 4);
    CHECK(r.diagnostics["best_iteration"] == 2);
    CHECK(r.loss_curve.size() == 4);
    CHECK(r.weights_tag == kPsiFinal);
}

TEST_CASE("the best validation snapshot is what the stage returns") {
    testutil::TempDir tmp;
    auto cfg = testutil::tiny_config();
    cfg.finetune.early_stopping_patience = 10;
    cfg.finetune.iterations = 8;
    const auto t = testutil::phantom_store(cfg, DatasetRole::T, 30);
    const auto fold = first_fold(cfg, t);
    RunOptions peak;
    peak.validation_override = [](std::int64_t step) { return step + 1 == 4 ? 0.9 : 0.1; };
    const auto r = run_finetune_stage(cfg, cfg.finetune, fold, t, nullptr, tmp.path / "peak", peak);
    CHECK(r.diagnostics["best_iteration"] == 4);
    CHECK(r.diagnostics["stopped_early_at"] == -1);
    CHECK(r.loss_curve.size() == 8);
    // A run that simply ends at the peak holds the same weights.
    auto short_cfg = cfg;
    short_cfg.finetune.iterations = 4;
    const auto s = run_finetune_stage(short_cfg, short_cfg.finetune, fold, t, nullptr, tmp.path / "short", peak);
    CHECK(r.weights_hash == s.weights_hash);
}

TEST_CASE("fine-tuning starts from the handed-over weights") {
    testutil::TempDir tmp;
    const auto cfg = testutil::tiny_config();
    const auto t = testutil::phantom_store(cfg, DatasetRole::T, 30);
    auto init = init_model(cfg, HeadKind::Cls, 42);
    const auto w = snapshot(init, kPsiPrime, 42);
    const auto r = run_finetune_stage(cfg, cfg.finetune, first_fold(cfg, t), t, &w, tmp.path);
    CHECK(r.diagnostics["init_hash"] == w.hash());
    CHECK(r.diagnostics["init_stage"] == kPsiPrime);
    CHECK(r.weights_hash != w.hash());
}

TEST_CASE("folds with fewer than two training samples are rejected") {
    testutil::TempDir tmp;
    const auto cfg = testutil::tiny_config();
    const auto t = testutil::phantom_store(cfg, DatasetRole::T, 6);
    FoldSplit f;
    f.train = {0};
    f.validation = {1};
    f.test = {2};
    CHECK_THROWS_AS(run_finetune_stage(cfg, cfg.finetune, f, t, nullptr, tmp.path), ConfigError);
}

TEST_CASE("missing manifests name the role") {
    auto cfg = testutil::tiny_config();
    try {
        load_datasets(cfg, Strategy::Triplet);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("manifest") != std::string::npos);
    }
    testutil::TempDir tmp;
    cfg.unlabeled_manifest = tmp.path / "nope.csv";
    CHECK_THROWS(load_datasets(cfg, Strategy::SslBtThenT));
}

TEST_CASE("triplet strategy end to end on synthetic data") {
    testutil::TempDir tmp;
    const auto cfg = with_data(tmp.path);
    const auto data = load_datasets(cfg, Strategy::Triplet);
    CHECK(data.unlabeled.size() == 24);
    const auto run = run_strategy(Strategy::Triplet, cfg, data, cfg.output_dir);
    REQUIRE(run.stages.size() == 2);
    CHECK(run.stages[0].weights_tag == kThetaPrime);
    CHECK(run.stages[1].weights_tag == kPsiPrime);
    CHECK(run.stages[1].diagnostics["handoff_matches"] == true);
    CHECK(run.stages[1].diagnostics["teacher_hash"] == run.stages[0].weights_hash);
    REQUIRE(run.folds.size() == static_cast<std::size_t>(cfg.folds));
    for (const auto& f : run.folds) {
        CHECK(f.diagnostics["handoff_matches"] == true);
        CHECK(f.diagnostics["init_hash"] == run.stages[1].weights_hash);
    }
    CHECK(run.report.folds.size() == 5);
    CHECK(run.report.holdout.size() == 1);
    CHECK(fs::exists(cfg.output_dir / "report-triplet.json"));

    // A second run reuses every stage and reproduces the report.
    const auto again = run_strategy(Strategy::Triplet, cfg, data, cfg.output_dir);
    CHECK(again.stages[0].reused);
    CHECK(again.stages[1].reused);
    CHECK(again.folds[0].reused);
    CHECK(again.report.to_json() == run.report.to_json());
}

TEST_CASE("fold results do not depend on the number of jobs") {
    testutil::TempDir tmp;
    const auto cfg = with_data(tmp.path);
    const auto data = load_datasets(cfg, Strategy::SupervisedT);
    RunOptions two;
    two.jobs = 2;
    const auto a = run_strategy(Strategy::SupervisedT, cfg, data, tmp.path / "a");
    const auto b = run_strategy(Strategy::SupervisedT, cfg, data, tmp.path / "b", two);
    REQUIRE(a.folds.size() == b.folds.size());
    for (std::size_t f = 0; f < a.folds.size(); ++f) CHECK(a.folds[f].weights_hash == b.folds[f].weights_hash);
    CHECK(a.report.to_json() == b.report.to_json());
}

TEST_CASE("stage results round-trip through JSON") {
    StageResult r;
    r.stage = "ssl";
    r.weights_tag = kThetaPrime;
    r.checkpoint = "x/theta_prime.ckpt";
    r.weights_hash = "abc";
    r.loss_curve = {3.0, 2.5};
    r.seed = 9;
    r.fingerprint = "f";
    r.diagnostics["k"] = 1;
    const auto b = StageResult::from_json(r.to_json());
    CHECK(b.to_json() == r.to_json());
}

}  // TEST_SUITE
