#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "triplet/backbone.hpp"
#include "triplet/checkpoint.hpp"
#include "triplet/errors.hpp"
#include "triplet/optim.hpp"
#include "triplet/runlog.hpp"

using namespace triplet;

namespace {

torch::Tensor random_batch(std::int64_t b, Shape3 s, std::uint64_t seed) {
    auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
    return at::rand({b, 1, s[0], s[1], s[2]}, g, torch::kFloat32);
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("published geometry maps a 55^3 volume to Z and C") {
    const auto cfg = default_config();
    auto ssl = init_model(cfg, HeadKind::Ssl, 0);
    ssl->eval();
    torch::NoGradGuard ng;
    const auto x = random_batch(2, cfg.input_shape, 1);
    CHECK(forward_features(ssl, x).sizes().vec() == std::vector<std::int64_t>{2, cfg.latent_dim});
    CHECK(forward_projected(ssl, x).sizes().vec() == std::vector<std::int64_t>{2, cfg.projection_dim});
    auto cls = init_model(cfg, HeadKind::Cls, 0);
    cls->eval();
    CHECK(forward_projected(cls, x).sizes().vec() == std::vector<std::int64_t>{2, cfg.num_classes});
    // The first block keeps the resolution, the other five halve it (ceiling).
    const auto shapes = ssl->features->block_shapes(cfg.input_shape);
    REQUIRE(shapes.size() == 6);
    const std::vector<std::int64_t> side{55, 28, 14, 7, 4, 2};
    for (std::size_t b = 0; b < 6; ++b) CHECK(shapes[b] == Shape3{side[b], side[b], side[b]});
}

TEST_CASE("channel-less batches are accepted") {
    auto cfg = testutil::tiny_config();
    auto m = init_model(cfg, HeadKind::Ssl, 0);
    m->eval();
    const auto x = random_batch(3, cfg.input_shape, 2);
    torch::NoGradGuard ng;
    CHECK(torch::equal(forward_features(m, x), forward_features(m, x.squeeze(1))));
}

TEST_CASE("inputs below eight voxels per axis are rejected") {
    auto cfg = testutil::tiny_config();
    cfg.input_shape = {4, 4, 4};
    CHECK_THROWS_AS(init_model(cfg, HeadKind::Ssl, 0), ConfigError);
}

TEST_CASE("a batch with the wrong spatial shape is a ShapeError") {
    auto cfg = testutil::tiny_config();
    auto m = init_model(cfg, HeadKind::Cls, 0);
    CHECK_THROWS_AS(forward_features(m, random_batch(2, {9, 8, 8}, 0)), ShapeError);
}

TEST_CASE("initialization is deterministic in the seed") {
    const auto cfg = testutil::tiny_config();
    auto a = init_model(cfg, HeadKind::Cls, 7), b = init_model(cfg, HeadKind::Cls, 7), c = init_model(cfg, HeadKind::Cls, 8);
    CHECK(parameter_checksum(a) == parameter_checksum(b));
    CHECK(parameter_checksum(a) != parameter_checksum(c));
    CHECK(parameter_count(a) > 0);
}

TEST_CASE("eval-mode outputs do not depend on the batch composition") {
    const auto cfg = testutil::tiny_config();
    auto m = init_model(cfg, HeadKind::Cls, 3);
    m->eval();
    torch::NoGradGuard ng;
    const auto x = random_batch(6, cfg.input_shape, 4);
    const auto full = forward_projected(m, x);
    for (std::int64_t i = 0; i < 6; ++i) {
        const auto one = forward_projected(m, x.slice(0, i, i + 1));
        CHECK((one - full.slice(0, i, i + 1)).abs().max().item<double>() < 1e-5);
    }
}

TEST_CASE("frozen models keep their weights and stay in eval mode") {
    const auto cfg = testutil::tiny_config();
    auto m = init_model(cfg, HeadKind::Ssl, 1);
    freeze(m);
    m->train();
    CHECK_FALSE(m->is_training());
    log::WarningCapture cap;
    CHECK(trainable_parameters(m).empty());
    CHECK(cap.contains("frozen"));
    const auto before = parameter_checksum(m);
    {
        torch::NoGradGuard ng;
        forward_projected(m, random_batch(4, cfg.input_shape, 5));
    }
    CHECK(parameter_checksum(m) == before);
}

TEST_CASE("gradients reach every trainable tensor") {
    const auto cfg = testutil::tiny_config();
    auto m = init_model(cfg, HeadKind::Cls, 2);
    m->train();
    forward_projected(m, random_batch(4, cfg.input_shape, 6)).pow(2).sum().backward();
    for (const auto& p : trainable_parameters(m)) {
        REQUIRE(p.grad().defined());
        REQUIRE(torch::isfinite(p.grad()).all().item<bool>());
    }
}

}  // TEST_SUITE

TEST_SUITE("checkpoint") {

TEST_CASE("save and load reproduce every tensor bit for bit") {
    testutil::TempDir tmp;
    const auto cfg = testutil::tiny_config();
    auto m = init_model(cfg, HeadKind::Cls, 11);
    auto w = snapshot(m, "psi_prime", 11);
    w.meta["note"] = "x";
    w.extra.push_back({"optim/0/m", torch::ones({3})});
    save_weights(w, tmp.path / "a.ckpt");
    const auto r = load_weights(tmp.path / "a.ckpt", cfg);
    CHECK(r.hash() == w.hash());
    CHECK(r.stage == "psi_prime");
    CHECK(r.seed == 11);
    CHECK(r.head == HeadKind::Cls);
    CHECK(r.meta["note"] == "x");
    REQUIRE(r.extra.size() == 1);
    CHECK(torch::equal(r.extra[0].value, torch::ones({3})));

    auto other = init_model(cfg, HeadKind::Cls, 12);
    apply_weights(other, r);
    CHECK(parameter_checksum(other) == parameter_checksum(m));
}

TEST_CASE("SSL weights seed only the extractor of a classifier") {
    const auto cfg = testutil::tiny_config();
    auto ssl = init_model(cfg, HeadKind::Ssl, 1);
    auto cls = init_model(cfg, HeadKind::Cls, 2);
    const auto head_before = snapshot(cls, "x", 0).find("head.fc2.weight")->clone();
    CHECK_THROWS_AS(apply_weights(cls, snapshot(ssl, "theta_prime", 1)), IncompatibilityError);
    apply_weights(cls, snapshot(ssl, "theta_prime", 1), true);
    const auto after = snapshot(cls, "x", 0);
    CHECK(torch::equal(*after.find("head.fc2.weight"), head_before));
    CHECK(torch::equal(*after.find("features.to_latent.weight"), *snapshot(ssl, "y", 0).find("features.to_latent.weight")));
}

TEST_CASE("corrupt and foreign files raise IntegrityError") {
    testutil::TempDir tmp;
    const auto cfg = testutil::tiny_config();
    auto m = init_model(cfg, HeadKind::Cls, 0);
    const auto path = tmp.path / "w.ckpt";
    save_weights(snapshot(m, "s", 0), path);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b, const char* name) {
        std::ofstream(tmp.path / name, std::ios::binary) << b;
        return tmp.path / name;
    };
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x5a;
    CHECK_THROWS_AS(load_weights(write(flipped, "flip.ckpt")), IntegrityError);
    CHECK_THROWS_AS(load_weights(write(bytes.substr(0, bytes.size() - 9), "short.ckpt")), IntegrityError);
    CHECK_THROWS_AS(load_weights(write("hello world, not a checkpoint", "text.ckpt")), IntegrityError);
    CHECK_THROWS_AS(load_weights(tmp.path / "missing.ckpt"), IntegrityError);
}

TEST_CASE("a checkpoint for another latent size is incompatible") {
    testutil::TempDir tmp;
    auto cfg = testutil::tiny_config();
    auto m = init_model(cfg, HeadKind::Cls, 0);
    save_weights(snapshot(m, "s", 0), tmp.path / "w.ckpt");
    auto other = cfg;
    other.latent_dim = 16;
    CHECK_THROWS_AS(load_weights(tmp.path / "w.ckpt", other), IncompatibilityError);
    auto wide = init_model(other, HeadKind::Cls, 0);
    CHECK_THROWS_AS(apply_weights(wide, load_weights(tmp.path / "w.ckpt")), IncompatibilityError);
}

TEST_CASE("CRC-32 reference value") {
    const std::string s = "123456789";
    CHECK(crc32(s.data(), s.size()) == 0xCBF43926u);
}

}  // TEST_SUITE

TEST_SUITE("optim") {

TEST_CASE("AdamW first step matches the closed form") {
    auto p = torch::tensor({1.0, -2.0}, torch::kFloat64);
    p.mutable_grad() = torch::tensor({0.5, -0.25}, torch::kFloat64);
    AdamW opt({p}, 0.1);
    opt.step(0.01);
    // After one step m_hat = g and v_hat = g^2, so the update is lr * sign(g)
    // up to eps, after the decoupled decay p *= 1 - lr * wd.
    const double e0 = 1.0 * (1 - 0.001) - 0.01 * 0.5 / (0.5 + 1e-8);
    const double e1 = -2.0 * (1 - 0.001) + 0.01 * 0.25 / (0.25 + 1e-8);
    CHECK(p[0].item<double>() == doctest::Approx(e0).epsilon(1e-12));
    CHECK(p[1].item<double>() == doctest::Approx(e1).epsilon(1e-12));
}

TEST_CASE("SGD momentum accumulates") {
    auto p = torch::tensor({0.0}, torch::kFloat64);
    SgdMomentum opt({p}, 0.0);
    for (int i = 0; i < 2; ++i) {
        p.mutable_grad() = torch::tensor({1.0}, torch::kFloat64);
        opt.step(0.1);
    }
    CHECK(p.item<double>() == doctest::Approx(-0.1 - 0.19));
}

TEST_CASE("LARS scales weight updates by the trust ratio") {
    auto w = torch::full({2, 2}, 3.0, torch::kFloat64);
    auto b = torch::tensor({1.0}, torch::kFloat64);
    w.mutable_grad() = torch::full({2, 2}, 0.5, torch::kFloat64);
    b.mutable_grad() = torch::tensor({2.0}, torch::kFloat64);
    Lars opt({w, b}, 0.0);
    opt.step(1.0);
    // |w| = 6, |g| = 1: rate = eta * 6, step = rate * 0.5.
    CHECK(w[0][0].item<double>() == doctest::Approx(3.0 - Lars::kEta * 6.0 * 0.5));
    CHECK(b.item<double>() == doctest::Approx(1.0 - Lars::kBiasRateScale * 2.0));
}

TEST_CASE("exported state resumes the exact trajectory") {
    auto run = [](int split) {
        auto p = torch::tensor({1.0, 2.0, 3.0}, torch::kFloat64);
        auto opt = std::make_unique<AdamW>(std::vector<torch::Tensor>{p}, 0.01);
        for (int i = 0; i < 6; ++i) {
            if (i == split) {
                const auto st = opt->state();
                opt = std::make_unique<AdamW>(std::vector<torch::Tensor>{p}, 0.01);
                opt->load_state(st);
            }
            p.mutable_grad() = p.detach() * 0.3 - 1.0;
            opt->step(0.05);
        }
        return p;
    };
    CHECK(torch::equal(run(-1), run(3)));
}

TEST_CASE("parameters without gradients are skipped") {
    auto p = torch::tensor({1.0}, torch::kFloat64);
    SgdMomentum opt({p}, 0.5);
    opt.step(0.1);
    CHECK(p.item<double>() == 1.0);
}

TEST_CASE("cosine schedule endpoints") {
    StageHyperParams hp;
    hp.learning_rate = 0.5;
    hp.iterations = 100;
    hp.schedule = LrSchedule::Cosine;
    CHECK(learning_rate_at(hp, 0) == doctest::Approx(0.5));
    CHECK(learning_rate_at(hp, 50) == doctest::Approx(0.25));
    CHECK(learning_rate_at(hp, 100) == doctest::Approx(0.0));
    hp.schedule = LrSchedule::Constant;
    CHECK(learning_rate_at(hp, 77) == 0.5);
}

TEST_CASE("factory picks the configured optimizer") {
    StageHyperParams hp;
    hp.optimizer = OptimizerKind::Lars;
    auto p = torch::zeros({2, 2});
    CHECK(dynamic_cast<Lars*>(make_optimizer(hp, {p}).get()) != nullptr);
    hp.optimizer = OptimizerKind::AdamW;
    CHECK(dynamic_cast<AdamW*>(make_optimizer(hp, {p}).get()) != nullptr);
}

}  // TEST_SUITE
