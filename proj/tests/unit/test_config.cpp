#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "triplet/config.hpp"
#include "triplet/errors.hpp"

using namespace triplet;

TEST_SUITE("config") {

TEST_CASE("defaults carry the published stage scalars") {
    const auto c = default_config();
    CHECK(c.ssl.learning_rate == 0.5);
    CHECK(c.ssl.weight_decay == 1.5e-6);
    CHECK(c.ssl.batch_size == 128);
    CHECK(c.ssl.iterations == 29300);
    CHECK(c.ssl.lambda == 0.005);
    CHECK(c.distill.learning_rate == 0.01);
    CHECK(c.distill.weight_decay == 1.5e-6);
    CHECK(c.distill.batch_size == 128);
    CHECK(c.distill.iterations == 600);
    CHECK(c.distill.lambda == 0.001);
    CHECK(c.finetune.learning_rate == 0.0005);
    CHECK(c.finetune.weight_decay == 1e-5);
    CHECK(c.finetune.batch_size == 64);
    CHECK(c.finetune.iterations == 150);
    CHECK(c.supervised.learning_rate == 0.01);
    CHECK(c.supervised.weight_decay == 1e-5);
    CHECK(c.supervised.batch_size == 64);
    CHECK(c.supervised.iterations == 150);
    CHECK(c.supervised_pretrain.learning_rate == 0.01);
    CHECK(c.supervised_pretrain.weight_decay == 1.5e-6);
    CHECK(c.supervised_pretrain.batch_size == 128);
    CHECK(c.supervised_pretrain.iterations == 600);
    CHECK(c.num_classes == 3);
    CHECK(c.input_shape == Shape3{55, 55, 55});
    CHECK(c.latent_dim == 512);
    CHECK(c.projection_dim == 2048);
    CHECK(c.distill_temperature == 1.0);
    CHECK(c.center_embeddings);
    CHECK(validate(c).empty());
}

TEST_CASE("desk profile scales down sizes and iterations") {
    const auto d = desk_profile();
    CHECK(validate(d).empty());
    CHECK(d.synthetic.volume_shape == Shape3{32, 32, 32});
    CHECK(d.ssl.iterations == 2000);
    CHECK(d.distill.iterations == 300);
    CHECK(d.finetune.iterations == 100);
    CHECK(d.ssl.batch_size == 32);
    CHECK(d.distill.batch_size == 32);
    CHECK(d.finetune.batch_size == 32);
    CHECK(d.synthetic.n_unlabeled == 2000);
    CHECK(d.synthetic.n_task == 600);
    CHECK(d.synthetic.n_target == 150);
}

TEST_CASE("empty document yields the full defaults") {
    CHECK(parse_config("") == default_config());
}

TEST_CASE("single-field override keeps every other default") {
    auto c = parse_config("seed = 42\n");
    CHECK(c.seed == 42);
    c.seed = default_config().seed;
    CHECK(c == default_config());
}

TEST_CASE("stage tables override stage fields") {
    const auto c = parse_config("[finetune]\nlearning_rate = 0.001\nearly_stopping_patience = 5\n");
    CHECK(c.finetune.learning_rate == 0.001);
    CHECK(c.finetune.early_stopping_patience == 5);
    CHECK(c.finetune.batch_size == 64);
}

TEST_CASE("profile key selects the preset") {
    CHECK(parse_config("profile = \"desk\"\n") == desk_profile());
    CHECK(parse_config("", Profile::Desk) == desk_profile());
}

TEST_CASE("batch size 1 for ssl is a validation error") {
    CHECK_THROWS_AS(parse_config("[ssl]\nbatch_size = 1\n"), ValidationError);
}

TEST_CASE("validation lists every violation") {
    try {
        parse_config("num_classes = 1\ninput_shape = [4, 4, 4]\n[distill]\nlambda = 2.0\n[ssl]\niterations = 0\n");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.violations().size() >= 6);
    }
}

TEST_CASE("syntax errors, type errors and unknown keys name the key") {
    CHECK_THROWS_AS(parse_config("seed = [\n"), ConfigError);
    try {
        parse_config("[ssl]\nlearning_rat = 0.1\n");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("ssl.learning_rat") != std::string::npos);
    }
    try {
        parse_config("latent_dim = \"big\"\n");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "latent_dim");
    }
}

TEST_CASE("malformed inputs always produce a diagnostic") {
    const char* inputs[] = {"=", "[[", "seed = -1", "folds = 1.5", "[paths]\nfoo = 1", "profile = \"huge\"",
                            "input_shape = [1, 2]", "[ssl]\noptimizer = \"rmsprop\"", "\x01\x02", "split_ratios = [1, 0, 0]"};
    for (const char* in : inputs) {
        CAPTURE(in);
        CHECK_THROWS_AS(parse_config(in), Error);
    }
}

TEST_CASE("serialization round-trips") {
    for (auto c : {default_config(), desk_profile(), testutil::tiny_config()}) {
        c.seed = 1234;
        c.kl_direction = KlDirection::TeacherStudent;
        c.center_embeddings = false;
        c.finetune.early_stopping_patience = std::nullopt;
        c.unlabeled_manifest = "/data/u.csv";
        CHECK(parse_config(to_toml(c)) == c);
    }
}

TEST_CASE("load_config resolves manifests and honours the output override") {
    testutil::TempDir dir;
    const auto path = dir.path / "exp.toml";
    std::ofstream(path) << "[paths]\ntarget_manifest = \"t.csv\"\noutput_dir = \"out\"\n";
    auto c = load_config(path);
    CHECK(c.target_manifest == dir.path / "t.csv");
    CHECK(c.output_dir == "out");
    ::setenv("TRIPLET_OUTPUT_DIR", "/tmp/elsewhere", 1);
    c = load_config(path);
    ::unsetenv("TRIPLET_OUTPUT_DIR");
    CHECK(c.output_dir == "/tmp/elsewhere");
    CHECK_THROWS_AS(load_config(dir.path / "missing.toml"), ConfigError);
}

TEST_CASE("fingerprints track the relevant fields") {
    auto a = desk_profile();
    auto b = a;
    b.seed = 99;
    CHECK(architecture_fingerprint(a) == architecture_fingerprint(b));
    b.latent_dim = 64;
    CHECK(architecture_fingerprint(a) != architecture_fingerprint(b));
    b = a;
    b.finetune.learning_rate *= 2;
    CHECK(stage_fingerprint(a, "ssl") == stage_fingerprint(b, "ssl"));
    CHECK(stage_fingerprint(a, "finetune") != stage_fingerprint(b, "finetune"));
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

}  // TEST_SUITE
