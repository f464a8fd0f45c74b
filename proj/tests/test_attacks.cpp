// Attack tests: preset parameterization, exact identity at zero budget,
// definitional fgsm/bim equivalence, exhaustive budget verification, seeded
// determinism, and an end-to-end effectiveness run on a trained toy model.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstring>

#include "test_util.hpp"
#include "wavedef/attacks.hpp"
#include "wavedef/dataset.hpp"
#include "wavedef/train.hpp"

using namespace wavedef;
using wavedef::testing::bits_equal;

namespace {

Classifier toy_model(uint32_t seed = 7) {
    ClassifierSpec spec;
    spec.width = 8;
    return Classifier(spec, seed);
}

Tensor toy_images(int64_t n, uint32_t seed) {
    Rng rng(seed);
    return Tensor::uniform({n, 3, 32, 32}, rng, 0.0f, 1.0f);
}

std::vector<int64_t> model_labels(const Classifier& m, const Tensor& x) {
    return predict_labels(m.forward_fn(), x);
}

}  // namespace

TEST_CASE("attack presets encode the canonical parameters", "[attacks]") {
    AttackConfig fgsm = attack_preset("fgsm");
    CHECK(fgsm.iterations == 1);
    CHECK(fgsm.step_size == 8.0f / 255.0f);
    CHECK_FALSE(fgsm.random_start);

    AttackConfig bim = attack_preset("bim");
    CHECK(bim.iterations == 20);
    CHECK(bim.step_size == Catch::Approx((8.0 / 255.0) / 20.0));
    CHECK_FALSE(bim.random_start);

    AttackConfig pgd = attack_preset("pgd");
    CHECK(pgd.iterations == 20);
    CHECK(pgd.step_size == 2.0f / 255.0f);
    CHECK(pgd.random_start);
    CHECK(pgd.epsilon == 8.0f / 255.0f);

    SECTION("validation rejects malformed configs") {
        CHECK_THROWS_AS(attack_preset("cw"), std::invalid_argument);
        AttackConfig bad = attack_preset("pgd");
        bad.epsilon = -0.1f;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = attack_preset("bim");
        bad.iterations = 0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = attack_preset("bim");
        bad.step_size = 0.0f;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}

TEST_CASE("zero budget is a bit-exact identity", "[attacks]") {
    Classifier model = toy_model();
    Tensor x = toy_images(6, 3);
    const std::vector<int64_t> y = model_labels(model, x);

    for (const std::string kind : {"fgsm", "bim", "pgd"}) {
        AttackConfig cfg;
        cfg.kind = kind;
        cfg.epsilon = 0.0f;
        cfg.iterations = kind == "fgsm" ? 1 : 5;
        cfg.step_size = kind == "fgsm" ? 0.0f : 0.01f;  // nonzero step, zero ball
        cfg.random_start = kind == "pgd";
        INFO("kind " << kind);
        Tensor adv = craft(model.forward_fn(), x, y, cfg);
        CHECK(bits_equal(adv, x));
    }
}

TEST_CASE("bim with one epsilon-sized step is fgsm", "[attacks]") {
    Classifier model = toy_model();
    Tensor x = toy_images(5, 4);
    const std::vector<int64_t> y = model_labels(model, x);

    AttackConfig bim1;
    bim1.kind = "bim";
    bim1.epsilon = 8.0f / 255.0f;
    bim1.step_size = bim1.epsilon;
    bim1.iterations = 1;
    bim1.random_start = false;

    Tensor a = craft(model.forward_fn(), x, y, bim1);
    Tensor b = craft(model.forward_fn(), x, y, attack_preset("fgsm"));
    CHECK(bits_equal(a, b));
    CHECK_FALSE(bits_equal(a, x));  // the step actually moved pixels
}

TEST_CASE("pgd without random start collapses to bim", "[attacks]") {
    Classifier model = toy_model();
    Tensor x = toy_images(4, 9);
    const std::vector<int64_t> y = model_labels(model, x);

    AttackConfig pgd = attack_preset("pgd");
    pgd.random_start = false;
    AttackConfig bim = attack_preset("bim");
    bim.step_size = pgd.step_size;
    bim.iterations = pgd.iterations;

    CHECK(bits_equal(craft(model.forward_fn(), x, y, pgd),
                     craft(model.forward_fn(), x, y, bim)));
}

TEST_CASE("budget holds exhaustively for every kind", "[attacks]") {
    Classifier model = toy_model();
    Tensor x = toy_images(8, 5);
    const std::vector<int64_t> y = model_labels(model, x);

    for (const std::string kind : {"fgsm", "bim", "pgd"}) {
        AttackConfig cfg = attack_preset(kind);
        INFO("kind " << kind);
        Tensor adv = craft(model.forward_fn(), x, y, cfg);
        CHECK_NOTHROW(verify_attack_budget(x, adv, cfg.epsilon));
        CHECK_FALSE(bits_equal(adv, x));

        // Max-abs perturbation actually approaches the budget for sign-step
        // attacks (they move most pixels the full epsilon).
        float max_delta = 0.0f;
        for (int64_t i = 0; i < x.numel(); ++i)
            max_delta = std::max(max_delta, std::abs(adv.flat(i) - x.flat(i)));
        CHECK(max_delta <= cfg.epsilon + 1e-7f);
        CHECK(max_delta > cfg.epsilon * 0.5f);
    }

    SECTION("verifier catches violations") {
        Tensor adv = x;
        adv.mutable_data()[0] = std::min(1.0f, x.flat(0) + 0.2f);
        CHECK_THROWS_AS(verify_attack_budget(x, adv, 8.0f / 255.0f), std::runtime_error);
    }
}

TEST_CASE("pgd is deterministic per seed and varies across seeds", "[attacks]") {
    Classifier model = toy_model();
    Tensor x = toy_images(4, 6);
    const std::vector<int64_t> y = model_labels(model, x);

    AttackConfig cfg = attack_preset("pgd");
    cfg.iterations = 3;
    cfg.seed = 100;
    Tensor a = craft(model.forward_fn(), x, y, cfg);
    Tensor b = craft(model.forward_fn(), x, y, cfg);
    CHECK(bits_equal(a, b));

    cfg.seed = 101;
    CHECK_FALSE(bits_equal(craft(model.forward_fn(), x, y, cfg), a));
}

TEST_CASE("each sample's trajectory is independent of its batch", "[attacks]") {
    Classifier model = toy_model();
    Tensor x = toy_images(33, 8);  // crosses the 32-image chunk boundary
    const std::vector<int64_t> y = model_labels(model, x);

    AttackConfig cfg = attack_preset("bim");
    cfg.iterations = 2;
    Tensor adv = craft(model.forward_fn(), x, y, cfg);

    for (int64_t i : {int64_t(0), int64_t(31), int64_t(32)}) {
        Tensor solo({1, 3, 32, 32});
        std::copy(x.data() + i * 3072, x.data() + (i + 1) * 3072, solo.mutable_data());
        Tensor solo_adv = craft(model.forward_fn(), solo, {y[static_cast<size_t>(i)]}, cfg);
        INFO("sample " << i);
        CHECK(std::memcmp(solo_adv.data(), adv.data() + i * 3072, 3072 * sizeof(float)) == 0);
    }
}

TEST_CASE("malformed craft inputs are rejected", "[attacks]") {
    Classifier model = toy_model();
    Tensor x = toy_images(2, 2);

    CHECK_THROWS_AS(craft(model.forward_fn(), x, {0}, attack_preset("fgsm")),
                    std::invalid_argument);  // label count mismatch

    Tensor bad = x;
    bad.mutable_data()[0] = 1.5f;
    CHECK_THROWS_AS(craft(model.forward_fn(), bad, {0, 1}, attack_preset("fgsm")),
                    std::invalid_argument);  // out-of-domain pixels

    CHECK_THROWS_AS(craft(model.forward_fn(), Tensor::zeros({3, 32, 32}), {0},
                          attack_preset("fgsm")),
                    std::invalid_argument);  // not a batch
}

TEST_CASE("pgd degrades a trained model's accuracy", "[attacks][slow]") {
    // Train a small classifier on procedural shapes until it clearly beats
    // chance, then attack with its own labels (the black-box protocol).
    SyntheticSpec spec;
    spec.count = 256;
    Dataset train = gen_synthetic_dataset(spec, 17);
    Classifier model = toy_model(1);
    train_classifier(model, train, 5, 32, 2e-3f, 3);

    Dataset eval = gen_synthetic_dataset({.num_classes = 10, .count = 96}, 18);
    const double clean_acc = eval_accuracy(model.forward_fn(), eval);
    REQUIRE(clean_acc > 50.0);  // learnable data, trained model

    const std::vector<int64_t> labels = model_labels(model, eval.images);
    Tensor adv = craft(model.forward_fn(), eval.images, labels, attack_preset("pgd"));
    verify_attack_budget(eval.images, adv, 8.0f / 255.0f);

    const double adv_acc = accuracy_percent(predict_labels(model.forward_fn(), adv), eval.labels);
    INFO("clean " << clean_acc << " adv " << adv_acc);
    CHECK(adv_acc < clean_acc);
}
