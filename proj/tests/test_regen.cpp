// Regenerator-training tests: the learning-rate schedule, exact loss values
// at analytic fixed points, a double-precision oracle for the composite loss,
// CSV emission, and behavioral probes of the training loop (frozen surrogate,
// determinism, loss improvement).

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "wavedef/regen_train.hpp"

using namespace wavedef;
using wavedef::testing::bits_equal;

namespace {

Classifier small_surrogate(uint32_t seed = 3) {
    ClassifierSpec spec;
    spec.width = 4;
    return Classifier(spec, seed);
}

Regenerator small_regen(uint32_t seed = 4) {
    RegeneratorSpec spec;
    spec.base_width = 2;
    return Regenerator(spec, seed);
}

Tensor unit_batch(int64_t n, uint32_t seed) {
    Rng rng(seed);
    return Tensor::uniform({n, 3, 32, 32}, rng, 0.0f, 1.0f);
}

// Logits for a batch under a forward function, on a throwaway tape.
Tensor eval_logits(const ForwardFn& fn, const Tensor& x) {
    Tape t;
    return t.value(fn(t, t.constant(x)));
}

// Double-precision log-softmax of one row of float logits.
std::vector<double> log_softmax_row(const float* logits, int64_t c) {
    double m = logits[0];
    for (int64_t i = 1; i < c; ++i) m = std::max(m, static_cast<double>(logits[i]));
    double lse = 0.0;
    for (int64_t i = 0; i < c; ++i) lse += std::exp(logits[i] - m);
    lse = m + std::log(lse);
    std::vector<double> out(static_cast<size_t>(c));
    for (int64_t i = 0; i < c; ++i) out[static_cast<size_t>(i)] = logits[i] - lse;
    return out;
}

double cosine_oracle(const Tensor& a, const Tensor& b) {
    const int64_t n = a.dim(0), c = a.dim(1);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            dot += static_cast<double>(a.flat(i * c + j)) * b.flat(i * c + j);
            na += static_cast<double>(a.flat(i * c + j)) * a.flat(i * c + j);
            nb += static_cast<double>(b.flat(i * c + j)) * b.flat(i * c + j);
        }
        acc += dot / (std::sqrt(std::max(na, 1e-24)) * std::sqrt(std::max(nb, 1e-24)));
    }
    return acc / static_cast<double>(n);
}

double kl_oracle(const Tensor& p_logits, const Tensor& q_logits) {
    const int64_t n = p_logits.dim(0), c = p_logits.dim(1);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const std::vector<double> lp = log_softmax_row(p_logits.data() + i * c, c);
        const std::vector<double> lq = log_softmax_row(q_logits.data() + i * c, c);
        for (int64_t j = 0; j < c; ++j)
            acc += std::exp(lp[static_cast<size_t>(j)]) *
                   (lp[static_cast<size_t>(j)] - lq[static_cast<size_t>(j)]);
    }
    return acc / static_cast<double>(n);
}

double l1_oracle(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        acc += std::abs(static_cast<double>(a.flat(i)) - b.flat(i));
    return acc / static_cast<double>(a.dim(0));
}

}  // namespace

TEST_CASE("learning rate holds then decays linearly", "[regen]") {
    const double lr0 = 2e-4;
    for (int64_t e = 0; e < 20; ++e) CHECK(regen_lr_at(e, 60, lr0) == lr0);
    CHECK(regen_lr_at(20, 60, lr0) == Catch::Approx(lr0 * 2.0 / 3.0).epsilon(1e-12));
    CHECK(std::abs(regen_lr_at(40, 60, lr0) - lr0 / 3.0) < 1e-9);
    CHECK(regen_lr_at(59, 60, lr0) == Catch::Approx(lr0 / 60.0).epsilon(1e-12));

    CHECK_THROWS_AS(regen_lr_at(-1, 60, lr0), std::invalid_argument);
    CHECK_THROWS_AS(regen_lr_at(60, 60, lr0), std::invalid_argument);
    CHECK_THROWS_AS(regen_lr_at(0, 0, lr0), std::invalid_argument);
}

TEST_CASE("a perfect regenerator sits at the analytic fixed point", "[regen]") {
    // When both regenerated batches equal the original clean batch, cosine
    // similarity is exactly 1, the KL and spatial terms vanish, and the
    // weighted total is exactly -1.
    Classifier surrogate = small_surrogate();
    Tensor x = unit_batch(3, 8);

    RegenLosses losses = regen_losses(x, x, x, surrogate.forward_fn());
    CHECK(losses.l_cs == 1.0);
    CHECK(losses.l_kl == 0.0);
    CHECK(losses.l_sc == 0.0);
    CHECK(losses.total == -1.0);
}

TEST_CASE("orthogonal predictions zero out the cosine term", "[regen]") {
    // Surrogate that emits the flattened pixels as logits, so logit geometry
    // is fully controlled: regenerated rows live on component 0, originals on
    // component 1; their dot product (hence cosine) is exactly zero.
    ForwardFn flatten = [](Tape& t, Value v) {
        const Tensor& in = t.value(v);
        return reshape(t, v, {in.dim(0), in.numel() / in.dim(0)});
    };

    Tensor rc({2, 3, 4, 4});
    Tensor orig({2, 3, 4, 4});
    for (int64_t i = 0; i < 2; ++i) {
        rc.mutable_data()[i * 48 + 0] = 3.0f;
        orig.mutable_data()[i * 48 + 1] = 4.0f;
    }

    RegenLosses losses = regen_losses(rc, rc, orig, flatten);
    CHECK(losses.l_cs == 0.0);
    CHECK(losses.l_kl == 0.0);  // identical adv and clean regenerations
    // Each sample differs from the original by |3| + |-4| = 7; both terms of
    // the spatial loss contribute the batch mean 7.
    CHECK(losses.l_sc == 14.0);
    CHECK(losses.total == 14.0);

    SECTION("shape mismatches are rejected") {
        CHECK_THROWS_AS(regen_losses(rc, rc, unit_batch(2, 1), flatten), std::invalid_argument);
    }
}

TEST_CASE("composite loss matches a double-precision oracle", "[regen]") {
    Classifier surrogate = small_surrogate(11);
    Tensor rc = unit_batch(4, 21);
    Tensor ra = unit_batch(4, 22);
    Tensor orig = unit_batch(4, 23);

    const Tensor logit_rc = eval_logits(surrogate.forward_fn(), rc);
    const Tensor logit_ra = eval_logits(surrogate.forward_fn(), ra);
    const Tensor logit_orig = eval_logits(surrogate.forward_fn(), orig);

    const double cs = cosine_oracle(logit_rc, logit_orig);
    const double kl = kl_oracle(logit_ra, logit_rc);
    const double sc = l1_oracle(rc, orig) + l1_oracle(ra, orig);

    LossWeights w;
    w.lambda1 = 0.5f;
    w.lambda2 = 2.0f;
    w.lambda3 = 0.25f;

    RegenLosses losses = regen_losses(rc, ra, orig, surrogate.forward_fn(), w);
    CHECK(losses.l_cs == Catch::Approx(cs).margin(1e-5));
    CHECK(losses.l_kl == Catch::Approx(kl).margin(1e-5));
    CHECK(losses.l_sc == Catch::Approx(sc).margin(1e-4));
    CHECK(losses.total ==
          Catch::Approx(-0.5 * cs + 2.0 * kl + 0.25 * sc).margin(1e-4));
    CHECK(losses.l_kl >= 0.0);

    SECTION("negative weights are rejected") {
        w.lambda2 = -1.0f;
        CHECK_THROWS_AS(regen_losses(rc, ra, orig, surrogate.forward_fn(), w),
                        std::invalid_argument);
    }
}

TEST_CASE("history serializes to the canonical csv", "[regen]") {
    std::vector<RegenEpochStats> history;
    history.push_back({0, 0.5, 0.25, 1.5, 1.25, 0.001});
    history.push_back({1, 0.75, 0.125, 1.0, 0.375, 0.0005});
    CHECK(regen_history_csv(history) ==
          "epoch,L_cs,L_kl,L_sc,total,lr\n"
          "0,0.5,0.25,1.5,1.25,0.001\n"
          "1,0.75,0.125,1,0.375,0.0005\n");
}

TEST_CASE("training follows the schedule and leaves the surrogate intact", "[regen]") {
    Classifier surrogate = small_surrogate(5);
    std::vector<Tensor> frozen;
    for (const Tensor& p : surrogate.store().params()) frozen.push_back(p.detached());

    Regenerator regen = small_regen(6);
    std::vector<Tensor> init;
    for (const Tensor& p : regen.store().params()) init.push_back(p.detached());

    Tensor s_d = unit_batch(4, 31);
    Tensor s_da = s_d;
    {
        Rng rng(32);
        std::uniform_real_distribution<float> u(-8.0f / 255.0f, 8.0f / 255.0f);
        float* p = s_da.mutable_data();
        for (int64_t i = 0; i < s_da.numel(); ++i)
            p[i] = std::min(1.0f, std::max(0.0f, p[i] + u(rng)));
    }

    WnrConfig wnr;
    wnr.family = "haar";
    wnr.levels = 1;
    wnr.k = 40;

    RegenTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.lr = 1e-3f;
    cfg.seed = 9;

    std::vector<RegenEpochStats> history =
        train_regenerator(regen, surrogate.forward_fn(), s_d, s_da, wnr, {}, cfg);

    REQUIRE(history.size() == 2);
    for (size_t e = 0; e < history.size(); ++e) {
        CHECK(history[e].epoch == static_cast<int64_t>(e));
        // The recorded rate is the float rate the optimizer actually applied.
        CHECK(history[e].lr ==
              static_cast<float>(regen_lr_at(static_cast<int64_t>(e), cfg.epochs, cfg.lr)));
        CHECK(std::isfinite(history[e].total));
    }

    // Every regenerator parameter moved; every surrogate parameter did not.
    const std::vector<Tensor>& rp = regen.store().params();
    for (size_t i = 0; i < rp.size(); ++i) {
        INFO("regen param " << i);
        CHECK_FALSE(bits_equal(rp[i], init[i]));
    }
    const std::vector<Tensor>& sp = surrogate.store().params();
    for (size_t i = 0; i < sp.size(); ++i) {
        INFO("surrogate param " << i);
        CHECK(bits_equal(sp[i], frozen[i]));
    }

    SECTION("an identically seeded run reproduces the history") {
        Regenerator twin = small_regen(6);
        std::vector<RegenEpochStats> again =
            train_regenerator(twin, surrogate.forward_fn(), s_d, s_da, wnr, {}, cfg);
        REQUIRE(again.size() == history.size());
        for (size_t e = 0; e < again.size(); ++e) {
            CHECK(again[e].total == history[e].total);
            CHECK(again[e].l_cs == history[e].l_cs);
        }
        const std::vector<Tensor>& tp = twin.store().params();
        for (size_t i = 0; i < tp.size(); ++i) CHECK(bits_equal(tp[i], rp[i]));
    }
}

TEST_CASE("cosine-only training raises prediction alignment", "[regen][slow]") {
    Classifier surrogate = small_surrogate(7);
    Regenerator regen = small_regen(8);

    Tensor s_d = unit_batch(4, 41);

    WnrConfig wnr;
    wnr.family = "haar";
    wnr.levels = 1;
    wnr.k = 40;

    LossWeights w;
    w.lambda2 = 0.0f;
    w.lambda3 = 0.0f;

    RegenTrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 4;  // full-batch updates, so the trace is monotone-ish
    cfg.lr = 5e-3f;
    cfg.seed = 12;

    std::vector<RegenEpochStats> history =
        train_regenerator(regen, surrogate.forward_fn(), s_d, s_d, wnr, w, cfg);
    REQUIRE(history.size() == 8);
    INFO("l_cs first " << history.front().l_cs << " last " << history.back().l_cs);
    CHECK(history.back().l_cs > history.front().l_cs);
    // With zero weight on the other terms the total is just the negated
    // cosine term.
    for (const RegenEpochStats& s : history) CHECK(s.total == Catch::Approx(-s.l_cs).margin(1e-12));
}
