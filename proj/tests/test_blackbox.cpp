// Black-box access tests: base64/pixel transport, the newline-delimited JSON
// protocol, the loopback TCP server, and the query-counting handle with its
// gradient-isolation guarantee.

#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "wavedef/blackbox.hpp"
#include "wavedef/dataset.hpp"
#include "wavedef/train.hpp"

using namespace wavedef;
using wavedef::testing::bits_equal;

namespace {

Classifier small_classifier(uint32_t seed = 5) {
    ClassifierSpec spec;
    spec.width = 8;
    return Classifier(spec, seed);
}

Tensor noise_batch(int64_t n, uint32_t seed) {
    Rng rng(seed);
    return Tensor::uniform({n, 3, 32, 32}, rng, 0.0f, 1.0f);
}

/// Reference probabilities: plain forward + softmax on a local tape.
Tensor reference_probs(const Classifier& model, const Tensor& batch) {
    Tape t;
    Value probs = softmax(t, model.forward(t, t.constant(batch)));
    return t.value(probs);
}

/// Toy responder: two "classes" split by mean brightness. Always sums to 1.
std::vector<float> brightness_responder_fn(const Tensor& chw) {
    double s = 0.0;
    for (int64_t i = 0; i < chw.numel(); ++i) s += chw.flat(i);
    const float p = static_cast<float>(s / static_cast<double>(chw.numel()));
    return {p, 1.0f - p};
}

}  // namespace

TEST_CASE("base64 matches the reference vectors", "[blackbox]") {
    auto enc = [](const std::string& s) {
        return detail::base64_encode(reinterpret_cast<const unsigned char*>(s.data()), s.size());
    };
    CHECK(enc("") == "");
    CHECK(enc("f") == "Zg==");
    CHECK(enc("fo") == "Zm8=");
    CHECK(enc("foo") == "Zm9v");
    CHECK(enc("foob") == "Zm9vYg==");
    CHECK(enc("fooba") == "Zm9vYmE=");
    CHECK(enc("foobar") == "Zm9vYmFy");

    auto dec = [](const std::string& s) {
        const std::vector<unsigned char> b = detail::base64_decode(s);
        return std::string(b.begin(), b.end());
    };
    CHECK(dec("Zm9vYmFy") == "foobar");
    CHECK(dec("Zg==") == "f");
    CHECK(dec("") == "");
    CHECK_THROWS_AS(detail::base64_decode("Zg="), ProtocolError);    // bad length
    CHECK_THROWS_AS(detail::base64_decode("Z?=="), ProtocolError);   // bad character
    CHECK_THROWS_AS(detail::base64_decode("=Zg="), ProtocolError);   // stray padding
    CHECK_THROWS_AS(detail::base64_decode("Zg==Zg=="), ProtocolError);  // data after padding
}

TEST_CASE("pixel transport is bit-exact", "[blackbox]") {
    Rng rng(41);
    Tensor img = Tensor::uniform({3, 8, 8}, rng, -2.0f, 2.0f);
    const std::string wire = detail::encode_pixels(img.data(), img.numel());
    const std::vector<float> back = detail::decode_pixels(wire, img.numel());
    REQUIRE(static_cast<int64_t>(back.size()) == img.numel());
    CHECK(std::memcmp(back.data(), img.data(), back.size() * sizeof(float)) == 0);

    CHECK_THROWS_AS(detail::decode_pixels(wire, img.numel() + 1), ProtocolError);
    CHECK_THROWS_AS(detail::decode_pixels("AAAA", 3), ProtocolError);
}

TEST_CASE("protocol lines answer valid requests and flag malformed ones", "[blackbox]") {
    Responder respond = brightness_responder_fn;

    SECTION("valid request") {
        Tensor img = Tensor::zeros({1, 2, 2});
        img.mutable_data()[0] = 1.0f;  // mean brightness 0.25
        nlohmann::json req;
        req["id"] = 42;
        req["shape"] = {1, 2, 2};
        req["pixels"] = detail::encode_pixels(img.data(), img.numel());
        const nlohmann::json resp = nlohmann::json::parse(handle_protocol_line(req.dump(), respond));
        CHECK(resp.at("id").get<int64_t>() == 42);
        REQUIRE_FALSE(resp.contains("error"));
        const std::vector<float> probs = resp.at("probs").get<std::vector<float>>();
        REQUIRE(probs.size() == 2);
        CHECK(probs[0] == Catch::Approx(0.25).margin(1e-7));
        CHECK(probs[1] == Catch::Approx(0.75).margin(1e-7));
    }

    SECTION("malformed requests get error responses, never crashes") {
        auto expect_error = [&](const std::string& line) {
            const nlohmann::json resp = nlohmann::json::parse(handle_protocol_line(line, respond));
            INFO("line: " << line << " -> " << resp.dump());
            CHECK(resp.contains("error"));
            CHECK_FALSE(resp.contains("probs"));
        };
        expect_error("not json at all");
        expect_error("{\"shape\": [1,2,2]}");                               // missing id
        expect_error("{\"id\": 1}");                                        // missing shape
        expect_error("{\"id\": 1, \"shape\": [2,2], \"pixels\": \"\"}");    // rank-2 shape
        expect_error("{\"id\": 1, \"shape\": [1,2,2], \"pixels\": \"AAAA\"}");  // short payload
        expect_error("{\"id\": 1, \"shape\": [1,2,2], \"pixels\": \"!!\"}");    // bad base64

        // A parseable id is echoed back even on failure.
        const nlohmann::json resp =
            nlohmann::json::parse(handle_protocol_line("{\"id\": 7, \"shape\": [0,1,1]}", respond));
        CHECK(resp.at("id").get<int64_t>() == 7);
        CHECK(resp.contains("error"));
    }
}

TEST_CASE("stdio transport serves a mixed request stream", "[blackbox]") {
    Tensor img = Tensor::zeros({1, 2, 2});  // mean brightness 0
    nlohmann::json req;
    req["id"] = 0;
    req["shape"] = {1, 2, 2};
    req["pixels"] = detail::encode_pixels(img.data(), img.numel());

    nlohmann::json req2 = req;
    req2["id"] = 2;
    std::istringstream in(req.dump() + "\n" + "garbage\n" + "\n" + req2.dump() + "\n");
    std::ostringstream out;
    serve_blackbox_stdio(brightness_responder_fn, in, out);

    std::istringstream lines(out.str());
    std::string line;
    std::vector<nlohmann::json> replies;
    while (std::getline(lines, line)) replies.push_back(nlohmann::json::parse(line));

    REQUIRE(replies.size() == 3);  // empty line ignored
    CHECK(replies[0].at("id").get<int64_t>() == 0);
    CHECK(replies[0].at("probs")[0].get<float>() == 0.0f);
    CHECK(replies[1].contains("error"));
    CHECK_FALSE(replies[2].contains("error"));
}

TEST_CASE("in-process handle matches direct inference and counts queries", "[blackbox]") {
    Classifier victim = small_classifier();
    victim.store().params()[0].set_requires_grad(true);  // victim itself is trainable
    BlackBoxHandle handle = BlackBoxHandle::in_process(victim);
    CHECK(handle.backend() == "in_process");
    CHECK(handle.query_count() == 0);

    Tensor batch = noise_batch(3, 9);
    Tensor probs = handle.query(batch);
    REQUIRE(probs.shape() == Shape{3, 10});
    CHECK(bits_equal(probs, reference_probs(victim, batch)));
    CHECK(handle.query_count() == 3);

    // Rows are probability vectors.
    for (int64_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < 10; ++c) s += probs.at({r, c});
        CHECK(s == Catch::Approx(1.0).margin(1e-5));
    }

    // Hard labels agree with argmax and add to the count.
    std::vector<int64_t> labels = handle.query_labels(batch);
    CHECK(labels == argmax_rows(probs));
    CHECK(handle.query_count() == 6);

    // Copies share the same monotone counter.
    BlackBoxHandle copy = handle;
    copy.query(noise_batch(2, 10));
    CHECK(handle.query_count() == 8);

    SECTION("rejects non-batch input") {
        CHECK_THROWS_AS(handle.query(Tensor::zeros({3, 32, 32})), std::invalid_argument);
    }
}

TEST_CASE("in-process handle is frozen and yields no gradients", "[blackbox]") {
    Classifier victim = small_classifier();
    for (Tensor& p : victim.store().params()) p.set_requires_grad(true);
    BlackBoxHandle handle = BlackBoxHandle::in_process(victim);

    Tensor batch = noise_batch(2, 21);
    Tensor before = handle.query(batch);

    // Training the original victim afterwards must not leak into the handle:
    // the frozen copy keeps the parameters it was created with.
    Dataset tiny = gen_synthetic_dataset({.num_classes = 10, .count = 20}, 3);
    train_classifier(victim, tiny, 1, 10, 1e-2f, 0);
    Tensor after = handle.query(batch);
    CHECK(bits_equal(before, after));
    CHECK_FALSE(bits_equal(reference_probs(victim, batch), before));

    // The victim's own parameters still track gradients; the handle's
    // internal tape never does (query would throw otherwise).
    CHECK(victim.store().params()[0].requires_grad());
}

TEST_CASE("remote handle round-trips through a loopback server", "[blackbox]") {
    Classifier victim = small_classifier();
    BlackBoxServer server(model_responder(victim.forward_fn()));
    const int port = server.start();
    REQUIRE(port > 0);

    BlackBoxHandle handle = BlackBoxHandle::remote("127.0.0.1", port);
    CHECK(handle.backend() == "remote");

    Tensor batch = noise_batch(5, 13);
    Tensor remote_probs = handle.query(batch);
    REQUIRE(remote_probs.shape() == Shape{5, 10});
    CHECK(handle.query_count() == 5);
    CHECK(server.served() == 5);

    // JSON float transport widens to double and narrows back losslessly.
    Tensor local_probs = reference_probs(victim, batch);
    CHECK(bits_equal(remote_probs, local_probs));

    // Labels through the wire.
    CHECK(handle.query_labels(batch) == argmax_rows(local_probs));
    CHECK(handle.query_count() == 10);

    server.stop();
    CHECK_THROWS_AS(handle.query(noise_batch(1, 1)), ProtocolError);
    CHECK(handle.query_count() == 10);  // failures never advance the count
}

TEST_CASE("protocol failures leave the query count unchanged", "[blackbox]") {
    SECTION("server-side responder failure") {
        BlackBoxServer server([](const Tensor&) -> std::vector<float> {
            throw std::runtime_error("victim offline");
        });
        const int port = server.start();
        BlackBoxHandle handle = BlackBoxHandle::remote("127.0.0.1", port);
        CHECK_THROWS_AS(handle.query(noise_batch(2, 2)), ProtocolError);
        CHECK(handle.query_count() == 0);
    }

    SECTION("responses that are not probability vectors are rejected") {
        BlackBoxServer server([](const Tensor&) -> std::vector<float> {
            return {0.9f, 0.9f};  // sums to 1.8
        });
        const int port = server.start();
        BlackBoxHandle handle = BlackBoxHandle::remote("127.0.0.1", port);
        CHECK_THROWS_AS(handle.query(noise_batch(2, 2)), std::runtime_error);
        CHECK(handle.query_count() == 0);
    }

    SECTION("nothing listening") {
        BlackBoxHandle handle = BlackBoxHandle::remote("127.0.0.1", 1);
        CHECK_THROWS_AS(handle.query(noise_batch(1, 2)), ProtocolError);
        CHECK(handle.query_count() == 0);
    }
}

TEST_CASE("large remote batches cross the chunking boundary", "[blackbox]") {
    Classifier victim = small_classifier();
    BlackBoxServer server(model_responder(victim.forward_fn()));
    const int port = server.start();
    BlackBoxHandle handle = BlackBoxHandle::remote("127.0.0.1", port);

    Tensor batch = noise_batch(130, 17);  // crosses the 128-per-connection chunk
    Tensor probs = handle.query(batch);
    REQUIRE(probs.shape() == Shape{130, 10});
    CHECK(handle.query_count() == 130);
    CHECK(bits_equal(probs, reference_probs(victim, batch)));
}
