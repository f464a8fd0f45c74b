#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wavedef/common.hpp"
#include "wavedef/models.hpp"
#include "wavedef/tensor.hpp"

namespace wavedef {

/// Raised for wire-protocol violations (malformed payloads, bad responses).
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline const char* kB64Alphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const unsigned char* data, size_t n) {
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (size_t i = 0; i < n; i += 3) {
        const unsigned b0 = data[i];
        const unsigned b1 = i + 1 < n ? data[i + 1] : 0;
        const unsigned b2 = i + 2 < n ? data[i + 2] : 0;
        out.push_back(kB64Alphabet[b0 >> 2]);
        out.push_back(kB64Alphabet[((b0 & 0x3) << 4) | (b1 >> 4)]);
        out.push_back(i + 1 < n ? kB64Alphabet[((b1 & 0xf) << 2) | (b2 >> 6)] : '=');
        out.push_back(i + 2 < n ? kB64Alphabet[b2 & 0x3f] : '=');
    }
    return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (text.size() % 4 != 0) throw ProtocolError("base64: length not a multiple of 4");
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    for (size_t i = 0; i < text.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            const char c = text[i + j];
            if (c == '=') {
                if (i + 4 != text.size() || j < 2) throw ProtocolError("base64: stray padding");
                v[j] = 0;
                pad += 1;
            } else {
                v[j] = value_of(c);
                if (v[j] < 0) throw ProtocolError("base64: invalid character");
                if (pad > 0) throw ProtocolError("base64: data after padding");
            }
        }
        out.push_back(static_cast<unsigned char>((v[0] << 2) | (v[1] >> 4)));
        if (pad < 2) out.push_back(static_cast<unsigned char>(((v[1] & 0xf) << 4) | (v[2] >> 2)));
        if (pad < 1) out.push_back(static_cast<unsigned char>(((v[2] & 0x3) << 6) | v[3]));
    }
    return out;
}

/// Bit-exact little-endian float32 encoding of a CHW image.
inline std::string encode_pixels(const float* data, int64_t n) {
    static_assert(sizeof(float) == 4);
    return base64_encode(reinterpret_cast<const unsigned char*>(data),
                         static_cast<size_t>(n) * 4);
}

inline std::vector<float> decode_pixels(const std::string& b64, int64_t expected) {
    const std::vector<unsigned char> bytes = base64_decode(b64);
    if (bytes.size() != static_cast<size_t>(expected) * 4)
        throw ProtocolError("pixels: got " + std::to_string(bytes.size()) + " bytes, expected " +
                            std::to_string(expected * 4));
    std::vector<float> out(static_cast<size_t>(expected));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

}  // namespace detail

/// Server-side answer to one image query: a probability vector.
using Responder = std::function<std::vector<float>(const Tensor& chw)>;

/// Builds a responder that runs a frozen model and softmaxes its logits.
inline Responder model_responder(ForwardFn forward) {
    return [forward = std::move(forward)](const Tensor& chw) {
        Tensor batch({1, chw.dim(0), chw.dim(1), chw.dim(2)});
        std::copy(chw.data(), chw.data() + chw.numel(), batch.mutable_data());
        Tape t;
        Value probs = softmax(t, forward(t, t.constant(batch)));
        const Tensor& p = t.value(probs);
        return std::vector<float>(p.data(), p.data() + p.numel());
    };
}

/**
 * Wire protocol (newline-delimited JSON, one image per record):
 *   request  {"id": int, "shape": [C,H,W], "pixels": "<base64 LE float32>"}
 *   response {"id": int, "probs": [float, ...]}
 * Malformed requests get {"id": ..., "error": "..."} and the connection
 * continues.
 */
inline std::string handle_protocol_line(const std::string& line, const Responder& respond) {
    nlohmann::json out;
    try {
        const nlohmann::json req = nlohmann::json::parse(line);
        out["id"] = req.at("id").get<int64_t>();
        const std::vector<int64_t> shape = req.at("shape").get<std::vector<int64_t>>();
        if (shape.size() != 3 || shape[0] < 1 || shape[1] < 1 || shape[2] < 1)
            throw ProtocolError("shape must be [C,H,W]");
        const int64_t n = shape[0] * shape[1] * shape[2];
        const std::vector<float> pixels =
            detail::decode_pixels(req.at("pixels").get<std::string>(), n);
        Tensor img({shape[0], shape[1], shape[2]});
        std::copy(pixels.begin(), pixels.end(), img.mutable_data());
        out["probs"] = respond(img);
    } catch (const nlohmann::json::exception& e) {
        if (!out.contains("id")) out["id"] = -1;
        out["error"] = std::string("bad request: ") + e.what();
    } catch (const std::exception& e) {
        if (!out.contains("id")) out["id"] = -1;
        out["error"] = e.what();
    }
    return out.dump();
}

/// Serves the protocol over text streams (the stdio transport).
inline void serve_blackbox_stdio(const Responder& respond, std::istream& in, std::ostream& out) {
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out << handle_protocol_line(line, respond) << "\n";
        out.flush();
    }
}

/**
 * @brief Loopback TCP server speaking the black-box wire protocol.
 *
 * Binds an ephemeral 127.0.0.1 port, serves connections on a background
 * thread (sequentially), and shuts down cleanly on stop()/destruction.
 */
class BlackBoxServer {
public:
    explicit BlackBoxServer(Responder respond) : respond_(std::move(respond)) {}
    ~BlackBoxServer() { stop(); }

    /// Binds and starts serving; returns the chosen port.
    int start() {
        require_runtime(listen_fd_ < 0, "BlackBoxServer: already started");
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        require_runtime(listen_fd_ >= 0, "BlackBoxServer: socket() failed");
        const int opt = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &opt, sizeof(opt));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        require_runtime(::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0,
                        "BlackBoxServer: bind() failed");
        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        require_runtime(::listen(listen_fd_, 8) == 0, "BlackBoxServer: listen() failed");
        thread_ = std::thread([this] { accept_loop(); });
        return port_;
    }

    int port() const { return port_; }
    int64_t served() const { return served_.load(); }

    void stop() {
        if (listen_fd_ >= 0) {
            stopping_.store(true);
            ::shutdown(listen_fd_, SHUT_RDWR);
            ::close(listen_fd_);
            listen_fd_ = -1;
        }
        if (thread_.joinable()) thread_.join();
    }

private:
    void accept_loop() {
        while (!stopping_.load()) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) break;  // listener closed
            std::string buf;
            char chunk[4096];
            for (;;) {
                const ssize_t got = ::read(fd, chunk, sizeof(chunk));
                if (got <= 0) break;
                buf.append(chunk, static_cast<size_t>(got));
                size_t nl;
                while ((nl = buf.find('\n')) != std::string::npos) {
                    const std::string line = buf.substr(0, nl);
                    buf.erase(0, nl + 1);
                    if (line.empty()) continue;
                    const std::string reply = handle_protocol_line(line, respond_) + "\n";
                    // Count before sending: anyone who has received the reply
                    // must already see it reflected here.
                    served_.fetch_add(1);
                    size_t sent = 0;
                    while (sent < reply.size()) {
                        const ssize_t w = ::write(fd, reply.data() + sent, reply.size() - sent);
                        if (w <= 0) break;
                        sent += static_cast<size_t>(w);
                    }
                }
            }
            ::close(fd);
        }
    }

    Responder respond_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<int64_t> served_{0};
    std::thread thread_;
};

/**
 * @brief Prediction-only access to the victim model.
 *
 * Yields probability vectors (and argmax labels), never gradients: the
 * in-process backend holds a detached copy of the classifier parameters and
 * verifies on every query that nothing on its tape tracks gradients. The
 * remote backend speaks the wire protocol. query_count increases by the
 * batch size on success and is untouched by failed queries.
 */
class BlackBoxHandle {
public:
    static BlackBoxHandle in_process(const Classifier& model) {
        BlackBoxHandle h;
        h.backend_ = "in_process";
        auto frozen = std::make_shared<Classifier>(model);
        for (Tensor& p : frozen->store().params()) p = p.detached();
        h.model_ = std::move(frozen);
        return h;
    }

    static BlackBoxHandle remote(std::string host, int port) {
        BlackBoxHandle h;
        h.backend_ = "remote";
        h.host_ = std::move(host);
        h.port_ = port;
        return h;
    }

    /// Wraps any prediction-only pipeline (e.g. a defended model) so callers
    /// can treat it as one opaque black box with its own query counter.
    static BlackBoxHandle composite(std::function<Tensor(const Tensor&)> predict_probs) {
        BlackBoxHandle h;
        h.backend_ = "composite";
        h.fn_ = std::move(predict_probs);
        return h;
    }

    const std::string& backend() const { return backend_; }
    int64_t query_count() const { return queries_->load(); }

    /// NCHW batch in [0,1] -> (N, num_classes) probabilities.
    Tensor query(const Tensor& batch) const {
        require(batch.rank() == 4, "BlackBoxHandle::query: expected NCHW batch, got " +
                                       shape_str(batch.shape()));
        Tensor probs = backend_ == "in_process" ? query_local(batch)
                       : backend_ == "remote"   ? query_remote(batch)
                                                : fn_(batch);
        require_runtime(probs.rank() == 2 && probs.dim(0) == batch.dim(0),
                        "BlackBoxHandle: response shape " + shape_str(probs.shape()) +
                            " does not match batch of " + std::to_string(batch.dim(0)));
        // Contract check: rows are probability vectors.
        for (int64_t r = 0; r < probs.dim(0); ++r) {
            double s = 0.0;
            for (int64_t c = 0; c < probs.dim(1); ++c) s += probs.data()[r * probs.dim(1) + c];
            require_runtime(std::abs(s - 1.0) < 1e-5,
                            "BlackBoxHandle: response row does not sum to 1 (sum " +
                                std::to_string(s) + ")");
        }
        queries_->fetch_add(batch.dim(0));
        return probs;
    }

    /// Hard labels: argmax of the probability response.
    std::vector<int64_t> query_labels(const Tensor& batch) const {
        return argmax_rows(query(batch));
    }

private:
    Tensor query_local(const Tensor& batch) const {
        Tape t;
        Value probs = softmax(t, model_->forward(t, t.constant(batch)));
        // The gradient-isolation invariant, enforced on every query.
        for (int64_t i = 0; i < t.size(); ++i)
            require_runtime(!t.requires_grad(Value{static_cast<int32_t>(i)}),
                            "BlackBoxHandle: gradient-tracking node observed inside the black box");
        return t.value(probs);
    }

    Tensor query_remote(const Tensor& batch) const {
        // One connection per chunk: all requests are written before responses
        // are read, so the chunk size bounds the in-flight response volume
        // and keeps loopback socket buffers from deadlocking on huge batches.
        constexpr int64_t kChunk = 128;
        const int64_t n = batch.dim(0);
        std::vector<std::vector<float>> rows(static_cast<size_t>(n));
        for (int64_t at = 0; at < n; at += kChunk)
            query_remote_chunk(batch, at, std::min(kChunk, n - at), rows);

        const int64_t classes = static_cast<int64_t>(rows[0].size());
        Tensor probs({n, classes});
        float* p = probs.mutable_data();
        for (int64_t i = 0; i < n; ++i) {
            if (static_cast<int64_t>(rows[static_cast<size_t>(i)].size()) != classes)
                throw ProtocolError("BlackBoxHandle: ragged probability rows");
            std::copy(rows[static_cast<size_t>(i)].begin(), rows[static_cast<size_t>(i)].end(),
                      p + i * classes);
        }
        return probs;
    }

    void query_remote_chunk(const Tensor& batch, int64_t begin, int64_t take,
                            std::vector<std::vector<float>>& rows) const {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        require_runtime(fd >= 0, "BlackBoxHandle: socket() failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<uint16_t>(port_));
        if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
            ::close(fd);
            throw ProtocolError("BlackBoxHandle: bad host " + host_);
        }
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            ::close(fd);
            throw ProtocolError("BlackBoxHandle: cannot connect to " + host_ + ":" +
                                std::to_string(port_));
        }

        const int64_t C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
        const int64_t stride = C * H * W;
        std::string payload;
        for (int64_t i = begin; i < begin + take; ++i) {
            nlohmann::json req;
            req["id"] = i;
            req["shape"] = {C, H, W};
            req["pixels"] = detail::encode_pixels(batch.data() + i * stride, stride);
            payload += req.dump();
            payload.push_back('\n');
        }
        size_t sent = 0;
        while (sent < payload.size()) {
            const ssize_t w = ::write(fd, payload.data() + sent, payload.size() - sent);
            if (w <= 0) {
                ::close(fd);
                throw ProtocolError("BlackBoxHandle: short write");
            }
            sent += static_cast<size_t>(w);
        }
        ::shutdown(fd, SHUT_WR);

        std::string buf;
        char chunk[4096];
        int64_t received = 0;
        try {
            while (received < take) {
                const ssize_t got = ::read(fd, chunk, sizeof(chunk));
                if (got <= 0) throw ProtocolError("BlackBoxHandle: connection closed early");
                buf.append(chunk, static_cast<size_t>(got));
                size_t nl;
                while ((nl = buf.find('\n')) != std::string::npos && received < take) {
                    const std::string line = buf.substr(0, nl);
                    buf.erase(0, nl + 1);
                    const nlohmann::json resp = nlohmann::json::parse(line);
                    if (resp.contains("error"))
                        throw ProtocolError("BlackBoxHandle: server error: " +
                                            resp["error"].get<std::string>());
                    const int64_t id = resp.at("id").get<int64_t>();
                    if (id < begin || id >= begin + take || !rows[static_cast<size_t>(id)].empty())
                        throw ProtocolError("BlackBoxHandle: bad response id");
                    rows[static_cast<size_t>(id)] = resp.at("probs").get<std::vector<float>>();
                    if (rows[static_cast<size_t>(id)].empty())
                        throw ProtocolError("BlackBoxHandle: empty probs");
                    received += 1;
                }
            }
        } catch (const nlohmann::json::exception& e) {
            ::close(fd);
            throw ProtocolError(std::string("BlackBoxHandle: malformed response: ") + e.what());
        } catch (...) {
            ::close(fd);
            throw;
        }
        ::close(fd);
    }

    std::string backend_;
    std::shared_ptr<Classifier> model_;
    std::function<Tensor(const Tensor&)> fn_;
    std::string host_;
    int port_ = 0;
    std::shared_ptr<std::atomic<int64_t>> queries_ = std::make_shared<std::atomic<int64_t>>(0);
};

}  // namespace wavedef
