#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "wavedef/common.hpp"
#include "wavedef/models.hpp"
#include "wavedef/tensor.hpp"

namespace wavedef {

/**
 * Checkpoint byte format (all integers little-endian):
 *   magic "WDC1"
 *   u32 tag length, tag bytes          -- model identity string
 *   u32 parameter count
 *   per parameter:
 *     u32 name length, name bytes
 *     u32 rank, i64 dims[rank]
 *     u64 byte offset into the data section
 *   u64 data section length
 *   raw float32 buffers, concatenated in manifest order
 */
namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_i64(std::string& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }

/// Sequential reader that reports truncation as a corrupt-checkpoint error.
class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

    const char* take(size_t n) {
        require_runtime(pos_ + n <= bytes_.size(),
                        "checkpoint: truncated (wanted " + std::to_string(n) + " bytes at offset " +
                            std::to_string(pos_) + ", have " + std::to_string(bytes_.size()) + ")");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    uint32_t u32() {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4));
        return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
    }
    uint64_t u64() {
        uint64_t v = 0;
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(8));
        for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    std::string str(size_t n) { return std::string(take(n), n); }
    size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::string& bytes_;
    size_t pos_ = 0;
};

}  // namespace detail

/// Parsed checkpoint contents: identity tag plus named tensors.
struct Checkpoint {
    std::string tag;
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
};

inline std::string serialize_checkpoint(const std::string& tag, const ParamStore& store) {
    std::string out = "WDC1";
    detail::put_u32(out, static_cast<uint32_t>(tag.size()));
    out += tag;
    detail::put_u32(out, static_cast<uint32_t>(store.params().size()));
    uint64_t offset = 0;
    for (size_t i = 0; i < store.params().size(); ++i) {
        const std::string& name = store.names()[i];
        const Tensor& p = store.params()[i];
        detail::put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<uint32_t>(p.rank()));
        for (int64_t d : p.shape()) detail::put_i64(out, d);
        detail::put_u64(out, offset);
        offset += static_cast<uint64_t>(p.numel()) * 4;
    }
    detail::put_u64(out, offset);
    for (const Tensor& p : store.params()) {
        // float32 bit patterns are written verbatim; the target is little-endian
        // IEEE-754, matching every platform this project builds on.
        static_assert(sizeof(float) == 4);
        const size_t pos = out.size();
        out.resize(pos + static_cast<size_t>(p.numel()) * 4);
        std::memcpy(out.data() + pos, p.data(), static_cast<size_t>(p.numel()) * 4);
    }
    return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
    detail::ByteReader r(bytes);
    require_runtime(r.str(4) == "WDC1", "checkpoint: bad magic (corrupt or not a checkpoint)");
    Checkpoint ck;
    ck.tag = r.str(r.u32());
    const uint32_t count = r.u32();
    std::vector<uint64_t> offsets;
    std::vector<Shape> shapes;
    for (uint32_t i = 0; i < count; ++i) {
        ck.names.push_back(r.str(r.u32()));
        const uint32_t rank = r.u32();
        require_runtime(rank <= 8, "checkpoint: implausible rank " + std::to_string(rank));
        Shape s;
        for (uint32_t d = 0; d < rank; ++d) {
            s.push_back(r.i64());
            require_runtime(s.back() > 0 && s.back() < (int64_t{1} << 32),
                            "checkpoint: implausible dimension");
        }
        shapes.push_back(std::move(s));
        offsets.push_back(r.u64());
    }
    const uint64_t data_len = r.u64();
    require_runtime(r.remaining() == data_len,
                    "checkpoint: data section length mismatch (header says " +
                        std::to_string(data_len) + ", file has " +
                        std::to_string(r.remaining()) + ")");
    const char* data = r.take(data_len);
    for (uint32_t i = 0; i < count; ++i) {
        const int64_t n = numel(shapes[i]);
        require_runtime(offsets[i] + static_cast<uint64_t>(n) * 4 <= data_len,
                        "checkpoint: tensor '" + ck.names[i] + "' overruns the data section");
        Tensor t(shapes[i]);
        std::memcpy(t.mutable_data(), data + offsets[i], static_cast<size_t>(n) * 4);
        require_finite(t.data(), t.numel(), ("checkpoint tensor " + ck.names[i]).c_str());
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

/// Copies checkpoint tensors into a model's parameter store, verifying the
/// identity tag and the full name/shape manifest first.
inline void load_checkpoint_into(const Checkpoint& ck, const std::string& expected_tag,
                                 ParamStore& store) {
    require_runtime(ck.tag == expected_tag, "checkpoint: manifest mismatch: file is '" + ck.tag +
                                                "', model expects '" + expected_tag + "'");
    require_runtime(ck.names.size() == store.params().size(),
                    "checkpoint: manifest mismatch: file has " + std::to_string(ck.names.size()) +
                        " parameters, model has " + std::to_string(store.params().size()));
    for (size_t i = 0; i < ck.names.size(); ++i) {
        require_runtime(ck.names[i] == store.names()[i],
                        "checkpoint: manifest mismatch at parameter " + std::to_string(i) +
                            ": file '" + ck.names[i] + "', model '" + store.names()[i] + "'");
        require_runtime(ck.tensors[i].shape() == store.params()[i].shape(),
                        "checkpoint: shape mismatch for '" + ck.names[i] + "': file " +
                            shape_str(ck.tensors[i].shape()) + ", model " +
                            shape_str(store.params()[i].shape()));
    }
    for (size_t i = 0; i < ck.names.size(); ++i) {
        Tensor& p = store.params()[i];
        std::memcpy(p.mutable_data(), ck.tensors[i].data(),
                    static_cast<size_t>(p.numel()) * sizeof(float));
    }
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require_runtime(f.good(), "write_file: cannot open " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require_runtime(f.good(), "write_file: short write to " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require_runtime(f.good(), "read_file: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void save_checkpoint_file(const std::string& path, const std::string& tag,
                                 const ParamStore& store) {
    write_file(path, serialize_checkpoint(tag, store));
}

inline void load_checkpoint_file(const std::string& path, const std::string& expected_tag,
                                 ParamStore& store) {
    load_checkpoint_into(parse_checkpoint(read_file(path)), expected_tag, store);
}

}  // namespace wavedef
