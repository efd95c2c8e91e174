#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rudra/errors.hpp"
#include "rudra/model.hpp"
#include "rudra/protocol.hpp"

namespace rudra {

inline constexpr char kCheckpointMagic[4] = {'R', 'D', 'R', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class ByteReader {
public:
    ByteReader(std::string buf, std::string origin)
        : buf_(std::move(buf)), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    void raw(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw ParseError(origin_ + ": truncated checkpoint");
    }

    std::string buf_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Byte image: magic, format version, model descriptor (layer sizes and
/// hidden activations), flat weights, server timestamp. All integers
/// little-endian.
inline std::string encode_checkpoint(const VersionedWeights& vw) {
    const ModelSpec& spec = vw.weights.spec;
    if (spec.layer_sizes.size() < 2 || vw.weights.values.size() != spec.param_count())
        throw ShapeError("checkpoint: weights do not match their model spec");
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(spec.layer_sizes.size()));
    for (std::size_t s : spec.layer_sizes) detail::put_u64(out, s);
    detail::put_u32(out, static_cast<std::uint32_t>(spec.hidden_activations.size()));
    for (Activation a : spec.hidden_activations)
        out.push_back(static_cast<char>(static_cast<std::uint8_t>(a)));
    const std::vector<std::uint8_t> blob = serialize_weights(vw.weights.values);
    detail::put_u64(out, blob.size());
    out.append(reinterpret_cast<const char*>(blob.data()), blob.size());
    detail::put_u64(out, vw.timestamp);
    return out;
}

inline VersionedWeights decode_checkpoint(const std::string& buf, const std::string& origin) {
    if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
        throw ParseError(origin + ": bad checkpoint magic");
    detail::ByteReader r(buf.substr(4), origin);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw ParseError(origin + ": unsupported checkpoint version " + std::to_string(version));

    const std::uint32_t num_layers = r.u32();
    if (num_layers < 2 || num_layers > 1u << 16)
        throw ParseError(origin + ": implausible layer count " + std::to_string(num_layers));
    std::vector<std::size_t> sizes(num_layers);
    for (auto& s : sizes) s = static_cast<std::size_t>(r.u64());
    const std::uint32_t num_acts = r.u32();
    if (num_acts + 2 != num_layers)
        throw ParseError(origin + ": activation count does not match layer count");
    std::vector<Activation> acts(num_acts);
    for (auto& a : acts) {
        std::uint8_t code = 0;
        r.raw(&code, 1);
        if (code > static_cast<std::uint8_t>(Activation::Relu))
            throw ParseError(origin + ": unknown activation code " + std::to_string(code));
        a = static_cast<Activation>(code);
    }
    ModelSpec spec;
    try {
        spec = ModelSpec(std::move(sizes), std::move(acts));
    } catch (const ConfigError& e) {
        throw ParseError(origin + ": invalid model descriptor (" + e.what() + ")");
    }

    const std::uint64_t blob_len = r.u64();
    std::vector<std::uint8_t> blob(blob_len);
    r.raw(blob.data(), blob_len);

    VersionedWeights vw;
    vw.weights.spec = spec;
    vw.weights.values = deserialize_weights(blob.data(), blob.size());
    if (vw.weights.values.size() != spec.param_count())
        throw ParseError(origin + ": weight count " + std::to_string(vw.weights.values.size()) +
                         " does not match model (" + std::to_string(spec.param_count()) + ")");
    vw.timestamp = r.u64();
    if (r.remaining() != 0) throw ParseError(origin + ": trailing bytes after checkpoint");
    return vw;
}

inline void save_checkpoint(const std::string& path, const VersionedWeights& vw) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError(path + ": cannot write");
    const std::string bytes = encode_checkpoint(vw);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError(path + ": write failed");
}

inline VersionedWeights load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path + ": cannot open");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(buf, path);
}

}  // namespace rudra
