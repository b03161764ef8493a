#ifndef TANLOSS_CHECKPOINT_HPP
#define TANLOSS_CHECKPOINT_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "network.hpp"
#include "optimizer.hpp"

namespace tanloss {

/*
 * Binary layout, all integers little-endian:
 *
 *   "TANL"  u32 version
 *   u32 tensor_count, then per tensor: u32 name_len, name bytes, u32 rows, u32 cols
 *   parameter values: every tensor in table order, row-major f64
 *   metadata: u32 len + fingerprint, u64 epoch, f64 best_validation_error,
 *             u64 init_seed, u64 shuffle_seed, u64 split_seed
 *   u8 has_optimizer; when 1: f64 lr, rho, eps, clip_norm, then the cache
 *             tensors in table order, row-major f64
 *   three vocabularies (text, verbs, states): u8 kind, u32 count, then
 *             per token u32 len + bytes
 */
inline constexpr std::array<char, 4> checkpoint_magic{'T', 'A', 'N', 'L'};
inline constexpr std::uint32_t checkpoint_version = 1;

struct CheckpointMeta {
    std::string fingerprint;
    std::uint64_t epoch = 0;
    double best_validation_error = std::numeric_limits<double>::infinity();
    std::uint64_t init_seed = 0;
    std::uint64_t shuffle_seed = 0;
    std::uint64_t split_seed = 0;

    bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
    ModelParams params;
    CheckpointMeta meta;
    std::optional<RmsPropState> optimizer;
    VocabSet vocabs;
};

namespace detail {

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    template <class Tensor>
    void tensor_row_major(const Tensor& t) {
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) f64(t(r, c));
    }

private:
    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    template <class Tensor>
    void tensor_row_major(Tensor& t) {
        need(static_cast<std::size_t>(t.size()) * 8);
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = f64();
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
    }
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

struct TableEntry {
    std::string name;
    std::uint32_t rows, cols;
};

inline LayerSizes sizes_from_table(const std::vector<TableEntry>& table) {
    auto dims = [&](const std::string& name) -> const TableEntry& {
        for (const auto& e : table)
            if (e.name == name) return e;
        throw FormatError("checkpoint shape table lacks tensor " + name);
    };
    return {dims("gru1.W_z").cols, dims("gru1.W_z").rows, dims("gru2.W_z").rows,
            dims("verb_head.W1").rows, dims("verb_head.W2").rows, dims("state_head.W2").rows};
}

inline void write_vocab(Writer& w, const Vocabulary& v) {
    w.u8(v.kind() == VocabKind::text ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (const auto& t : v.tokens()) w.str(t);
}

inline Vocabulary read_vocab(Reader& r) {
    const auto kind = r.u8() == 0 ? VocabKind::text : VocabKind::label;
    const std::uint32_t n = r.u32();
    std::vector<std::string> tokens;
    for (std::uint32_t i = 0; i < n; ++i) tokens.push_back(r.str());
    try {
        return Vocabulary(std::move(tokens), kind);
    } catch (const DataError& e) {
        throw FormatError(std::string("checkpoint vocabulary: ") + e.what());
    }
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    // Write to a sibling temp file first so a failed write never clobbers a good checkpoint.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + path.string());
        detail::Writer w(out);
        out.write(checkpoint_magic.data(), checkpoint_magic.size());
        w.u32(checkpoint_version);

        std::uint32_t count = 0;
        ckpt.params.for_each([&](const std::string&, const auto&) { ++count; });
        w.u32(count);
        ckpt.params.for_each([&](const std::string& name, const auto& t) {
            w.str(name);
            w.u32(static_cast<std::uint32_t>(t.rows()));
            w.u32(static_cast<std::uint32_t>(t.cols()));
        });
        ckpt.params.for_each([&](const std::string&, const auto& t) { w.tensor_row_major(t); });

        w.str(ckpt.meta.fingerprint);
        w.u64(ckpt.meta.epoch);
        w.f64(ckpt.meta.best_validation_error);
        w.u64(ckpt.meta.init_seed);
        w.u64(ckpt.meta.shuffle_seed);
        w.u64(ckpt.meta.split_seed);

        w.u8(ckpt.optimizer ? 1 : 0);
        if (ckpt.optimizer) {
            const auto& cfg = ckpt.optimizer->config;
            w.f64(cfg.lr);
            w.f64(cfg.rho);
            w.f64(cfg.eps);
            w.f64(cfg.clip_norm);
            ckpt.optimizer->cache.for_each([&](const std::string&, const auto& t) { w.tensor_row_major(t); });
        }
        detail::write_vocab(w, ckpt.vocabs.text);
        detail::write_vocab(w, ckpt.vocabs.verbs);
        detail::write_vocab(w, ckpt.vocabs.states);
        out.flush();
        if (!out) throw Error("write failed for checkpoint " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 4 || !std::equal(checkpoint_magic.begin(), checkpoint_magic.end(), bytes.begin())) {
        throw FormatError(path.string() + " is not a checkpoint (bad magic bytes)");
    }
    detail::Reader r(std::vector<char>(bytes.begin() + 4, bytes.end()));
    if (const auto version = r.u32(); version != checkpoint_version) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(checkpoint_version) + ")");
    }

    std::vector<detail::TableEntry> table(r.u32());
    for (auto& e : table) {
        e.name = r.str();
        e.rows = r.u32();
        e.cols = r.u32();
    }
    const LayerSizes sizes = detail::sizes_from_table(table);
    Checkpoint ckpt;
    try {
        ckpt.params = ModelParams(sizes);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint shape table is invalid: ") + e.what());
    }
    std::size_t k = 0;
    bool consistent = true;
    ckpt.params.for_each([&](const std::string& name, const auto& t) {
        consistent = consistent && k < table.size() && table[k].name == name &&
                     table[k].rows == static_cast<std::uint32_t>(t.rows()) &&
                     table[k].cols == static_cast<std::uint32_t>(t.cols());
        ++k;
    });
    if (!consistent || k != table.size()) throw FormatError("checkpoint shape table is inconsistent");
    ckpt.params.for_each([&](const std::string&, auto& t) { r.tensor_row_major(t); });

    ckpt.meta.fingerprint = r.str();
    ckpt.meta.epoch = r.u64();
    ckpt.meta.best_validation_error = r.f64();
    ckpt.meta.init_seed = r.u64();
    ckpt.meta.shuffle_seed = r.u64();
    ckpt.meta.split_seed = r.u64();
    if (ckpt.meta.fingerprint != sizes.fingerprint()) {
        throw FormatError("checkpoint fingerprint " + ckpt.meta.fingerprint + " disagrees with its tensors (" +
                          sizes.fingerprint() + ")");
    }

    if (r.u8() != 0) {
        RmsPropState state(ckpt.params, {});
        state.config.lr = r.f64();
        state.config.rho = r.f64();
        state.config.eps = r.f64();
        state.config.clip_norm = r.f64();
        state.cache.for_each([&](const std::string&, auto& t) { r.tensor_row_major(t); });
        ckpt.optimizer = std::move(state);
    }
    ckpt.vocabs.text = detail::read_vocab(r);
    ckpt.vocabs.verbs = detail::read_vocab(r);
    ckpt.vocabs.states = detail::read_vocab(r);
    if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload");
    return ckpt;
}

/// Throws FingerprintError naming both shapes when the checkpoint's layer sizes differ from `expected`.
inline void require_fingerprint(const Checkpoint& ckpt, const LayerSizes& expected) {
    const auto want = expected.fingerprint();
    if (ckpt.meta.fingerprint != want) {
        throw FingerprintError("checkpoint shape " + ckpt.meta.fingerprint + " does not match configured shape " + want);
    }
}

} // namespace tanloss

#endif
