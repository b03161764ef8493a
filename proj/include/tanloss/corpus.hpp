#ifndef TANLOSS_CORPUS_HPP
#define TANLOSS_CORPUS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "types.hpp"

namespace tanloss {

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Text vocabularies carry a PAD entry; label vocabularies do not.
enum class VocabKind { text, label };

/**
 * Ordered token <-> index map. Indices are dense and 0-based; UNK is always
 * present, PAD only for text vocabularies.
 */
class Vocabulary {
public:
    static constexpr std::string_view unk_token = "UNK";
    static constexpr std::string_view pad_token = "PAD";

    Vocabulary() : Vocabulary({}, VocabKind::label) {}

    /// Appends UNK (and PAD for text) when absent. Throws DataError on duplicates,
    /// naming the 1-based position of the repeated token.
    Vocabulary(std::vector<std::string> tokens, VocabKind kind) : tokens_(std::move(tokens)), kind_(kind) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            auto [it, inserted] = index_.emplace(tokens_[i], i);
            if (!inserted) {
                throw DataError("duplicate token '" + tokens_[i] + "' at line " + std::to_string(i + 1) +
                                " (first seen at line " + std::to_string(it->second + 1) + ")");
            }
        }
        unk_ = ensure(std::string(unk_token));
        if (kind_ == VocabKind::text) pad_ = ensure(std::string(pad_token));
    }

    std::size_t size() const { return tokens_.size(); }
    VocabKind kind() const { return kind_; }
    std::size_t unk_index() const { return unk_; }
    std::optional<std::size_t> pad_index() const { return pad_; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token(std::size_t index) const { return tokens_.at(index); }

    std::optional<std::size_t> find(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Unknown tokens resolve to unk_index().
    std::size_t index_of(const std::string& token) const { return find(token).value_or(unk_); }

    bool operator==(const Vocabulary& other) const { return kind_ == other.kind_ && tokens_ == other.tokens_; }

private:
    std::size_t ensure(const std::string& token) {
        if (auto found = find(token)) return *found;
        index_.emplace(token, tokens_.size());
        tokens_.push_back(token);
        return tokens_.size() - 1;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
    VocabKind kind_;
    std::size_t unk_ = 0;
    std::optional<std::size_t> pad_;
};

/// The three vocabularies of the pipeline.
struct VocabSet {
    Vocabulary text{{}, VocabKind::text};
    Vocabulary verbs{{}, VocabKind::label};
    Vocabulary states{{}, VocabKind::label};

    bool operator==(const VocabSet&) const = default;
};

inline Vocabulary load_vocab(const std::filesystem::path& path, VocabKind kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) throw DataError(path.string() + ": blank line " + std::to_string(line_no));
        tokens.push_back(line);
    }
    if (tokens.empty()) throw DataError(path.string() + ": vocabulary file is empty");
    try {
        return Vocabulary(std::move(tokens), kind);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

/// Writes every token, UNK/PAD included, one per line.
inline void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write vocabulary file " + path.string());
    for (const auto& t : vocab.tokens()) out << t << '\n';
    if (!out) throw DataError("write failed for " + path.string());
}

inline constexpr const char* text_vocab_file = "text.vocab";
inline constexpr const char* verb_vocab_file = "verbs.vocab";
inline constexpr const char* state_vocab_file = "states.vocab";

inline VocabSet load_vocab_dir(const std::filesystem::path& dir) {
    return {load_vocab(dir / text_vocab_file, VocabKind::text), load_vocab(dir / verb_vocab_file, VocabKind::label),
            load_vocab(dir / state_vocab_file, VocabKind::label)};
}

inline void save_vocab_dir(const VocabSet& vocabs, const std::filesystem::path& dir) {
    save_vocab(vocabs.text, dir / text_vocab_file);
    save_vocab(vocabs.verbs, dir / verb_vocab_file);
    save_vocab(vocabs.states, dir / state_vocab_file);
}

/// One-hot column; the PAD index (when given) encodes as all zeros.
inline std::vector<double> encode_one_hot(std::size_t index, std::size_t dim,
                                          std::optional<std::size_t> pad_index = std::nullopt) {
    if (index >= dim) {
        throw ShapeError("one-hot index " + std::to_string(index) + " out of range for dimension " +
                         std::to_string(dim));
    }
    std::vector<double> v(dim, 0.0);
    if (!(pad_index && *pad_index == index)) v[index] = 1.0;
    return v;
}

// ---------------------------------------------------------------------------
// Samples and batches
// ---------------------------------------------------------------------------

struct Sample {
    std::vector<std::size_t> tokens;
    std::vector<double> verb_label;  // multi-hot over the verb vocabulary
    std::vector<double> state_label; // multi-hot over the state vocabulary

    bool operator==(const Sample&) const = default;
};

/// Indices of the nonzero components of a multi-hot vector.
inline std::vector<std::size_t> active_indices(std::span<const double> multi_hot) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < multi_hot.size(); ++i)
        if (multi_hot[i] != 0.0) out.push_back(i);
    return out;
}

/**
 * Padded batch. token_matrix is row-major B x T where T = max(lengths);
 * positions at or beyond a row's length hold pad_index.
 */
struct Batch {
    std::vector<std::size_t> token_matrix;
    std::vector<std::size_t> lengths;
    std::size_t max_length = 0;
    std::size_t pad_index = 0;
    RowMatrix verb_labels;
    RowMatrix state_labels;

    std::size_t size() const { return lengths.size(); }
    std::size_t token(std::size_t row, std::size_t step) const { return token_matrix[row * max_length + step]; }
    std::span<const std::size_t> row_tokens(std::size_t row) const {
        return {token_matrix.data() + row * max_length, lengths[row]};
    }
};

/// Pads the given samples, in order, into a single batch.
inline Batch make_batch(std::span<const Sample* const> samples, std::size_t pad_index) {
    Batch b;
    b.pad_index = pad_index;
    if (samples.empty()) return b;
    const auto mv = static_cast<Eigen::Index>(samples.front()->verb_label.size());
    const auto ms = static_cast<Eigen::Index>(samples.front()->state_label.size());
    for (const Sample* s : samples) {
        if (s->tokens.empty()) throw DataError("sample with zero tokens cannot be batched");
        if (static_cast<Eigen::Index>(s->verb_label.size()) != mv ||
            static_cast<Eigen::Index>(s->state_label.size()) != ms) {
            throw ShapeError("label dimensions differ within a batch");
        }
        b.lengths.push_back(s->tokens.size());
        b.max_length = std::max(b.max_length, s->tokens.size());
    }
    const std::size_t rows = samples.size();
    b.token_matrix.assign(rows * b.max_length, pad_index);
    b.verb_labels.resize(static_cast<Eigen::Index>(rows), mv);
    b.state_labels.resize(static_cast<Eigen::Index>(rows), ms);
    for (std::size_t r = 0; r < rows; ++r) {
        const Sample& s = *samples[r];
        std::copy(s.tokens.begin(), s.tokens.end(), b.token_matrix.begin() + static_cast<std::ptrdiff_t>(r * b.max_length));
        std::copy(s.verb_label.begin(), s.verb_label.end(), row_span(b.verb_labels, static_cast<Eigen::Index>(r)).begin());
        std::copy(s.state_label.begin(), s.state_label.end(), row_span(b.state_labels, static_cast<Eigen::Index>(r)).begin());
    }
    return b;
}

inline Batch make_batch(std::span<const Sample> samples, std::size_t pad_index) {
    std::vector<const Sample*> ptrs;
    ptrs.reserve(samples.size());
    for (const auto& s : samples) ptrs.push_back(&s);
    return make_batch(std::span<const Sample* const>(ptrs), pad_index);
}

/// Consecutive batches in the given order (no shuffle); used for validation and evaluation.
inline std::vector<Batch> make_ordered_batches(std::span<const Sample> samples, std::size_t batch_size,
                                               std::size_t pad_index) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<Batch> out;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        out.push_back(make_batch(samples.subspan(start, std::min(batch_size, samples.size() - start)), pad_index));
    }
    return out;
}

/// Shuffles with `seed`, then cuts into batches of `batch_size` (last one may be short).
inline std::vector<Batch> make_batches(std::span<const Sample> samples, std::size_t batch_size, std::uint64_t seed,
                                       std::size_t pad_index) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<const Sample*> order;
    order.reserve(samples.size());
    for (const auto& s : samples) order.push_back(&s);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, order.size() - start);
        out.push_back(make_batch(std::span<const Sample* const>(order.data() + start, n), pad_index));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct DatasetSplit {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::uint64_t split_seed = 0;
};

/// Seeded shuffle; the first ceil(N * validation_fraction) shuffled samples become validation.
inline DatasetSplit split_dataset(std::span<const Sample> samples, double validation_fraction, std::uint64_t seed) {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("validation fraction must lie in (0, 1), got " + std::to_string(validation_fraction));
    }
    if (samples.size() < 2) throw DataError("at least 2 samples are required to split");
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    // Guard against 0.1 * 10000 = 1000.0000000000001 style products.
    const auto n_val = static_cast<std::size_t>(
        std::ceil(static_cast<double>(samples.size()) * validation_fraction - 1e-9));
    if (n_val == 0 || n_val >= samples.size()) {
        throw ConfigError("validation fraction " + std::to_string(validation_fraction) + " leaves an empty split for " +
                          std::to_string(samples.size()) + " samples");
    }
    DatasetSplit split;
    split.split_seed = seed;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_val ? split.validation : split.train).push_back(samples[order[i]]);
    }
    return split;
}

// ---------------------------------------------------------------------------
// JSONL ingestion
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> string_array(const nlohmann::json& record, const char* field, std::size_t line_no) {
    auto it = record.find(field);
    if (it == record.end()) {
        throw DataError("line " + std::to_string(line_no) + ": missing field \"" + field + "\"");
    }
    if (!it->is_array()) {
        throw DataError("line " + std::to_string(line_no) + ": field \"" + field + "\" is not a list");
    }
    std::vector<std::string> out;
    for (const auto& v : *it) {
        if (!v.is_string()) {
            throw DataError("line " + std::to_string(line_no) + ": field \"" + field + "\" holds a non-string");
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

inline std::vector<double> multi_hot(const std::vector<std::string>& items, const Vocabulary& vocab) {
    std::vector<double> v(vocab.size(), 0.0);
    for (const auto& item : items) v[vocab.index_of(item)] = 1.0;
    return v;
}

} // namespace detail

/// Parses one JSONL record. `line_no` is only used in error messages.
inline Sample parse_record(std::string_view line, const VocabSet& vocabs, std::size_t line_no = 1) {
    nlohmann::json record;
    try {
        record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    if (!record.is_object()) throw DataError("line " + std::to_string(line_no) + ": record is not an object");
    for (const auto& [key, value] : record.items()) {
        if (key != "tokens" && key != "verbs" && key != "states") {
            throw DataError("line " + std::to_string(line_no) + ": unexpected field \"" + key + "\"");
        }
    }
    const auto tokens = detail::string_array(record, "tokens", line_no);
    if (tokens.empty()) throw DataError("line " + std::to_string(line_no) + ": empty tokens field");

    Sample s;
    s.tokens.reserve(tokens.size());
    for (const auto& t : tokens) s.tokens.push_back(vocabs.text.index_of(t));
    s.verb_label = detail::multi_hot(detail::string_array(record, "verbs", line_no), vocabs.verbs);
    s.state_label = detail::multi_hot(detail::string_array(record, "states", line_no), vocabs.states);
    return s;
}

/// Blank lines are skipped; any other malformed line raises DataError with its line number.
inline std::vector<Sample> ingest_jsonl(const std::filesystem::path& path, const VocabSet& vocabs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset " + path.string());
    std::vector<Sample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            samples.push_back(parse_record(line, vocabs, line_no));
        } catch (const DataError& e) {
            throw DataError(path.string() + ": " + e.what());
        }
    }
    return samples;
}

inline std::string to_jsonl_record(const Sample& s, const VocabSet& vocabs) {
    nlohmann::json tokens = nlohmann::json::array();
    for (auto t : s.tokens) tokens.push_back(vocabs.text.token(t));
    nlohmann::json verbs = nlohmann::json::array();
    for (auto i : active_indices(s.verb_label)) verbs.push_back(vocabs.verbs.token(i));
    nlohmann::json states = nlohmann::json::array();
    for (auto i : active_indices(s.state_label)) states.push_back(vocabs.states.token(i));
    nlohmann::json record;
    record["tokens"] = std::move(tokens);
    record["verbs"] = std::move(verbs);
    record["states"] = std::move(states);
    return record.dump();
}

inline void write_jsonl(std::span<const Sample> samples, const VocabSet& vocabs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write dataset " + path.string());
    for (const auto& s : samples) out << to_jsonl_record(s, vocabs) << '\n';
    if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SyntheticConfig {
    std::size_t text_tokens = 60; // triggers + fillers, excluding UNK/PAD
    std::size_t verbs = 8;
    std::size_t states = 6;
    std::size_t count = 1000;
    std::size_t min_length = 4;
    std::size_t max_length = 10;
    std::size_t max_triggers = 2;
};

namespace synthetic {

inline const std::vector<std::string>& verb_names() {
    static const std::vector<std::string> names{"bake", "mix", "chop", "boil", "fry", "pour", "press", "wash"};
    return names;
}

inline const std::vector<std::string>& state_names() {
    static const std::vector<std::string> names{"cookedness", "temperature", "shape",
                                                "composition", "location", "cleanliness"};
    return names;
}

inline std::string verb_name(std::size_t i) {
    return i < verb_names().size() ? verb_names()[i] : "verb" + std::to_string(i);
}

inline std::string state_name(std::size_t i) {
    return i < state_names().size() ? state_names()[i] : "state" + std::to_string(i);
}

/// Fixed verb -> state-change table. Named entries whose states exceed the
/// configured state count fall back to {verb mod states}.
inline std::vector<std::vector<std::size_t>> state_table(std::size_t verbs, std::size_t states) {
    static const std::vector<std::vector<std::size_t>> named{
        {0, 1}, // bake -> cookedness, temperature
        {3},    // mix -> composition
        {2},    // chop -> shape
        {0, 1}, // boil -> cookedness, temperature
        {0},    // fry -> cookedness
        {4},    // pour -> location
        {2},    // press -> shape
        {5},    // wash -> cleanliness
    };
    std::vector<std::vector<std::size_t>> table(verbs);
    for (std::size_t v = 0; v < verbs; ++v) {
        if (v < named.size()) {
            for (auto s : named[v])
                if (s < states) table[v].push_back(s);
        }
        if (table[v].empty()) table[v].push_back(v % states);
    }
    return table;
}

inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words{"the",   "a",     "dough", "oven",  "bowl",   "pan",   "minutes",
                                                "until", "with",  "and",   "into",  "butter", "sugar", "flour",
                                                "eggs",  "onion", "water", "salt",  "slowly", "well"};
    return words;
}

/// Vocabularies depend only on sizes, never on the seed.
inline VocabSet make_vocabs(const SyntheticConfig& cfg) {
    std::vector<std::string> text;
    for (std::size_t v = 0; v < cfg.verbs; ++v) text.push_back(verb_name(v));
    for (std::size_t i = 0; text.size() < cfg.text_tokens; ++i) {
        text.push_back(i < filler_words().size() ? filler_words()[i] : "tok" + std::to_string(i));
    }
    std::vector<std::string> verbs, states;
    for (std::size_t v = 0; v < cfg.verbs; ++v) verbs.push_back(verb_name(v));
    for (std::size_t s = 0; s < cfg.states; ++s) states.push_back(state_name(s));
    return {Vocabulary(std::move(text), VocabKind::text), Vocabulary(std::move(verbs), VocabKind::label),
            Vocabulary(std::move(states), VocabKind::label)};
}

} // namespace synthetic

struct SyntheticCorpus {
    std::vector<Sample> samples;
    VocabSet vocabs;
};

/**
 * Each sentence hides 1..max_triggers distinct verb triggers among filler
 * tokens. The verb label is exactly the trigger set; the state label is the
 * union of the trigger verbs' table rows. Text-vocab index v < verbs is the
 * trigger for verb v; the remaining real tokens are fillers.
 */
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& cfg, std::uint64_t seed) {
    if (cfg.verbs == 0 || cfg.states == 0) throw ConfigError("synthetic corpus needs at least one verb and one state");
    if (cfg.text_tokens < cfg.verbs + 1) {
        throw ConfigError("text vocabulary of " + std::to_string(cfg.text_tokens) +
                          " tokens cannot host " + std::to_string(cfg.verbs) + " triggers plus filler");
    }
    if (cfg.min_length == 0 || cfg.max_length < cfg.min_length) throw ConfigError("invalid sentence length range");
    if (cfg.max_triggers == 0) throw ConfigError("max_triggers must be positive");

    SyntheticCorpus corpus{{}, synthetic::make_vocabs(cfg)};
    const auto table = synthetic::state_table(cfg.verbs, cfg.states);
    const std::size_t n_fillers = cfg.text_tokens - cfg.verbs;
    const std::size_t mv = corpus.vocabs.verbs.size();
    const std::size_t ms = corpus.vocabs.states.size();

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> length_dist(cfg.min_length, cfg.max_length);
    std::uniform_int_distribution<std::size_t> filler_dist(0, n_fillers - 1);
    std::vector<std::size_t> verb_pool(cfg.verbs);
    std::iota(verb_pool.begin(), verb_pool.end(), std::size_t{0});

    corpus.samples.reserve(cfg.count);
    for (std::size_t n = 0; n < cfg.count; ++n) {
        const std::size_t len = length_dist(rng);
        const std::size_t max_k = std::min({cfg.max_triggers, len, cfg.verbs});
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, max_k)(rng);

        std::shuffle(verb_pool.begin(), verb_pool.end(), rng);
        std::vector<std::size_t> positions(len);
        std::iota(positions.begin(), positions.end(), std::size_t{0});
        std::shuffle(positions.begin(), positions.end(), rng);

        Sample s;
        s.tokens.resize(len);
        for (auto& t : s.tokens) t = cfg.verbs + filler_dist(rng);
        s.verb_label.assign(mv, 0.0);
        s.state_label.assign(ms, 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t verb = verb_pool[j];
            s.tokens[positions[j]] = verb;
            s.verb_label[verb] = 1.0;
            for (auto st : table[verb]) s.state_label[st] = 1.0;
        }
        corpus.samples.push_back(std::move(s));
    }
    return corpus;
}

} // namespace tanloss

#endif
