#ifndef TANLOSS_CONFIG_HPP
#define TANLOSS_CONFIG_HPP

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "trainer.hpp"

namespace tanloss {

/// Ordered key=value pairs as read from a config file.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

/// Keys accept '-' or '_' separators.
inline std::string normalize_key(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + value + "' for " + key);
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("invalid boolean '" + value + "' for " + key);
}

} // namespace detail

/// Blank lines and '#' comments are ignored; anything else must be `key = value`.
inline KeyValues parse_key_values(std::istream& in, const std::string& source = "config") {
    KeyValues out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
        }
        auto key = detail::normalize_key(detail::trim(line.substr(0, eq)));
        auto value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
        for (const auto& [k, v] : out)
            if (k == key) throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key " + key);
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

/// Sets one TrainConfig field by its config-file key. Unknown keys raise ConfigError.
inline void apply_train_setting(TrainConfig& cfg, const std::string& raw_key, const std::string& value) {
    const auto key = detail::normalize_key(raw_key);
    using detail::parse_number;
    if (key == "epochs") cfg.epochs = parse_number<std::size_t>(key, value);
    else if (key == "validate-every") cfg.validate_every = parse_number<std::size_t>(key, value);
    else if (key == "batch-size") cfg.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "gru1") cfg.gru1 = parse_number<std::size_t>(key, value);
    else if (key == "gru2") cfg.gru2 = parse_number<std::size_t>(key, value);
    else if (key == "head-hidden") cfg.head_hidden = parse_number<std::size_t>(key, value);
    else if (key == "lr") cfg.optimizer.lr = parse_number<double>(key, value);
    else if (key == "rho") cfg.optimizer.rho = parse_number<double>(key, value);
    else if (key == "eps") cfg.optimizer.eps = parse_number<double>(key, value);
    else if (key == "clip-norm") cfg.optimizer.clip_norm = parse_number<double>(key, value);
    else if (key == "loss-scale") cfg.loss_scale = parse_number<double>(key, value);
    else if (key == "validation-fraction") cfg.validation_fraction = parse_number<double>(key, value);
    else if (key == "split-seed") cfg.split_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "init-seed") cfg.init_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "shuffle-seed") cfg.shuffle_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "keep-all") cfg.keep_all = detail::parse_bool(key, value);
    else if (key == "data") cfg.data = value;
    else if (key == "vocab-dir") cfg.vocab_dir = value;
    else if (key == "ckpt-dir") cfg.ckpt_dir = value;
    else if (key == "log") cfg.log_path = value;
    else if (key == "grad-reduction") {
        if (value == "mean") cfg.reduction = GradReduction::mean;
        else if (value == "sum") cfg.reduction = GradReduction::sum;
        else throw ConfigError("grad-reduction must be mean or sum, got '" + value + "'");
    } else {
        throw ConfigError("unknown config key '" + raw_key + "'");
    }
}

inline TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig cfg = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    for (const auto& [key, value] : parse_key_values(in, path.string())) {
        try {
            apply_train_setting(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
    }
    return cfg;
}

} // namespace tanloss

#endif
