#ifndef TANLOSS_OPTIMIZER_HPP
#define TANLOSS_OPTIMIZER_HPP

#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "network.hpp"

namespace tanloss {

struct RmsPropConfig {
    double lr = 1e-4;
    double rho = 0.9;
    double eps = 1e-8;
    double clip_norm = 0.0; // global L2 clip; 0 disables
};

/**
 * cache <- rho * cache + (1 - rho) * g^2;  theta <- theta - lr * g / (sqrt(cache) + eps)
 * Element-wise over matching spans.
 */
template <std::floating_point T>
void rmsprop_update(std::span<T> theta, std::span<const T> grad, std::span<T> cache, const RmsPropConfig& cfg) {
    if (theta.size() != grad.size() || theta.size() != cache.size()) throw ShapeError("rmsprop_update: size mismatch");
    const T rho = static_cast<T>(cfg.rho), lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        cache[i] = rho * cache[i] + (T(1) - rho) * grad[i] * grad[i];
        theta[i] -= lr * grad[i] / (std::sqrt(cache[i]) + eps);
    }
}

struct RmsPropState {
    RmsPropConfig config;
    ModelParams cache; // running mean of squared gradients, shaped like the params

    RmsPropState() = default;
    RmsPropState(const ModelParams& like, RmsPropConfig cfg) : config(cfg), cache(zeros_like(like)) {}

    bool operator==(const RmsPropState& o) const {
        return config.lr == o.config.lr && config.rho == o.config.rho && config.eps == o.config.eps &&
               config.clip_norm == o.config.clip_norm && cache == o.cache;
    }
};

namespace detail {

template <class T>
std::span<double> flat(T& t) {
    return {t.data(), static_cast<std::size_t>(t.size())};
}
template <class T>
std::span<const double> flat(const T& t) {
    return {t.data(), static_cast<std::size_t>(t.size())};
}

inline std::vector<std::span<double>> flat_tensors(ModelParams& p) {
    std::vector<std::span<double>> out;
    p.for_each([&](const std::string&, auto& t) { out.push_back(flat(t)); });
    return out;
}

struct NamedTensor {
    std::string name;
    Eigen::Index rows, cols;
    std::span<const double> values; // column-major storage
};

inline std::vector<NamedTensor> named_tensors(const ModelParams& p) {
    std::vector<NamedTensor> out;
    p.for_each([&](const std::string& name, const auto& t) { out.push_back({name, t.rows(), t.cols(), flat(t)}); });
    return out;
}

} // namespace detail

inline double gradient_norm(const ModelParams& grads) {
    double sq = 0.0;
    grads.for_each([&](const std::string&, const auto& t) { sq += t.squaredNorm(); });
    return std::sqrt(sq);
}

/// Applies one RMSProp step in place. Rejects shape mismatches and non-finite
/// gradients (naming the offending coordinate) before touching any state.
inline void rmsprop_step(ModelParams& params, const ParamGrads& grads, RmsPropState& state) {
    if (grads.sizes() != params.sizes() || state.cache.sizes() != params.sizes()) {
        throw ShapeError("rmsprop_step: shape mismatch (params " + params.sizes().fingerprint() + ", grads " +
                         grads.sizes().fingerprint() + ", cache " + state.cache.sizes().fingerprint() + ")");
    }
    const auto named = detail::named_tensors(grads);
    for (const auto& t : named) {
        for (std::size_t k = 0; k < t.values.size(); ++k) {
            if (!std::isfinite(t.values[k])) {
                const auto row = static_cast<Eigen::Index>(k) % t.rows, col = static_cast<Eigen::Index>(k) / t.rows;
                throw NumericError("non-finite gradient at " + t.name + "[" + std::to_string(row) + "," +
                                   std::to_string(col) + "]");
            }
        }
    }

    double scale = 1.0;
    if (state.config.clip_norm > 0.0) {
        const double norm = gradient_norm(grads);
        if (norm > state.config.clip_norm) scale = state.config.clip_norm / norm;
    }

    auto theta = detail::flat_tensors(params);
    auto cache = detail::flat_tensors(state.cache);
    std::vector<double> scaled;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        std::span<const double> g = named[i].values;
        if (scale != 1.0) {
            scaled.assign(g.begin(), g.end());
            for (auto& x : scaled) x *= scale;
            g = scaled;
        }
        rmsprop_update<double>(theta[i], g, cache[i], state.config);
    }
}

} // namespace tanloss

#endif
