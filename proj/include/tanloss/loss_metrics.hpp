#ifndef TANLOSS_LOSS_METRICS_HPP
#define TANLOSS_LOSS_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace tanloss {

namespace detail {

inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
    }
}

} // namespace detail

/**
 * Tangent loss  l(Y, P) = sum_i scale * tan(angle * |Y(i) - P(i)|).
 *
 * The default angle 0.499*pi keeps the loss bounded by m * scale * tan(0.499*pi)
 * on [0,1]^m. angle = pi/2 gives the unbounded form, which is only finite for
 * |Y(i) - P(i)| < 1 and is kept for property checks.
 */
template <std::floating_point T>
struct TangentLoss {
    T scale = T(10);
    T angle = T(0.499) * std::numbers::pi_v<T>;

    static constexpr TangentLoss bounded() { return {}; }
    static constexpr TangentLoss unbounded() { return {T(10), std::numbers::pi_v<T> / T(2)}; }

    T upper_bound(std::size_t m) const { return static_cast<T>(m) * scale * std::tan(angle); }

    T operator()(std::span<const T> label, std::span<const T> pred) const {
        detail::require_same_dim(label.size(), pred.size(), "tangent_loss");
        T sum = 0;
        for (std::size_t i = 0; i < label.size(); ++i) sum += scale * std::tan(angle * std::abs(label[i] - pred[i]));
        return sum;
    }

    /// dl/dP(i) = scale * angle * sign(P(i)-Y(i)) * sec^2(angle*|Y(i)-P(i)|); 0 at the kink.
    void gradient(std::span<const T> label, std::span<const T> pred, std::span<T> out) const {
        detail::require_same_dim(label.size(), pred.size(), "tangent_loss_grad");
        detail::require_same_dim(label.size(), out.size(), "tangent_loss_grad output");
        for (std::size_t i = 0; i < label.size(); ++i) {
            const T diff = pred[i] - label[i];
            if (diff == T(0)) {
                out[i] = T(0);
                continue;
            }
            const T c = std::cos(angle * std::abs(diff));
            out[i] = std::copysign(scale * angle / (c * c), diff);
        }
    }

    std::vector<T> gradient(std::span<const T> label, std::span<const T> pred) const {
        std::vector<T> out(label.size());
        gradient(label, pred, out);
        return out;
    }
};

template <std::floating_point T>
T tangent_loss(std::span<const T> label, std::span<const T> pred) {
    return TangentLoss<T>{}(label, pred);
}

template <std::floating_point T>
std::vector<T> tangent_loss_grad(std::span<const T> label, std::span<const T> pred) {
    return TangentLoss<T>{}.gradient(label, pred);
}

// Convenience overloads so braced vectors work without spelling out spans.
inline double tangent_loss(const std::vector<double>& label, const std::vector<double>& pred) {
    return tangent_loss<double>(std::span<const double>(label), std::span<const double>(pred));
}

inline std::vector<double> tangent_loss_grad(const std::vector<double>& label, const std::vector<double>& pred) {
    return tangent_loss_grad<double>(std::span<const double>(label), std::span<const double>(pred));
}

/// Max-shifted softmax. Non-finite components are rejected.
template <std::floating_point T>
std::vector<T> softmax_pmf(std::span<const T> v) {
    if (v.empty()) throw ShapeError("softmax_pmf: empty input");
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) throw ShapeError("softmax_pmf: non-finite component at " + std::to_string(i));
    }
    const T peak = *std::max_element(v.begin(), v.end());
    std::vector<T> p(v.size());
    T sum = 0;
    for (std::size_t i = 0; i < v.size(); ++i) sum += (p[i] = std::exp(v[i] - peak));
    for (auto& x : p) x /= sum;
    return p;
}

inline std::vector<double> softmax_pmf(const std::vector<double>& v) {
    return softmax_pmf<double>(std::span<const double>(v));
}

/// H(p, q) = -sum_x p(x) log2 q(x), in bits.
template <std::floating_point T>
T cross_entropy(std::span<const T> p, std::span<const T> q) {
    detail::require_same_dim(p.size(), q.size(), "cross_entropy");
    T h = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] != T(0)) h -= p[i] * std::log2(q[i]);
    }
    return h;
}

inline double cross_entropy(const std::vector<double>& p, const std::vector<double>& q) {
    return cross_entropy<double>(std::span<const double>(p), std::span<const double>(q));
}

/**
 * Cross-entropy-gap validation error  |H(P_P, Q_Y) - H(Q_Y, Q_Y)|  where both
 * pmfs are softmaxes of the raw label / prediction vectors.
 */
template <std::floating_point T>
T error_epsilon(std::span<const T> label, std::span<const T> pred) {
    detail::require_same_dim(label.size(), pred.size(), "error_epsilon");
    const auto q_label = softmax_pmf(label);
    const auto p_pred = softmax_pmf(pred);
    const std::span<const T> q(q_label), p(p_pred);
    return std::abs(cross_entropy(p, q) - cross_entropy(q, q));
}

inline double error_epsilon(const std::vector<double>& label, const std::vector<double>& pred) {
    return error_epsilon<double>(std::span<const double>(label), std::span<const double>(pred));
}

/// Verb-head and state-head vectors of one sample.
template <std::floating_point T>
struct HeadPair {
    std::span<const T> verb;
    std::span<const T> state;
};

/// Mean over samples of eps(verb head) + eps(state head).
template <std::floating_point T>
T batch_error(std::span<const HeadPair<T>> labels, std::span<const HeadPair<T>> preds) {
    detail::require_same_dim(labels.size(), preds.size(), "batch_error");
    if (labels.empty()) throw ShapeError("batch_error: empty sample set");
    T total = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        total += error_epsilon(labels[n].verb, preds[n].verb) + error_epsilon(labels[n].state, preds[n].state);
    }
    return total / static_cast<T>(labels.size());
}

} // namespace tanloss

#endif
