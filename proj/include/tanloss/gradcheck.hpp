#ifndef TANLOSS_GRADCHECK_HPP
#define TANLOSS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "loss_metrics.hpp"
#include "network.hpp"
#include "optimizer.hpp"

namespace tanloss {

/// Summed total tangent loss of a batch.
inline double batch_objective(const ModelParams& params, const Batch& batch, const TangentLoss<double>& loss = {}) {
    const auto out = forward(params, batch);
    double sum = 0.0;
    for (Eigen::Index r = 0; r < out.verb_pred.rows(); ++r) {
        sum += loss(row_span(batch.verb_labels, r), row_span(out.verb_pred, r)) +
               loss(row_span(batch.state_labels, r), row_span(out.state_pred, r));
    }
    return sum;
}

/// Analytic gradient of batch_objective.
inline ParamGrads batch_objective_grad(const ModelParams& params, const Batch& batch,
                                       const TangentLoss<double>& loss = {}) {
    auto out = forward(params, batch);
    RowMatrix vg(out.verb_pred.rows(), out.verb_pred.cols());
    RowMatrix sg(out.state_pred.rows(), out.state_pred.cols());
    for (Eigen::Index r = 0; r < out.verb_pred.rows(); ++r) {
        loss.gradient(row_span(batch.verb_labels, r), row_span(out.verb_pred, r), row_span(vg, r));
        loss.gradient(row_span(batch.state_labels, r), row_span(out.state_pred, r), row_span(sg, r));
    }
    return backward(params, batch, out.traces, vg, sg);
}

/// Denominator floor for relative errors, so coordinates whose gradient is
/// numerically zero compare on an absolute scale.
inline constexpr double gradcheck_floor = 1e-6;

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), gradcheck_floor});
}

struct GradCheckOptions {
    std::size_t coordinates = 100;
    double step = 1e-5;
    std::uint64_t seed = 1;
    std::vector<std::size_t> lengths{4, 6}; // one sample per entry
    // Applied to the analytic gradient before comparison; lets tests prove the harness can fail.
    std::function<void(ParamGrads&)> tamper;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
    std::string worst_coordinate;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Random problem for gradient checking: random params (biases included), tokens and multi-hot labels.
struct GradCheckProblem {
    ModelParams params;
    Batch batch;
};

inline GradCheckProblem make_gradcheck_problem(const LayerSizes& sizes, std::uint64_t seed,
                                               const std::vector<std::size_t>& lengths) {
    GradCheckProblem prob{init_params(sizes, seed), {}};
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> bias(-0.1, 0.1);
    prob.params.for_each([&](const std::string&, auto& t) {
        if constexpr (std::decay_t<decltype(t)>::IsVectorAtCompileTime)
            for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = bias(rng);
    });
    std::uniform_int_distribution<std::size_t> token(0, sizes.input - 1);
    std::bernoulli_distribution bit(0.5);
    std::vector<Sample> samples;
    for (auto len : lengths) {
        Sample s;
        for (std::size_t i = 0; i < len; ++i) s.tokens.push_back(token(rng));
        s.verb_label.resize(sizes.verbs);
        s.state_label.resize(sizes.states);
        for (auto& y : s.verb_label) y = bit(rng) ? 1.0 : 0.0;
        for (auto& y : s.state_label) y = bit(rng) ? 1.0 : 0.0;
        samples.push_back(std::move(s));
    }
    // No PAD entry in a synthetic check vocabulary: use an out-of-range pad index.
    prob.batch = make_batch(samples, sizes.input);
    return prob;
}

/**
 * Compares backward() against central differences of batch_objective at
 * `coordinates` randomly chosen parameter entries.
 */
inline GradCheckReport gradient_check(const ModelParams& params, const Batch& batch, const GradCheckOptions& opt) {
    ParamGrads analytic = batch_objective_grad(params, batch);
    if (opt.tamper) opt.tamper(analytic);

    struct Coord {
        std::size_t tensor;
        std::size_t offset;
    };
    std::vector<Coord> all;
    std::vector<std::string> names;
    std::size_t tensor = 0;
    params.for_each([&](const std::string& name, const auto& t) {
        names.push_back(name);
        for (Eigen::Index k = 0; k < t.size(); ++k) all.push_back({tensor, static_cast<std::size_t>(k)});
        ++tensor;
    });
    std::mt19937_64 rng(opt.seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(std::min(all.size(), opt.coordinates));

    GradCheckReport report;
    ModelParams probe = params;
    auto probe_tensors = detail::flat_tensors(probe);
    auto grad_tensors = detail::flat_tensors(analytic);
    for (const auto& c : all) {
        double& theta = probe_tensors[c.tensor][c.offset];
        const double saved = theta;
        theta = saved + opt.step;
        const double up = batch_objective(probe, batch);
        theta = saved - opt.step;
        const double down = batch_objective(probe, batch);
        theta = saved;
        const double numeric = (up - down) / (2.0 * opt.step);
        const double a = grad_tensors[c.tensor][c.offset];
        const double err = relative_error(a, numeric);
        ++report.coordinates;
        if (err > report.max_relative_error || report.worst_coordinate.empty()) {
            report.max_relative_error = std::max(report.max_relative_error, err);
            report.worst_coordinate = names[c.tensor] + "#" + std::to_string(c.offset);
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    return report;
}

inline GradCheckReport gradient_check(const LayerSizes& sizes, const GradCheckOptions& opt = {}) {
    const auto prob = make_gradcheck_problem(sizes, opt.seed, opt.lengths);
    return gradient_check(prob.params, prob.batch, opt);
}

} // namespace tanloss

#endif
