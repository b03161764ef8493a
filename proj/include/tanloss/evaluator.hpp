#ifndef TANLOSS_EVALUATOR_HPP
#define TANLOSS_EVALUATOR_HPP

#include <algorithm>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "error.hpp"
#include "network.hpp"

namespace tanloss {

/// Sorted set of label-vocabulary indices predicted for one head.
using PredictionSet = std::vector<std::size_t>;

/// subset: pred must be a subset of label with at most one label item missing.
/// symmetric: |pred xor label| <= 1.  exact: pred == label.
enum class Tolerance { subset, symmetric, exact };

inline Tolerance parse_tolerance(const std::string& s) {
    if (s == "subset" || s == "one-missing") return Tolerance::subset;
    if (s == "symmetric") return Tolerance::symmetric;
    if (s == "exact") return Tolerance::exact;
    throw ConfigError("unknown tolerance '" + s + "' (expected subset, symmetric or exact)");
}

inline PredictionSet binarize(std::span<const double> pred, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("threshold must lie in (0, 1), got " + std::to_string(threshold));
    }
    PredictionSet items;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] >= threshold) items.push_back(i);
    return items;
}

inline PredictionSet binarize(const std::vector<double>& pred, double threshold = 0.5) {
    return binarize(std::span<const double>(pred), threshold);
}

/// Both arguments must be sorted. An empty label only matches an empty prediction.
inline bool one_missing_match(const PredictionSet& pred, const PredictionSet& label,
                              Tolerance tolerance = Tolerance::subset) {
    if (label.empty()) return pred.empty();
    PredictionSet missing, extra;
    std::set_difference(label.begin(), label.end(), pred.begin(), pred.end(), std::back_inserter(missing));
    std::set_difference(pred.begin(), pred.end(), label.begin(), label.end(), std::back_inserter(extra));
    switch (tolerance) {
    case Tolerance::subset:
        return extra.empty() && missing.size() <= 1;
    case Tolerance::symmetric:
        return missing.size() + extra.size() <= 1;
    case Tolerance::exact:
        return missing.empty() && extra.empty();
    }
    return false;
}

struct SampleFlags {
    bool action_ok = false;
    bool state_ok = false;

    bool operator==(const SampleFlags&) const = default;
};

struct EvalReport {
    double action_accuracy = 0.0; // percent
    double state_accuracy = 0.0;  // percent
    std::size_t n_samples = 0;
    std::vector<SampleFlags> per_sample_flags;
};

struct EvalOptions {
    double threshold = 0.5;
    Tolerance tolerance = Tolerance::subset;
    std::size_t batch_size = 64;
};

/// Percentages are mean(flags) * 100 over the given flags.
inline EvalReport make_report(std::vector<SampleFlags> flags) {
    EvalReport report;
    report.n_samples = flags.size();
    std::size_t action = 0, state = 0;
    for (const auto& f : flags) {
        action += f.action_ok;
        state += f.state_ok;
    }
    if (!flags.empty()) {
        report.action_accuracy = 100.0 * static_cast<double>(action) / static_cast<double>(flags.size());
        report.state_accuracy = 100.0 * static_cast<double>(state) / static_cast<double>(flags.size());
    }
    report.per_sample_flags = std::move(flags);
    return report;
}

/// Scores precomputed head outputs against the samples' labels.
inline EvalReport score_predictions(std::span<const Sample> samples, const RowMatrix& verb_pred,
                                    const RowMatrix& state_pred, const EvalOptions& opt = {}) {
    if (samples.empty()) throw DataError("evaluation set is empty");
    if (verb_pred.rows() != static_cast<Eigen::Index>(samples.size()) ||
        state_pred.rows() != static_cast<Eigen::Index>(samples.size())) {
        throw ShapeError("prediction rows do not match the sample count");
    }
    std::vector<SampleFlags> flags(samples.size());
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const auto row = static_cast<Eigen::Index>(n);
        flags[n].action_ok = one_missing_match(binarize(row_span(verb_pred, row), opt.threshold),
                                               active_indices(samples[n].verb_label), opt.tolerance);
        flags[n].state_ok = one_missing_match(binarize(row_span(state_pred, row), opt.threshold),
                                              active_indices(samples[n].state_label), opt.tolerance);
    }
    return make_report(std::move(flags));
}

/// Head outputs for every sample, in order.
inline std::pair<RowMatrix, RowMatrix> predict_all(const ModelParams& params, std::span<const Sample> samples,
                                                   std::size_t pad_index, std::size_t batch_size = 64) {
    RowMatrix verbs(static_cast<Eigen::Index>(samples.size()), params.verb_head.W2.rows());
    RowMatrix states(static_cast<Eigen::Index>(samples.size()), params.state_head.W2.rows());
    Eigen::Index row = 0;
    for (const auto& batch : make_ordered_batches(samples, batch_size, pad_index)) {
        const auto out = forward(params, batch);
        verbs.middleRows(row, out.verb_pred.rows()) = out.verb_pred;
        states.middleRows(row, out.state_pred.rows()) = out.state_pred;
        row += out.verb_pred.rows();
    }
    return {std::move(verbs), std::move(states)};
}

inline EvalReport evaluate(const ModelParams& params, std::span<const Sample> test_set, std::size_t pad_index,
                           const EvalOptions& opt = {}) {
    if (test_set.empty()) throw DataError("evaluation set is empty");
    const auto [verbs, states] = predict_all(params, test_set, pad_index, opt.batch_size);
    return score_predictions(test_set, verbs, states, opt);
}

inline nlohmann::json to_json(const EvalReport& report, bool with_flags = false) {
    nlohmann::json j;
    j["action_accuracy"] = report.action_accuracy;
    j["state_accuracy"] = report.state_accuracy;
    j["n_samples"] = report.n_samples;
    if (with_flags) {
        auto flags = nlohmann::json::array();
        for (const auto& f : report.per_sample_flags) flags.push_back({f.action_ok, f.state_ok});
        j["per_sample_flags"] = std::move(flags);
    }
    return j;
}

} // namespace tanloss

#endif
