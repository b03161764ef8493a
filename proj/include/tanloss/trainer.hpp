#ifndef TANLOSS_TRAINER_HPP
#define TANLOSS_TRAINER_HPP

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "evaluator.hpp"
#include "loss_metrics.hpp"
#include "network.hpp"
#include "optimizer.hpp"

namespace tanloss {

/// How per-sample gradients are combined before the optimizer step.
enum class GradReduction { mean, sum };

struct TrainConfig {
    std::size_t epochs = 201;
    std::size_t validate_every = 2;
    std::size_t batch_size = 32;
    std::size_t gru1 = 1600;
    std::size_t gru2 = 800;
    std::size_t head_hidden = 500;
    RmsPropConfig optimizer{};
    double loss_scale = 10.0;
    GradReduction reduction = GradReduction::mean;
    double validation_fraction = 0.1;
    std::uint64_t split_seed = 1;
    std::uint64_t init_seed = 1;
    std::uint64_t shuffle_seed = 1;

    std::filesystem::path data;
    std::filesystem::path vocab_dir;
    std::filesystem::path ckpt_dir; // empty: keep checkpoints in memory only
    std::filesystem::path log_path; // empty: no JSONL log on disk
    bool keep_all = false;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (validate_every < 1) throw ConfigError("validate_every must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (gru1 == 0 || gru2 == 0 || head_hidden == 0) throw ConfigError("layer sizes must be positive");
        if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(optimizer.rho >= 0.0 && optimizer.rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
        if (!(optimizer.eps >= 0.0)) throw ConfigError("eps must be nonnegative");
        if (!(loss_scale > 0.0)) throw ConfigError("loss scale must be positive");
    }

    LayerSizes layer_sizes(const VocabSet& vocabs) const {
        return {vocabs.text.size(), gru1, gru2, head_hidden, vocabs.verbs.size(), vocabs.states.size()};
    }
};

struct TrainLogRecord {
    std::size_t epoch = 0;
    double mean_total_loss = 0.0;
    std::optional<double> validation_error;
    bool checkpoint_saved = false;
    std::int64_t wall_time_ms = 0;
};

inline nlohmann::json to_json(const TrainLogRecord& rec) {
    nlohmann::json j;
    j["epoch"] = rec.epoch;
    j["mean_total_loss"] = rec.mean_total_loss;
    j["validation_error"] = rec.validation_error ? nlohmann::json(*rec.validation_error) : nlohmann::json(nullptr);
    j["checkpoint_saved"] = rec.checkpoint_saved;
    j["wall_time_ms"] = rec.wall_time_ms;
    return j;
}

/// Action loss + state loss.
inline double total_loss(std::span<const double> verb_pred, std::span<const double> verb_label,
                         std::span<const double> state_pred, std::span<const double> state_label,
                         const TangentLoss<double>& loss = {}) {
    return loss(verb_label, verb_pred) + loss(state_label, state_pred);
}

/// Strict-improvement rule for checkpointing: only a lower error counts.
class BestTracker {
public:
    explicit BestTracker(double best = std::numeric_limits<double>::infinity()) : best_(best) {}
    bool offer(double error) {
        if (error < best_) {
            best_ = error;
            return true;
        }
        return false;
    }
    double best() const { return best_; }

private:
    double best_;
};

/// Mean over samples of eps(verb) + eps(state) for the given model.
inline double validation_error(const ModelParams& params, std::span<const Sample> samples, std::size_t pad_index) {
    const auto [verbs, states] = predict_all(params, samples, pad_index);
    std::vector<HeadPair<double>> labels, preds;
    labels.reserve(samples.size());
    preds.reserve(samples.size());
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const auto row = static_cast<Eigen::Index>(n);
        labels.push_back({samples[n].verb_label, samples[n].state_label});
        preds.push_back({row_span(verbs, row), row_span(states, row)});
    }
    return batch_error<double>(labels, preds);
}

struct TrainHooks {
    std::function<void(const TrainLogRecord&)> on_epoch;
    // Replaces the validation-error computation (used to exercise the checkpoint rule).
    std::function<double(const ModelParams&, std::size_t epoch)> validator;
};

struct TrainResult {
    std::optional<Checkpoint> best; // empty when no validation improved on the starting best
    Checkpoint last;                // full state after the final epoch, suitable for resume()
    std::vector<TrainLogRecord> log;
};

inline std::filesystem::path best_checkpoint_path(const std::filesystem::path& dir) { return dir / "ckpt_best.bin"; }
inline std::filesystem::path last_checkpoint_path(const std::filesystem::path& dir) { return dir / "ckpt_last.bin"; }
inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
    return dir / ("ckpt_epoch_" + std::to_string(epoch) + ".bin");
}

namespace detail {

inline void check_samples(std::span<const Sample> samples, const VocabSet& vocabs, const char* which,
                          bool require_labels) {
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const auto& s = samples[n];
        const std::string where = std::string(which) + " sample " + std::to_string(n);
        if (s.tokens.empty()) throw DataError(where + " has no tokens");
        for (auto t : s.tokens)
            if (t >= vocabs.text.size()) throw DataError(where + " has a token outside the text vocabulary");
        if (s.verb_label.size() != vocabs.verbs.size() || s.state_label.size() != vocabs.states.size()) {
            throw DataError(where + " has label dimensions that do not match the vocabularies");
        }
        if (require_labels && (active_indices(s.verb_label).empty() || active_indices(s.state_label).empty())) {
            throw DataError(where + " has an empty verb or state label");
        }
    }
}

struct TrainState {
    ModelParams params;
    RmsPropState optimizer;
    std::size_t epoch = 0;
    BestTracker tracker;
};

inline Checkpoint snapshot(const TrainState& st, const TrainConfig& cfg, const VocabSet& vocabs) {
    Checkpoint c;
    c.params = st.params;
    c.optimizer = st.optimizer;
    c.vocabs = vocabs;
    c.meta.fingerprint = st.params.sizes().fingerprint();
    c.meta.epoch = st.epoch;
    c.meta.best_validation_error = st.tracker.best();
    c.meta.init_seed = cfg.init_seed;
    c.meta.shuffle_seed = cfg.shuffle_seed;
    c.meta.split_seed = cfg.split_seed;
    return c;
}

inline void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    try {
        save_checkpoint(c, path);
    } catch (const Error& e) {
        throw Error("training aborted at epoch " + std::to_string(c.meta.epoch) + ": " + e.what());
    }
}

/// Runs one optimizer step per batch; returns the summed (unreduced) total loss.
inline double train_epoch(TrainState& st, const TrainConfig& cfg, std::span<const Sample> train,
                          std::size_t pad_index) {
    const TangentLoss<double> loss{cfg.loss_scale, TangentLoss<double>{}.angle};
    double loss_sum = 0.0;
    for (const auto& batch : make_batches(train, cfg.batch_size, cfg.shuffle_seed + st.epoch, pad_index)) {
        auto out = forward(st.params, batch);
        RowMatrix vg(out.verb_pred.rows(), out.verb_pred.cols());
        RowMatrix sg(out.state_pred.rows(), out.state_pred.cols());
        const double weight = cfg.reduction == GradReduction::mean ? 1.0 / static_cast<double>(batch.size()) : 1.0;
        for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(batch.size()); ++r) {
            loss_sum += total_loss(row_span(out.verb_pred, r), row_span(batch.verb_labels, r),
                                   row_span(out.state_pred, r), row_span(batch.state_labels, r), loss);
            loss.gradient(row_span(batch.verb_labels, r), row_span(out.verb_pred, r), row_span(vg, r));
            loss.gradient(row_span(batch.state_labels, r), row_span(out.state_pred, r), row_span(sg, r));
        }
        vg *= weight;
        sg *= weight;
        const auto grads = backward(st.params, batch, out.traces, vg, sg);
        rmsprop_step(st.params, grads, st.optimizer);
    }
    return loss_sum;
}

inline TrainResult run(TrainState st, std::optional<Checkpoint> best, const TrainConfig& cfg,
                       const DatasetSplit& data, const VocabSet& vocabs, const TrainHooks& hooks, bool append_log) {
    const std::size_t pad = *vocabs.text.pad_index();
    if (!cfg.ckpt_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(cfg.ckpt_dir, ec);
        if (ec) throw Error("cannot create checkpoint directory " + cfg.ckpt_dir.string() + ": " + ec.message());
    }
    std::ofstream log_file;
    if (!cfg.log_path.empty()) {
        log_file.open(cfg.log_path, append_log ? std::ios::app : std::ios::trunc);
        if (!log_file) throw Error("cannot open train log " + cfg.log_path.string());
    }

    TrainResult result;
    result.best = std::move(best);
    while (st.epoch < cfg.epochs) {
        const auto t0 = std::chrono::steady_clock::now();
        ++st.epoch;
        TrainLogRecord rec;
        rec.epoch = st.epoch;
        rec.mean_total_loss = train_epoch(st, cfg, data.train, pad) / static_cast<double>(data.train.size());
        if (st.epoch % cfg.validate_every == 0) {
            const double err = hooks.validator ? hooks.validator(st.params, st.epoch)
                                               : validation_error(st.params, data.validation, pad);
            rec.validation_error = err;
            if (st.tracker.offer(err)) {
                rec.checkpoint_saved = true;
                result.best = snapshot(st, cfg, vocabs);
                if (!cfg.ckpt_dir.empty()) write_checkpoint(*result.best, best_checkpoint_path(cfg.ckpt_dir));
            }
        }
        if (cfg.keep_all && !cfg.ckpt_dir.empty()) {
            write_checkpoint(snapshot(st, cfg, vocabs), epoch_checkpoint_path(cfg.ckpt_dir, st.epoch));
        }
        rec.wall_time_ms =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
        if (log_file.is_open()) {
            log_file << to_json(rec).dump() << '\n';
            log_file.flush();
        }
        if (hooks.on_epoch) hooks.on_epoch(rec);
        result.log.push_back(rec);
    }
    result.last = snapshot(st, cfg, vocabs);
    if (!cfg.ckpt_dir.empty()) write_checkpoint(result.last, last_checkpoint_path(cfg.ckpt_dir));
    return result;
}

inline void check_inputs(const TrainConfig& cfg, const DatasetSplit& data, const VocabSet& vocabs) {
    cfg.validate();
    if (data.train.empty()) throw DataError("training split is empty");
    if (data.validation.empty()) throw DataError("validation split is empty");
    if (!vocabs.text.pad_index()) throw ConfigError("text vocabulary has no PAD entry");
    check_samples(data.train, vocabs, "training", true);
    check_samples(data.validation, vocabs, "validation", false);
}

} // namespace detail

/**
 * Trains for cfg.epochs epochs. Every validate_every-th epoch the validation
 * error is computed and a checkpoint is kept iff it is strictly below the best
 * so far. Deterministic given the config seeds and worker count.
 */
inline TrainResult train(const TrainConfig& cfg, const DatasetSplit& data, const VocabSet& vocabs,
                         const TrainHooks& hooks = {}) {
    detail::check_inputs(cfg, data, vocabs);
    detail::TrainState st;
    st.params = init_params(cfg.layer_sizes(vocabs), cfg.init_seed);
    st.optimizer = RmsPropState(st.params, cfg.optimizer);
    return detail::run(std::move(st), std::nullopt, cfg, data, vocabs, hooks, false);
}

/// Continues from a checkpoint up to cfg.epochs total epochs. Hyperparameters
/// come from cfg; params, optimizer cache, epoch counter and best error from the checkpoint.
inline TrainResult resume(const Checkpoint& ckpt, const TrainConfig& cfg, const DatasetSplit& data,
                          const TrainHooks& hooks = {}) {
    detail::check_inputs(cfg, data, ckpt.vocabs);
    require_fingerprint(ckpt, cfg.layer_sizes(ckpt.vocabs));
    detail::TrainState st;
    st.params = ckpt.params;
    st.optimizer = ckpt.optimizer.value_or(RmsPropState(ckpt.params, cfg.optimizer));
    st.optimizer.config = cfg.optimizer;
    st.epoch = static_cast<std::size_t>(ckpt.meta.epoch);
    st.tracker = BestTracker(ckpt.meta.best_validation_error);

    std::optional<Checkpoint> best;
    if (!cfg.ckpt_dir.empty() && std::filesystem::exists(best_checkpoint_path(cfg.ckpt_dir))) {
        best = load_checkpoint(best_checkpoint_path(cfg.ckpt_dir));
    }
    return detail::run(std::move(st), std::move(best), cfg, data, ckpt.vocabs, hooks, true);
}

inline TrainResult resume(const std::filesystem::path& ckpt_path, const TrainConfig& cfg, const DatasetSplit& data,
                          const TrainHooks& hooks = {}) {
    return resume(load_checkpoint(ckpt_path), cfg, data, hooks);
}

} // namespace tanloss

#endif
