// tanloss command-line entry point.
//
// Exit codes: 0 success, 1 runtime/check failure, 2 usage/config error, 3 data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tanloss/tanloss.hpp"

namespace fs = std::filesystem;
using namespace tanloss;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_usage = 2;
constexpr int exit_data = 3;

struct UsageError : ConfigError {
    using ConfigError::ConfigError;
};

// ---------------------------------------------------------------------------
// gen-synthetic
// ---------------------------------------------------------------------------

struct GenOptions {
    std::string out;
    std::uint64_t seed = 1;
    SyntheticConfig synth{};
};

int run_gen_synthetic(const GenOptions& opt) {
    const fs::path dir(opt.out);
    std::error_code ec;
    if (!fs::is_directory(dir)) {
        fs::create_directory(dir, ec);
        if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
    }
    const auto corpus = generate_synthetic_corpus(opt.synth, opt.seed);
    try {
        write_jsonl(corpus.samples, corpus.vocabs, dir / "data.jsonl");
        save_vocab_dir(corpus.vocabs, dir);
    } catch (const DataError& e) {
        throw Error(e.what());
    }
    nlohmann::json summary;
    summary["samples"] = corpus.samples.size();
    summary["text_vocab"] = corpus.vocabs.text.size();
    summary["verb_vocab"] = corpus.vocabs.verbs.size();
    summary["state_vocab"] = corpus.vocabs.states.size();
    summary["data"] = (dir / "data.jsonl").string();
    std::cout << summary.dump() << '\n';
    return exit_ok;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string config;
    std::string resume;
    bool quiet = false;
    // Flag overrides, applied in order after the config file.
    std::vector<std::pair<std::string, std::string>> overrides;
};

int run_train(const TrainOptions& opt) {
    TrainConfig cfg;
    if (!opt.config.empty()) cfg = load_train_config(opt.config);
    for (const auto& [key, value] : opt.overrides) apply_train_setting(cfg, key, value);
    if (cfg.data.empty()) throw UsageError("--data is required (flag or config key 'data')");
    if (cfg.vocab_dir.empty()) cfg.vocab_dir = cfg.data.parent_path().empty() ? "." : cfg.data.parent_path();
    if (cfg.ckpt_dir.empty()) cfg.ckpt_dir = "checkpoints";
    if (cfg.log_path.empty()) cfg.log_path = cfg.ckpt_dir / "train_log.jsonl";
    cfg.validate();

    const VocabSet vocabs = load_vocab_dir(cfg.vocab_dir);
    const auto samples = ingest_jsonl(cfg.data, vocabs);
    const auto split = split_dataset(samples, cfg.validation_fraction, cfg.split_seed);

    TrainHooks hooks;
    if (!opt.quiet) {
        hooks.on_epoch = [&](const TrainLogRecord& rec) {
            std::cerr << "epoch " << rec.epoch << "/" << cfg.epochs << " loss " << rec.mean_total_loss;
            if (rec.validation_error) std::cerr << " val_err " << *rec.validation_error;
            if (rec.checkpoint_saved) std::cerr << " [saved]";
            std::cerr << '\n';
        };
    }

    TrainResult result;
    if (!opt.resume.empty()) {
        const auto ckpt = load_checkpoint(opt.resume);
        if (!(ckpt.vocabs == vocabs)) {
            throw FingerprintError("vocabularies in " + opt.resume + " differ from " + cfg.vocab_dir.string());
        }
        result = resume(ckpt, cfg, split, hooks);
    } else {
        result = train(cfg, split, vocabs, hooks);
    }

    std::size_t validations = 0;
    for (const auto& rec : result.log) validations += rec.validation_error.has_value();
    nlohmann::json summary;
    summary["epochs"] = result.last.meta.epoch;
    summary["train_samples"] = split.train.size();
    summary["validation_samples"] = split.validation.size();
    summary["validation_events"] = validations;
    summary["best_validation_error"] =
        result.best ? nlohmann::json(result.best->meta.best_validation_error) : nlohmann::json(nullptr);
    summary["best_epoch"] = result.best ? nlohmann::json(result.best->meta.epoch) : nlohmann::json(nullptr);
    summary["checkpoint"] = best_checkpoint_path(cfg.ckpt_dir).string();
    summary["log"] = cfg.log_path.string();
    std::cout << summary.dump() << '\n';
    return exit_ok;
}

// ---------------------------------------------------------------------------
// eval / predict
// ---------------------------------------------------------------------------

void check_threshold(double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw UsageError("--threshold must lie in (0, 1), got " + std::to_string(threshold));
    }
}

struct EvalCliOptions {
    std::string ckpt, data, vocab_dir, out, flags_csv;
    double threshold = 0.5;
    std::string tolerance = "subset";
};

int run_eval(const EvalCliOptions& opt) {
    check_threshold(opt.threshold);
    EvalOptions eo;
    eo.threshold = opt.threshold;
    eo.tolerance = parse_tolerance(opt.tolerance);

    const auto ckpt = load_checkpoint(opt.ckpt);
    if (!opt.vocab_dir.empty() && !(load_vocab_dir(opt.vocab_dir) == ckpt.vocabs)) {
        throw FingerprintError("vocabularies in " + opt.vocab_dir + " do not match checkpoint " + opt.ckpt);
    }
    const auto samples = ingest_jsonl(opt.data, ckpt.vocabs);
    const auto report = evaluate(ckpt.params, samples, *ckpt.vocabs.text.pad_index(), eo);

    std::cout << to_json(report).dump() << '\n';
    if (!opt.out.empty()) {
        std::ofstream out(opt.out);
        if (!out) throw Error("cannot write " + opt.out);
        out << to_json(report, true).dump(2) << '\n';
    }
    if (!opt.flags_csv.empty()) {
        std::ofstream csv(opt.flags_csv);
        if (!csv) throw Error("cannot write " + opt.flags_csv);
        csv << "sample,action_ok,state_ok\n";
        for (std::size_t n = 0; n < report.per_sample_flags.size(); ++n) {
            csv << n << ',' << report.per_sample_flags[n].action_ok << ',' << report.per_sample_flags[n].state_ok
                << '\n';
        }
    }
    return exit_ok;
}

struct PredictOptions {
    std::string ckpt;
    double threshold = 0.5;
};

int run_predict(const PredictOptions& opt) {
    check_threshold(opt.threshold);
    const auto ckpt = load_checkpoint(opt.ckpt);
    const auto& vocabs = ckpt.vocabs;

    std::vector<std::vector<std::string>> sentences;
    std::string line;
    while (std::getline(std::cin, line)) {
        std::istringstream words(line);
        std::vector<std::string> tokens;
        for (std::string w; words >> w;) tokens.push_back(w);
        if (!tokens.empty()) sentences.push_back(std::move(tokens));
    }
    if (sentences.empty()) {
        std::cerr << "error: no input sentence on stdin\n";
        return exit_failure;
    }

    std::vector<Sample> samples;
    for (const auto& tokens : sentences) {
        Sample s;
        for (const auto& t : tokens) s.tokens.push_back(vocabs.text.index_of(t));
        s.verb_label.assign(vocabs.verbs.size(), 0.0);
        s.state_label.assign(vocabs.states.size(), 0.0);
        samples.push_back(std::move(s));
    }
    const auto [verbs, states] = predict_all(ckpt.params, samples, *vocabs.text.pad_index());
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const auto row = static_cast<Eigen::Index>(n);
        nlohmann::json out;
        out["tokens"] = sentences[n];
        auto names = [](const PredictionSet& set, const Vocabulary& v) {
            auto arr = nlohmann::json::array();
            for (auto i : set) arr.push_back(v.token(i));
            return arr;
        };
        out["verbs"] = names(binarize(row_span(verbs, row), opt.threshold), vocabs.verbs);
        out["states"] = names(binarize(row_span(states, row), opt.threshold), vocabs.states);
        std::cout << out.dump() << '\n';
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckCliOptions {
    std::uint64_t seed = 1;
    std::string sizes = "10,5,4,7,3";
    std::size_t coords = 100;
    double step = 1e-5;
    double tolerance = 1e-4;
    bool corrupt = false;
};

LayerSizes parse_sizes(const std::string& text) {
    std::vector<std::size_t> v;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
        try {
            std::size_t used = 0;
            const long n = std::stol(part, &used);
            if (used != part.size() || n <= 0) throw std::invalid_argument(part);
            v.push_back(static_cast<std::size_t>(n));
        } catch (const std::exception&) {
            throw UsageError("--sizes expects positive integers vocab,gru1,gru2,head,m; got '" + text + "'");
        }
    }
    if (v.size() != 5) throw UsageError("--sizes expects 5 values vocab,gru1,gru2,head,m; got '" + text + "'");
    return {v[0], v[1], v[2], v[3], v[4], v[4]};
}

int run_gradcheck(const GradcheckCliOptions& opt) {
    const LayerSizes sizes = parse_sizes(opt.sizes);
    GradCheckOptions go;
    go.seed = opt.seed;
    go.coordinates = opt.coords;
    go.step = opt.step;
    if (opt.corrupt) {
        go.tamper = [](ParamGrads& g) {
            g.for_each([](const std::string&, auto& t) { t *= 1.01; });
        };
    }
    const auto report = gradient_check(sizes, go);
    const bool passed = report.max_relative_error < opt.tolerance;
    nlohmann::json out;
    out["sizes"] = sizes.fingerprint();
    out["coordinates"] = report.coordinates;
    out["max_relative_error"] = report.max_relative_error;
    out["worst_coordinate"] = report.worst_coordinate;
    out["passed"] = passed;
    std::cout << out.dump() << '\n';
    return passed ? exit_ok : exit_failure;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tangent-loss GRU toolkit for action and state-change prediction"};
    app.require_subcommand(1, 1);

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic dataset and its vocabularies");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--count", gen.synth.count, "Number of samples")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    gen_cmd->add_option("--text-vocab", gen.synth.text_tokens, "Text tokens (triggers + fillers)")->capture_default_str();
    gen_cmd->add_option("--verbs", gen.synth.verbs, "Verb types")->capture_default_str();
    gen_cmd->add_option("--states", gen.synth.states, "State-change types")->capture_default_str();
    gen_cmd->add_option("--min-len", gen.synth.min_length, "Shortest sentence")->capture_default_str();
    gen_cmd->add_option("--max-len", gen.synth.max_length, "Longest sentence")->capture_default_str();

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model; keeps the checkpoint with the lowest validation error");
    train_cmd->add_option("--config", tr.config, "key=value config file (flags override it)");
    train_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint");
    train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");
    for (const char* key : {"data", "vocab-dir", "ckpt-dir", "log", "epochs", "validate-every", "batch-size", "gru1",
                            "gru2", "head-hidden", "lr", "rho", "eps", "clip-norm", "loss-scale", "grad-reduction",
                            "validation-fraction", "split-seed", "init-seed", "shuffle-seed"}) {
        const std::string k = key;
        train_cmd->add_option_function<std::string>(
            "--" + k, [&tr, k](const std::string& v) { tr.overrides.emplace_back(k, v); }, "Override config " + k);
    }
    train_cmd->add_flag_callback("--keep-all", [&tr] { tr.overrides.emplace_back("keep-all", "true"); },
                                 "Also write ckpt_epoch_<n>.bin after every epoch");

    EvalCliOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "Per-head accuracy under one-missing tolerance");
    eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--data", ev.data, "JSONL test set")->required();
    eval_cmd->add_option("--vocab-dir", ev.vocab_dir, "Verify these vocabularies match the checkpoint");
    eval_cmd->add_option("--threshold", ev.threshold, "Binarization threshold in (0,1)")->capture_default_str();
    eval_cmd->add_option("--tolerance", ev.tolerance, "subset | symmetric | exact")->capture_default_str();
    eval_cmd->add_option("--out", ev.out, "Also write the full report (with per-sample flags) as JSON");
    eval_cmd->add_option("--flags-csv", ev.flags_csv, "Write per-sample flags as CSV");

    PredictOptions pr;
    auto* predict_cmd = app.add_subcommand("predict", "Predict verb and state sets for sentences on stdin");
    predict_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint file")->required();
    predict_cmd->add_option("--threshold", pr.threshold, "Binarization threshold in (0,1)")->capture_default_str();

    GradcheckCliOptions gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Compare backprop against finite differences");
    gc_cmd->add_option("--seed", gc.seed, "Seed for params, data and coordinates")->capture_default_str();
    gc_cmd->add_option("--sizes", gc.sizes, "vocab,gru1,gru2,head,m")->capture_default_str();
    gc_cmd->add_option("--coords", gc.coords, "Coordinates to sample")->capture_default_str();
    gc_cmd->add_option("--step", gc.step, "Central-difference step")->capture_default_str();
    gc_cmd->add_flag("--corrupt", gc.corrupt, "Scale the analytic gradient by 1.01 (harness self-test)")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        if (*gen_cmd) return run_gen_synthetic(gen);
        if (*train_cmd) return run_train(tr);
        if (*eval_cmd) return run_eval(ev);
        if (*predict_cmd) return run_predict(pr);
        if (*gc_cmd) return run_gradcheck(gc);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
    return exit_usage;
}
