#include <gtest/gtest.h>

#include <memory>
#include <sstream>

#include <json.hpp>

#include "test_support.hpp"

using tanloss::testing::CommandResult;
using tanloss::testing::read_file;
using tanloss::testing::TempDir;
using tanloss::testing::write_file;

namespace {

const std::string cli = TANLOSS_CLI;

CommandResult run(std::vector<std::string> args, const std::string& input = "") {
    args.insert(args.begin(), cli);
    return tanloss::testing::run_command(args, input);
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

nlohmann::json last_json_line(const std::string& text) {
    const auto lines = lines_of(text);
    return nlohmann::json::parse(lines.at(lines.size() - 1));
}

// Strips the only non-deterministic field from a training log.
std::vector<nlohmann::json> log_without_times(const std::filesystem::path& p) {
    std::vector<nlohmann::json> out;
    for (const auto& line : lines_of(read_file(p))) {
        auto j = nlohmann::json::parse(line);
        j.erase("wall_time_ms");
        out.push_back(std::move(j));
    }
    return out;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = std::make_unique<TempDir>("tanloss_cli");
        const auto gen = run({"gen-synthetic", "--out", (*dir_ / "data").string(), "--count", "400", "--seed", "1"});
        ASSERT_EQ(gen.exit_code, 0) << gen.err;
        const auto tr = run({"train", "--quiet", "--data", data().string(), "--gru1", "32", "--gru2", "16",
                             "--head-hidden", "16", "--lr", "3e-3", "--epochs", "80", "--ckpt-dir",
                             (*dir_ / "model").string()});
        ASSERT_EQ(tr.exit_code, 0) << tr.err;
    }
    static void TearDownTestSuite() { dir_.reset(); }

    static std::filesystem::path data() { return *dir_ / "data" / "data.jsonl"; }
    static std::filesystem::path model() { return *dir_ / "model" / "ckpt_best.bin"; }

    static std::unique_ptr<TempDir> dir_;
};

std::unique_ptr<TempDir> Cli::dir_;

} // namespace

TEST_F(Cli, RequiresExactlyOneSubcommand) {
    EXPECT_EQ(run({}).exit_code, 2);
    EXPECT_EQ(run({"frobnicate"}).exit_code, 2);
    EXPECT_EQ(run({"gradcheck", "--no-such-flag"}).exit_code, 2);
}

TEST_F(Cli, GenSyntheticIsReproducible) {
    TempDir tmp;
    const auto a = run({"gen-synthetic", "--out", (tmp / "a").string(), "--count", "200", "--seed", "1"});
    const auto b = run({"gen-synthetic", "--out", (tmp / "b").string(), "--count", "200", "--seed", "1"});
    ASSERT_EQ(a.exit_code, 0) << a.err;
    ASSERT_EQ(b.exit_code, 0) << b.err;
    const auto text = read_file(tmp / "a" / "data.jsonl");
    EXPECT_EQ(lines_of(text).size(), 200u);
    EXPECT_EQ(text, read_file(tmp / "b" / "data.jsonl"));
    for (const char* f : {"text.vocab", "verbs.vocab", "states.vocab"})
        EXPECT_EQ(read_file(tmp / "a" / f), read_file(tmp / "b" / f)) << f;
    EXPECT_EQ(last_json_line(a.out).at("samples"), 200);
}

TEST_F(Cli, GenSyntheticZeroCount) {
    TempDir tmp;
    const auto r = run({"gen-synthetic", "--out", (tmp / "z").string(), "--count", "0"});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_TRUE(read_file(tmp / "z" / "data.jsonl").empty());
    const auto vocabs = tanloss::load_vocab_dir(tmp / "z");
    EXPECT_EQ(vocabs.verbs.size(), 9u);
}

TEST_F(Cli, GenSyntheticUnwritableOutput) {
    const auto r = run({"gen-synthetic", "--out", "/nonexistent/dir"});
    EXPECT_NE(r.exit_code, 0);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, TrainReportsCadenceAndWritesArtifacts) {
    TempDir tmp;
    const auto r = run({"train", "--quiet", "--data", data().string(), "--gru1", "4", "--gru2", "3", "--head-hidden",
                        "3", "--epochs", "5", "--validate-every", "2", "--ckpt-dir", (tmp / "ck").string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto summary = last_json_line(r.out);
    EXPECT_EQ(summary.at("validation_events"), 2);
    EXPECT_EQ(summary.at("epochs"), 5);
    EXPECT_TRUE(std::filesystem::exists(tmp / "ck" / "ckpt_best.bin"));
    EXPECT_TRUE(std::filesystem::exists(tmp / "ck" / "ckpt_last.bin"));
    const auto log = log_without_times(tmp / "ck" / "train_log.jsonl");
    ASSERT_EQ(log.size(), 5u);
    EXPECT_TRUE(log[0].at("validation_error").is_null());
    EXPECT_FALSE(log[1].at("validation_error").is_null());
}

TEST_F(Cli, TrainIsDeterministicAndResumable) {
    TempDir tmp;
    auto args = [&](const std::string& ckpt, const std::string& epochs) {
        return std::vector<std::string>{"train", "--quiet", "--data", data().string(), "--gru1", "5", "--gru2", "4",
                                        "--head-hidden", "4", "--lr", "3e-3", "--epochs", epochs, "--ckpt-dir", ckpt};
    };
    ASSERT_EQ(run(args((tmp / "a").string(), "8")).exit_code, 0);
    ASSERT_EQ(run(args((tmp / "b").string(), "8")).exit_code, 0);
    EXPECT_EQ(read_file(tmp / "a" / "ckpt_best.bin"), read_file(tmp / "b" / "ckpt_best.bin"));
    EXPECT_EQ(log_without_times(tmp / "a" / "train_log.jsonl"), log_without_times(tmp / "b" / "train_log.jsonl"));

    ASSERT_EQ(run(args((tmp / "c").string(), "4")).exit_code, 0);
    auto resume = args((tmp / "c").string(), "8");
    resume.push_back("--resume");
    resume.push_back((tmp / "c" / "ckpt_last.bin").string());
    const auto r = run(resume);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(read_file(tmp / "a" / "ckpt_last.bin"), read_file(tmp / "c" / "ckpt_last.bin"));
    EXPECT_EQ(read_file(tmp / "a" / "ckpt_best.bin"), read_file(tmp / "c" / "ckpt_best.bin"));
    EXPECT_EQ(log_without_times(tmp / "a" / "train_log.jsonl"), log_without_times(tmp / "c" / "train_log.jsonl"));
}

TEST_F(Cli, TrainResumeWithDifferentShapeIsUsageError) {
    TempDir tmp;
    auto r = run({"train", "--quiet", "--data", data().string(), "--gru1", "5", "--gru2", "4", "--head-hidden", "4",
                  "--epochs", "2", "--ckpt-dir", (tmp / "a").string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    r = run({"train", "--quiet", "--data", data().string(), "--gru1", "6", "--gru2", "4", "--head-hidden", "4",
             "--epochs", "4", "--ckpt-dir", (tmp / "a").string(), "--resume", (tmp / "a" / "ckpt_last.bin").string()});
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.err.find("gru=5,4"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("gru=6,4"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainErrorsMapToExitCodes) {
    TempDir tmp;
    EXPECT_EQ(run({"train", "--quiet"}).exit_code, 2);
    EXPECT_EQ(run({"train", "--quiet", "--data", data().string(), "--epochs", "zero"}).exit_code, 2);
    write_file(tmp / "bad.conf", "epochs = 3\nmystery = 1\n");
    EXPECT_EQ(run({"train", "--quiet", "--config", (tmp / "bad.conf").string(), "--data", data().string()}).exit_code,
              2);

    // config file values are used, flags override them
    write_file(tmp / "ok.conf", "epochs = 50\ngru1 = 3\ngru2 = 2\nhead-hidden = 2\nvalidate-every = 1\n");
    const auto ok = run({"train", "--quiet", "--config", (tmp / "ok.conf").string(), "--data", data().string(),
                         "--epochs", "3", "--ckpt-dir", (tmp / "ck").string()});
    ASSERT_EQ(ok.exit_code, 0) << ok.err;
    EXPECT_EQ(last_json_line(ok.out).at("validation_events"), 3);

    std::filesystem::create_directories(tmp / "broken");
    std::filesystem::copy(data().parent_path() / "text.vocab", tmp / "broken" / "text.vocab");
    std::filesystem::copy(data().parent_path() / "verbs.vocab", tmp / "broken" / "verbs.vocab");
    std::filesystem::copy(data().parent_path() / "states.vocab", tmp / "broken" / "states.vocab");
    write_file(tmp / "broken" / "data.jsonl", "{\"tokens\": [\"bake\"], \"verbs\": [\"bake\"]}\n");
    EXPECT_EQ(run({"train", "--quiet", "--data", (tmp / "broken" / "data.jsonl").string(), "--ckpt-dir",
                   (tmp / "ck2").string()})
                  .exit_code,
              3);
}

TEST_F(Cli, EvalReportsAccuracies) {
    TempDir tmp;
    const auto r = run({"eval", "--ckpt", model().string(), "--data", data().string(), "--out",
                        (tmp / "report.json").string(), "--flags-csv", (tmp / "flags.csv").string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto j = last_json_line(r.out);
    EXPECT_EQ(j.at("n_samples"), 400);
    EXPECT_GE(j.at("action_accuracy").get<double>(), 95.0);
    EXPECT_GE(j.at("state_accuracy").get<double>(), 95.0);

    // reported accuracy equals a recount of the per-sample flags
    const auto rows = lines_of(read_file(tmp / "flags.csv"));
    ASSERT_EQ(rows.size(), 401u);
    std::size_t action = 0, state = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::istringstream row(rows[i]);
        std::string id, a, s;
        std::getline(row, id, ',');
        std::getline(row, a, ',');
        std::getline(row, s, ',');
        action += a == "1";
        state += s == "1";
    }
    EXPECT_DOUBLE_EQ(j.at("action_accuracy").get<double>(), 100.0 * action / 400.0);
    EXPECT_DOUBLE_EQ(j.at("state_accuracy").get<double>(), 100.0 * state / 400.0);
    const auto full = nlohmann::json::parse(read_file(tmp / "report.json"));
    EXPECT_EQ(full.at("per_sample_flags").size(), 400u);

    // exact matching never counts more samples than the tolerant rule
    const auto exact = last_json_line(
        run({"eval", "--ckpt", model().string(), "--data", data().string(), "--tolerance", "exact"}).out);
    EXPECT_LE(exact.at("action_accuracy").get<double>(), j.at("action_accuracy").get<double>());
    EXPECT_LE(exact.at("state_accuracy").get<double>(), j.at("state_accuracy").get<double>());
}

TEST_F(Cli, EvalRejectsBadArguments) {
    EXPECT_EQ(run({"eval", "--ckpt", model().string(), "--data", data().string(), "--threshold", "1.5"}).exit_code, 2);
    EXPECT_EQ(run({"eval", "--ckpt", model().string(), "--data", data().string(), "--tolerance", "loose"}).exit_code,
              2);
    EXPECT_EQ(run({"eval", "--ckpt", data().string(), "--data", data().string()}).exit_code, 3);
    TempDir tmp;
    const auto g = run({"gen-synthetic", "--out", (tmp / "other").string(), "--count", "5", "--verbs", "5"});
    ASSERT_EQ(g.exit_code, 0);
    EXPECT_EQ(run({"eval", "--ckpt", model().string(), "--data", data().string(), "--vocab-dir",
                   (tmp / "other").string()})
                  .exit_code,
              2);
}

TEST_F(Cli, PredictFollowsTriggerTable) {
    const auto r = run({"predict", "--ckpt", model().string()}, "the bake dough oven\nchop onion\npour water\n");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto lines = lines_of(r.out);
    ASSERT_EQ(lines.size(), 3u);
    using strings = std::vector<std::string>;
    const auto bake = nlohmann::json::parse(lines[0]);
    EXPECT_EQ(bake.at("verbs").get<strings>(), (strings{"bake"}));
    EXPECT_EQ(bake.at("states").get<strings>(), (strings{"cookedness", "temperature"}));
    const auto chop = nlohmann::json::parse(lines[1]);
    EXPECT_EQ(chop.at("verbs").get<strings>(), (strings{"chop"}));
    EXPECT_EQ(chop.at("states").get<strings>(), (strings{"shape"}));
    const auto pour = nlohmann::json::parse(lines[2]);
    EXPECT_EQ(pour.at("verbs").get<strings>(), (strings{"pour"}));
    EXPECT_EQ(pour.at("states").get<strings>(), (strings{"location"}));
}

TEST_F(Cli, PredictHandlesUnknownWordsAndEmptyInput) {
    const auto unk = run({"predict", "--ckpt", model().string()}, "zzz qqq xyzzy\n");
    ASSERT_EQ(unk.exit_code, 0) << unk.err;
    const auto j = last_json_line(unk.out);
    EXPECT_TRUE(j.at("verbs").is_array());
    EXPECT_TRUE(j.at("states").is_array());

    const auto empty = run({"predict", "--ckpt", model().string()}, "");
    EXPECT_EQ(empty.exit_code, 1);
    EXPECT_FALSE(empty.err.empty());
    EXPECT_EQ(run({"predict", "--ckpt", model().string(), "--threshold", "0"}, "bake\n").exit_code, 2);
}

TEST_F(Cli, GradcheckPassesAndDetectsCorruption) {
    const auto def = run({"gradcheck"});
    ASSERT_EQ(def.exit_code, 0) << def.out << def.err;
    EXPECT_LT(last_json_line(def.out).at("max_relative_error").get<double>(), 1e-4);

    const auto narrow = run({"gradcheck", "--sizes", "10,1,1,1,3"});
    EXPECT_EQ(narrow.exit_code, 0) << narrow.out;

    const auto corrupt = run({"gradcheck", "--corrupt"});
    EXPECT_EQ(corrupt.exit_code, 1);
    EXPECT_FALSE(last_json_line(corrupt.out).at("passed").get<bool>());

    EXPECT_EQ(run({"gradcheck", "--sizes", "10,5,4"}).exit_code, 2);
    EXPECT_EQ(run({"gradcheck", "--sizes", "10,0,4,7,3"}).exit_code, 2);
}
