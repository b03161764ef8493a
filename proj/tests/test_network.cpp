#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tanloss/gradcheck.hpp"
#include "tanloss/network.hpp"
#include "test_support.hpp"

using namespace tanloss;

namespace {

LayerSizes small_sizes() { return {.input = 6, .gru1 = 3, .gru2 = 2, .head_hidden = 4, .verbs = 2, .states = 3}; }

Sample make_sample(std::vector<std::size_t> tokens, std::size_t verbs = 2, std::size_t states = 3) {
    Sample s;
    s.tokens = std::move(tokens);
    s.verb_label.assign(verbs, 0.0);
    s.state_label.assign(states, 0.0);
    s.verb_label[0] = 1.0;
    s.state_label[states - 1] = 1.0;
    return s;
}

ModelParams random_params(const LayerSizes& sizes, std::uint64_t seed) {
    ModelParams p = init_params(sizes, seed);
    std::mt19937_64 rng(seed + 1000);
    std::uniform_real_distribution<double> bias(-0.3, 0.3);
    p.for_each([&](const std::string&, auto& t) {
        if constexpr (std::decay_t<decltype(t)>::IsVectorAtCompileTime)
            for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = bias(rng);
    });
    return p;
}

// Plain-loop reference for one sample: no Eigen arithmetic, explicit one-hot vectors.
using Vec = std::vector<double>;

double sig(double a) { return 1.0 / (1.0 + std::exp(-a)); }

Vec matvec(const Matrix& W, const Vec& x) {
    Vec y(static_cast<std::size_t>(W.rows()), 0.0);
    for (Eigen::Index i = 0; i < W.rows(); ++i)
        for (Eigen::Index j = 0; j < W.cols(); ++j) y[i] += W(i, j) * x[j];
    return y;
}

Vec ref_gru(const GruLayerParams& p, const Vec& x, const Vec& h) {
    const Vec wz = matvec(p.W_z, x), wr = matvec(p.W_r, x), wh = matvec(p.W_h, x);
    const Vec uz = matvec(p.U_z, h), ur = matvec(p.U_r, h);
    const std::size_t n = h.size();
    Vec z(n), r(n), rh(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = sig(wz[i] + uz[i] + p.b_z[i]);
        r[i] = sig(wr[i] + ur[i] + p.b_r[i]);
        rh[i] = r[i] * h[i];
    }
    const Vec uh = matvec(p.U_h, rh);
    Vec out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double c = std::tanh(wh[i] + uh[i] + p.b_h[i]);
        out[i] = (1.0 - z[i]) * h[i] + z[i] * c;
    }
    return out;
}

Vec ref_head(const MlpHeadParams& p, const Vec& h) {
    Vec a = matvec(p.W1, h);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::max(0.0, a[i] + p.b1[i]);
    Vec o = matvec(p.W2, a);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = sig(o[i] + p.b2[i]);
    return o;
}

std::pair<Vec, Vec> ref_forward(const ModelParams& p, const std::vector<std::size_t>& tokens) {
    Vec h1(p.gru1.hidden_size(), 0.0), h2(p.gru2.hidden_size(), 0.0);
    for (auto tok : tokens) {
        Vec x(p.gru1.input_size(), 0.0);
        x[tok] = 1.0;
        h1 = ref_gru(p.gru1, x, h1);
        h2 = ref_gru(p.gru2, h1, h2);
    }
    return {ref_head(p.verb_head, h2), ref_head(p.state_head, h2)};
}

double max_abs_diff(const ModelParams& a, const ModelParams& b) {
    std::vector<double> da, db;
    a.for_each([&](const std::string&, const auto& t) { da.insert(da.end(), t.data(), t.data() + t.size()); });
    b.for_each([&](const std::string&, const auto& t) { db.insert(db.end(), t.data(), t.data() + t.size()); });
    double m = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
    return m;
}

double max_abs(const ModelParams& a) {
    double m = 0.0;
    a.for_each([&](const std::string&, const auto& t) { m = std::max(m, t.cwiseAbs().maxCoeff()); });
    return m;
}

} // namespace

TEST(LayerSizes, FingerprintAndValidation) {
    const LayerSizes s{.input = 60, .gru1 = 16, .gru2 = 8, .head_hidden = 5, .verbs = 8, .states = 6};
    EXPECT_EQ(s.fingerprint(), "input=60;gru=16,8;head=5;verbs=8;states=6");
    LayerSizes bad = s;
    bad.gru2 = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    EXPECT_THROW(ModelParams{bad}, ConfigError);
}

TEST(InitParams, ShapesAndSizesRoundTrip) {
    const LayerSizes s{.input = 60, .gru1 = 16, .gru2 = 8, .head_hidden = 5, .verbs = 8, .states = 6};
    const auto p = init_params(s, 1);
    EXPECT_EQ(p.gru1.W_z.rows(), 16);
    EXPECT_EQ(p.gru1.W_z.cols(), 60);
    EXPECT_EQ(p.gru1.U_h.rows(), 16);
    EXPECT_EQ(p.gru1.U_h.cols(), 16);
    EXPECT_EQ(p.gru2.W_r.cols(), 16);
    EXPECT_EQ(p.verb_head.W2.rows(), 8);
    EXPECT_EQ(p.state_head.W2.rows(), 6);
    EXPECT_EQ(p.sizes(), s);
    const std::size_t gru1 = 3 * (16 * 60 + 16 * 16 + 16), gru2 = 3 * (8 * 16 + 8 * 8 + 8);
    const std::size_t heads = (5 * 8 + 5 + 8 * 5 + 8) + (5 * 8 + 5 + 6 * 5 + 6);
    EXPECT_EQ(p.parameter_count(), gru1 + gru2 + heads);
}

TEST(InitParams, DeterministicGlorotRangeZeroBiases) {
    const LayerSizes s{.input = 30, .gru1 = 10, .gru2 = 7, .head_hidden = 5, .verbs = 3, .states = 4};
    const auto a = init_params(s, 42), b = init_params(s, 42), c = init_params(s, 43);
    EXPECT_EQ(a, b);
    EXPECT_FALSE(a == c);
    a.for_each([](const std::string& name, const auto& t) {
        if constexpr (std::decay_t<decltype(t)>::IsVectorAtCompileTime) {
            EXPECT_TRUE(t.isZero(0.0)) << name;
        } else {
            const double limit = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
            EXPECT_LE(t.cwiseAbs().maxCoeff(), limit) << name;
            EXPECT_GT(t.cwiseAbs().maxCoeff(), 0.5 * limit) << name;
        }
    });
}

TEST(ParamNames, FixedOrder) {
    const ModelParams p(small_sizes());
    std::vector<std::string> names;
    p.for_each([&](const std::string& n, const auto&) { names.push_back(n); });
    ASSERT_EQ(names.size(), 26u);
    EXPECT_EQ(names.front(), "gru1.W_z");
    EXPECT_EQ(names[9], "gru2.W_z");
    EXPECT_EQ(names[18], "verb_head.W1");
    EXPECT_EQ(names.back(), "state_head.b2");
}

TEST(GruStep, ZeroParamsHalveState) {
    const GruLayerParams p(4, 3);
    Vector h(3);
    h << 0.8, -0.4, 0.2;
    const Vector out = gru_step(p, Vector::Ones(4), h);
    // z = 0.5 and candidate = tanh(0) = 0
    EXPECT_TRUE(out.isApprox(0.5 * h, 1e-15));
}

TEST(GruStep, MatchesScalarReference) {
    const auto params = random_params(small_sizes(), 9);
    std::mt19937_64 rng(4);
    const auto xv = tanloss::testing::uniform_vector(rng, 6, -1, 1);
    const auto hv = tanloss::testing::uniform_vector(rng, 3, -1, 1);
    const Vector x = Eigen::Map<const Vector>(xv.data(), 6), h = Eigen::Map<const Vector>(hv.data(), 3);
    const Vector got = gru_step(params.gru1, x, h);
    const Vec want = ref_gru(params.gru1, xv, hv);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
}

TEST(GruStep, ShapeMismatchThrows) {
    const GruLayerParams p(4, 3);
    EXPECT_THROW(gru_step(p, Vector::Zero(5), Vector::Zero(3)), ShapeError);
    EXPECT_THROW(gru_step(p, Vector::Zero(4), Vector::Zero(2)), ShapeError);
}

TEST(Forward, ZeroParamsGiveOneHalf) {
    const ModelParams p(small_sizes());
    const std::vector<Sample> samples{make_sample({1, 2, 3}), make_sample({0})};
    const auto out = forward(p, make_batch(samples, 5));
    EXPECT_TRUE(out.verb_pred.isConstant(0.5, 0.0));
    EXPECT_TRUE(out.state_pred.isConstant(0.5, 0.0));
}

TEST(Forward, MatchesScalarReference) {
    const auto params = random_params(small_sizes(), 11);
    const std::vector<Sample> samples{make_sample({1, 4, 2, 0, 3}), make_sample({5, 5}), make_sample({2})};
    // pad index outside the vocabulary so every listed token is a real input
    const auto out = forward(params, make_batch(samples, 6));
    for (std::size_t r = 0; r < samples.size(); ++r) {
        const auto [verb, state] = ref_forward(params, samples[r].tokens);
        for (std::size_t k = 0; k < verb.size(); ++k) EXPECT_NEAR(out.verb_pred(r, k), verb[k], 1e-12);
        for (std::size_t k = 0; k < state.size(); ++k) EXPECT_NEAR(out.state_pred(r, k), state[k], 1e-12);
    }
}

TEST(Forward, PadTokenIsZeroInput) {
    auto params = random_params(small_sizes(), 12);
    const std::size_t pad = 5;
    const std::vector<Sample> with_pad{make_sample({1, pad, 2})};
    const auto a = forward(params, make_batch(with_pad, pad));
    // The PAD column never contributes; scrambling it must not change anything.
    for (GruLayerParams* g : {&params.gru1}) {
        g->W_z.col(pad).setConstant(7.0);
        g->W_r.col(pad).setConstant(-3.0);
        g->W_h.col(pad).setConstant(2.0);
    }
    const auto b = forward(params, make_batch(with_pad, pad));
    EXPECT_EQ(a.verb_pred, b.verb_pred);
    EXPECT_EQ(a.state_pred, b.state_pred);
}

TEST(Forward, PaddingInvariance) {
    const auto params = random_params(small_sizes(), 13);
    const Sample s = make_sample({3, 1, 4});
    const std::vector<Sample> alone{s}, padded{s, make_sample({1, 2, 3, 4, 0, 1, 2, 3, 4})};
    const auto a = forward(params, make_batch(alone, 5));
    auto batch = make_batch(padded, 5);
    ASSERT_EQ(batch.max_length, 9u);
    const auto b = forward(params, batch);
    EXPECT_EQ(a.verb_pred.row(0), b.verb_pred.row(0));
    EXPECT_EQ(a.state_pred.row(0), b.state_pred.row(0));
    // whatever sits beyond the true length is never read
    for (std::size_t j = 3; j < batch.max_length; ++j) batch.token_matrix[j] = 2;
    const auto c = forward(params, batch);
    EXPECT_EQ(a.verb_pred.row(0), c.verb_pred.row(0));
}

TEST(Forward, OutputsInOpenUnitIntervalAndDeterministic) {
    const LayerSizes s{.input = 20, .gru1 = 12, .gru2 = 8, .head_hidden = 6, .verbs = 4, .states = 3};
    const auto params = init_params(s, 5);
    const auto task = tanloss::testing::make_toy_task(40, 8);
    const auto batch = make_batch(task.corpus.samples, task.corpus.vocabs.text.pad_index().value());
    const auto a = forward(params, batch, 1), b = forward(params, batch, 1), c = forward(params, batch, 3);
    EXPECT_EQ(a.verb_pred, b.verb_pred);
    EXPECT_EQ(a.verb_pred, c.verb_pred);
    EXPECT_EQ(a.state_pred, c.state_pred);
    EXPECT_GT(a.verb_pred.minCoeff(), 0.0);
    EXPECT_LT(a.verb_pred.maxCoeff(), 1.0);
    EXPECT_GT(a.state_pred.minCoeff(), 0.0);
    EXPECT_LT(a.state_pred.maxCoeff(), 1.0);
}

TEST(Forward, RejectsBadTokens) {
    const ModelParams p(small_sizes());
    const std::vector<Sample> oob{make_sample({1, 6})};
    EXPECT_THROW(forward(p, make_batch(oob, 7)), DataError);
    Batch empty_row = make_batch(std::vector<Sample>{make_sample({1})}, 5);
    empty_row.lengths[0] = 0;
    EXPECT_THROW(forward(p, empty_row), DataError);
    EXPECT_THROW(make_batch(std::vector<Sample>{make_sample({})}, 5), DataError);
}

TEST(Backward, ZeroOutputGradientsGiveZeroParameterGradients) {
    const auto params = random_params(small_sizes(), 14);
    const std::vector<Sample> samples{make_sample({1, 2}), make_sample({3, 4, 0})};
    const auto batch = make_batch(samples, 5);
    const auto out = forward(params, batch);
    const RowMatrix vg = RowMatrix::Zero(2, 2), sg = RowMatrix::Zero(2, 3);
    EXPECT_EQ(max_abs(backward(params, batch, out.traces, vg, sg)), 0.0);
}

TEST(Backward, MatchesCentralDifferences) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        GradCheckOptions opt;
        opt.seed = seed;
        opt.coordinates = 300;
        opt.lengths = {3, 5, 1};
        const LayerSizes s{.input = 7, .gru1 = 4, .gru2 = 3, .head_hidden = 5, .verbs = 3, .states = 2};
        const auto report = gradient_check(s, opt);
        EXPECT_LT(report.max_relative_error, 1e-4) << "seed " << seed << " worst " << report.worst_coordinate;
        // fewer parameters than requested coordinates: every one is checked
        EXPECT_EQ(report.coordinates, ModelParams(s).parameter_count());
    }
}

TEST(Backward, GradientCheckDetectsCorruption) {
    GradCheckOptions opt;
    opt.tamper = [](ParamGrads& g) {
        g.for_each([](const std::string&, auto& t) { t *= 1.01; });
    };
    const auto report = gradient_check(small_sizes(), opt);
    EXPECT_GT(report.max_relative_error, 1e-3);
}

TEST(Backward, DuplicatedSampleDoublesGradient) {
    const auto params = random_params(small_sizes(), 15);
    const Sample s = make_sample({2, 0, 4, 1});
    const auto one = batch_objective_grad(params, make_batch(std::vector<Sample>{s}, 5));
    const auto two = batch_objective_grad(params, make_batch(std::vector<Sample>{s, s}, 5));
    ModelParams doubled = one;
    doubled.for_each([](const std::string&, auto& t) { t *= 2.0; });
    EXPECT_LE(max_abs_diff(two, doubled), 1e-12 * std::max(1.0, max_abs(doubled)));
}

TEST(Backward, HeadsAreIndependent) {
    const auto params = random_params(small_sizes(), 16);
    const std::vector<Sample> samples{make_sample({1, 2, 3})};
    const auto batch = make_batch(samples, 5);
    const auto out = forward(params, batch);
    const RowMatrix vg = RowMatrix::Constant(1, 2, 0.7), sg0 = RowMatrix::Zero(1, 3);
    const RowMatrix sg1 = RowMatrix::Constant(1, 3, -1.3);
    const auto g0 = backward(params, batch, out.traces, vg, sg0);
    const auto g1 = backward(params, batch, out.traces, vg, sg1);
    EXPECT_TRUE(g0.state_head.W1.isZero(0.0));
    EXPECT_TRUE(g0.state_head.W2.isZero(0.0));
    EXPECT_EQ(g0.verb_head, g1.verb_head);
    EXPECT_FALSE(g1.state_head.W2.isZero(0.0));
}

TEST(Backward, WorkerCountOnlyChangesSummationOrder) {
    const LayerSizes s{.input = 20, .gru1 = 6, .gru2 = 5, .head_hidden = 4, .verbs = 4, .states = 3};
    const auto params = random_params(s, 17);
    const auto task = tanloss::testing::make_toy_task(24, 2);
    const auto batch = make_batch(task.corpus.samples, task.corpus.vocabs.text.pad_index().value());
    const auto out = forward(params, batch);
    const RowMatrix vg = RowMatrix::Constant(batch.size(), 4, 0.25), sg = RowMatrix::Constant(batch.size(), 3, -0.5);
    const auto g1 = backward(params, batch, out.traces, vg, sg, 1);
    const auto g3a = backward(params, batch, out.traces, vg, sg, 3);
    const auto g3b = backward(params, batch, out.traces, vg, sg, 3);
    EXPECT_EQ(g3a, g3b);
    EXPECT_LE(max_abs_diff(g1, g3a), 1e-12 * std::max(1.0, max_abs(g1)));
}

TEST(Backward, RejectsMismatchedInputs) {
    const auto params = random_params(small_sizes(), 18);
    const std::vector<Sample> samples{make_sample({1, 2})};
    const auto batch = make_batch(samples, 5);
    const auto out = forward(params, batch);
    EXPECT_THROW(backward(params, batch, out.traces, RowMatrix::Zero(1, 3), RowMatrix::Zero(1, 3)), ShapeError);
    EXPECT_THROW(backward(params, batch, {}, RowMatrix::Zero(1, 2), RowMatrix::Zero(1, 3)), ShapeError);
}
