#ifndef TANLOSS_NETWORK_HPP
#define TANLOSS_NETWORK_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "types.hpp"

namespace tanloss {

/// Layer widths: input -> gru1 -> gru2 -> {head_hidden -> verbs, head_hidden -> states}.
struct LayerSizes {
    std::size_t input = 0;
    std::size_t gru1 = 1600;
    std::size_t gru2 = 800;
    std::size_t head_hidden = 500;
    std::size_t verbs = 0;
    std::size_t states = 0;

    void validate() const {
        if (input == 0 || gru1 == 0 || gru2 == 0 || head_hidden == 0 || verbs == 0 || states == 0) {
            throw ConfigError("all layer sizes must be positive (" + fingerprint() + ")");
        }
    }

    std::string fingerprint() const {
        std::ostringstream os;
        os << "input=" << input << ";gru=" << gru1 << "," << gru2 << ";head=" << head_hidden << ";verbs=" << verbs
           << ";states=" << states;
        return os.str();
    }

    bool operator==(const LayerSizes&) const = default;
};

struct GruLayerParams {
    Matrix W_z, W_r, W_h; // hidden x input
    Matrix U_z, U_r, U_h; // hidden x hidden
    Vector b_z, b_r, b_h; // hidden

    GruLayerParams() = default;
    GruLayerParams(std::size_t input, std::size_t hidden) {
        const auto i = static_cast<Eigen::Index>(input), h = static_cast<Eigen::Index>(hidden);
        for (Matrix* w : {&W_z, &W_r, &W_h}) w->setZero(h, i);
        for (Matrix* u : {&U_z, &U_r, &U_h}) u->setZero(h, h);
        for (Vector* b : {&b_z, &b_r, &b_h}) b->setZero(h);
    }

    std::size_t input_size() const { return static_cast<std::size_t>(W_z.cols()); }
    std::size_t hidden_size() const { return static_cast<std::size_t>(W_z.rows()); }

    template <class Self, class Fn>
    static void visit(Self& self, std::string_view prefix, Fn&& fn) {
        const std::string p(prefix);
        fn(p + ".W_z", self.W_z);
        fn(p + ".W_r", self.W_r);
        fn(p + ".W_h", self.W_h);
        fn(p + ".U_z", self.U_z);
        fn(p + ".U_r", self.U_r);
        fn(p + ".U_h", self.U_h);
        fn(p + ".b_z", self.b_z);
        fn(p + ".b_r", self.b_r);
        fn(p + ".b_h", self.b_h);
    }

    bool operator==(const GruLayerParams& o) const {
        return W_z == o.W_z && W_r == o.W_r && W_h == o.W_h && U_z == o.U_z && U_r == o.U_r && U_h == o.U_h &&
               b_z == o.b_z && b_r == o.b_r && b_h == o.b_h;
    }
};

/// sigmoid(W2 * relu(W1 * h + b1) + b2)
struct MlpHeadParams {
    Matrix W1;
    Vector b1;
    Matrix W2;
    Vector b2;

    MlpHeadParams() = default;
    MlpHeadParams(std::size_t input, std::size_t hidden, std::size_t output) {
        const auto i = static_cast<Eigen::Index>(input), h = static_cast<Eigen::Index>(hidden),
                   o = static_cast<Eigen::Index>(output);
        W1.setZero(h, i);
        b1.setZero(h);
        W2.setZero(o, h);
        b2.setZero(o);
    }

    template <class Self, class Fn>
    static void visit(Self& self, std::string_view prefix, Fn&& fn) {
        const std::string p(prefix);
        fn(p + ".W1", self.W1);
        fn(p + ".b1", self.b1);
        fn(p + ".W2", self.W2);
        fn(p + ".b2", self.b2);
    }

    bool operator==(const MlpHeadParams& o) const { return W1 == o.W1 && b1 == o.b1 && W2 == o.W2 && b2 == o.b2; }
};

struct ModelParams {
    GruLayerParams gru1;
    GruLayerParams gru2;
    MlpHeadParams verb_head;
    MlpHeadParams state_head;

    ModelParams() = default;

    /// All-zero parameters with the given shapes.
    explicit ModelParams(const LayerSizes& s)
        : gru1(s.input, s.gru1), gru2(s.gru1, s.gru2), verb_head(s.gru2, s.head_hidden, s.verbs),
          state_head(s.gru2, s.head_hidden, s.states) {
        s.validate();
    }

    LayerSizes sizes() const {
        return {gru1.input_size(),
                gru1.hidden_size(),
                gru2.hidden_size(),
                static_cast<std::size_t>(verb_head.W1.rows()),
                static_cast<std::size_t>(verb_head.W2.rows()),
                static_cast<std::size_t>(state_head.W2.rows())};
    }

    /// Visits every tensor in the fixed serialization order as fn(name, tensor).
    template <class Fn>
    void for_each(Fn&& fn) {
        visit_all(*this, fn);
    }
    template <class Fn>
    void for_each(Fn&& fn) const {
        visit_all(*this, fn);
    }

    void set_zero() {
        for_each([](const std::string&, auto& t) { t.setZero(); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
        return n;
    }

    bool operator==(const ModelParams&) const = default;

private:
    template <class Self, class Fn>
    static void visit_all(Self& self, Fn& fn) {
        GruLayerParams::visit(self.gru1, "gru1", fn);
        GruLayerParams::visit(self.gru2, "gru2", fn);
        MlpHeadParams::visit(self.verb_head, "verb_head", fn);
        MlpHeadParams::visit(self.state_head, "state_head", fn);
    }
};

using ParamGrads = ModelParams;

inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    z.set_zero();
    return z;
}

/// Glorot-uniform weights in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases.
inline ModelParams init_params(const LayerSizes& sizes, std::uint64_t seed) {
    ModelParams params(sizes);
    std::mt19937_64 rng(seed);
    params.for_each([&](const std::string&, auto& t) {
        if constexpr (!std::decay_t<decltype(t)>::IsVectorAtCompileTime) { // biases stay zero
            const double s = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
            std::uniform_real_distribution<double> dist(-s, s);
            for (Eigen::Index r = 0; r < t.rows(); ++r)
                for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = dist(rng);
        }
    });
    return params;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct GruStepTrace {
    Vector z, r, c, h; // gates, candidate, and the step's output state
};

struct HeadTrace {
    Vector pre_hidden; // W1 h + b1
    Vector hidden;     // relu(pre_hidden)
    Vector output;     // sigmoid(W2 hidden + b2)
};

/// Everything backward() needs for one sample; both step vectors have the sample's true length.
struct SampleTrace {
    std::vector<std::size_t> tokens;
    std::vector<GruStepTrace> layer1;
    std::vector<GruStepTrace> layer2;
    HeadTrace verb;
    HeadTrace state;
};

struct ForwardResult {
    RowMatrix verb_pred;
    RowMatrix state_pred;
    std::vector<SampleTrace> traces;
};

namespace detail {

inline Vector sigmoid(const Vector& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

/// One-hot input given by index; nullopt is the all-zero (PAD) input.
struct OneHot {
    std::optional<std::size_t> index;
};

inline void add_input(const Matrix& W, const OneHot& x, Vector& acc) {
    if (x.index) acc += W.col(static_cast<Eigen::Index>(*x.index));
}
inline void add_input(const Matrix& W, const Vector& x, Vector& acc) { acc.noalias() += W * x; }

inline void add_input_grad(Matrix& dW, const Vector& delta, const OneHot& x) {
    if (x.index) dW.col(static_cast<Eigen::Index>(*x.index)) += delta;
}
inline void add_input_grad(Matrix& dW, const Vector& delta, const Vector& x) { dW.noalias() += delta * x.transpose(); }

template <class Input>
void gru_forward_step(const GruLayerParams& p, const Input& x, const Vector& h, GruStepTrace& out) {
    Vector a_z = p.b_z;
    a_z.noalias() += p.U_z * h;
    add_input(p.W_z, x, a_z);
    Vector a_r = p.b_r;
    a_r.noalias() += p.U_r * h;
    add_input(p.W_r, x, a_r);
    out.z = sigmoid(a_z);
    out.r = sigmoid(a_r);
    const Vector rh = out.r.cwiseProduct(h);
    Vector a_h = p.b_h;
    a_h.noalias() += p.U_h * rh;
    add_input(p.W_h, x, a_h);
    out.c = a_h.array().tanh().matrix();
    out.h = h + out.z.cwiseProduct(out.c - h); // (1 - z) * h + z * c
}

/// Accumulates parameter gradients for one step; returns dL/dh_prev. Writes dL/dx when requested.
template <class Input>
Vector gru_backward_step(const GruLayerParams& p, const Input& x, const Vector& h_prev, const GruStepTrace& t,
                         const Vector& dh, GruLayerParams& g, Vector* dx) {
    const Vector ones = Vector::Ones(dh.size());
    const Vector da_z = dh.cwiseProduct(t.c - h_prev).cwiseProduct(t.z.cwiseProduct(ones - t.z));
    const Vector da_h = dh.cwiseProduct(t.z).cwiseProduct((ones.array() - t.c.array().square()).matrix());
    const Vector rh = t.r.cwiseProduct(h_prev);
    Vector d_rh(dh.size());
    d_rh.noalias() = p.U_h.transpose() * da_h;
    const Vector da_r = d_rh.cwiseProduct(h_prev).cwiseProduct(t.r.cwiseProduct(ones - t.r));

    Vector dh_prev = dh.cwiseProduct(ones - t.z) + d_rh.cwiseProduct(t.r);
    dh_prev.noalias() += p.U_z.transpose() * da_z;
    dh_prev.noalias() += p.U_r.transpose() * da_r;

    g.U_z.noalias() += da_z * h_prev.transpose();
    g.U_r.noalias() += da_r * h_prev.transpose();
    g.U_h.noalias() += da_h * rh.transpose();
    add_input_grad(g.W_z, da_z, x);
    add_input_grad(g.W_r, da_r, x);
    add_input_grad(g.W_h, da_h, x);
    g.b_z += da_z;
    g.b_r += da_r;
    g.b_h += da_h;

    if (dx) {
        dx->noalias() = p.W_z.transpose() * da_z;
        dx->noalias() += p.W_r.transpose() * da_r;
        dx->noalias() += p.W_h.transpose() * da_h;
    }
    return dh_prev;
}

inline HeadTrace head_forward(const MlpHeadParams& p, const Vector& h) {
    HeadTrace t;
    t.pre_hidden = p.b1;
    t.pre_hidden.noalias() += p.W1 * h;
    t.hidden = t.pre_hidden.cwiseMax(0.0);
    Vector a = p.b2;
    a.noalias() += p.W2 * t.hidden;
    t.output = sigmoid(a);
    return t;
}

/// Returns dL/dh for the encoder state feeding this head.
inline Vector head_backward(const MlpHeadParams& p, const Vector& h, const HeadTrace& t, std::span<const double> dp,
                            MlpHeadParams& g) {
    const Eigen::Map<const Vector> dout(dp.data(), static_cast<Eigen::Index>(dp.size()));
    const Vector da2 = dout.cwiseProduct(t.output.cwiseProduct(Vector::Ones(t.output.size()) - t.output));
    g.W2.noalias() += da2 * t.hidden.transpose();
    g.b2 += da2;
    Vector da1(t.hidden.size());
    da1.noalias() = p.W2.transpose() * da2;
    for (Eigen::Index i = 0; i < da1.size(); ++i)
        if (!(t.pre_hidden[i] > 0.0)) da1[i] = 0.0;
    g.W1.noalias() += da1 * h.transpose();
    g.b1 += da1;
    Vector dh(h.size());
    dh.noalias() = p.W1.transpose() * da1;
    return dh;
}

inline OneHot text_input(std::size_t token, std::size_t pad_index) {
    return token == pad_index ? OneHot{} : OneHot{token};
}

inline SampleTrace forward_sample(const ModelParams& params, std::span<const std::size_t> tokens,
                                  std::size_t pad_index) {
    const auto h1n = static_cast<Eigen::Index>(params.gru1.hidden_size());
    const auto h2n = static_cast<Eigen::Index>(params.gru2.hidden_size());
    SampleTrace t;
    t.tokens.assign(tokens.begin(), tokens.end());
    t.layer1.resize(tokens.size());
    t.layer2.resize(tokens.size());
    Vector h1 = Vector::Zero(h1n), h2 = Vector::Zero(h2n);
    for (std::size_t step = 0; step < tokens.size(); ++step) {
        gru_forward_step(params.gru1, text_input(tokens[step], pad_index), h1, t.layer1[step]);
        h1 = t.layer1[step].h;
        gru_forward_step(params.gru2, h1, h2, t.layer2[step]);
        h2 = t.layer2[step].h;
    }
    t.verb = head_forward(params.verb_head, h2);
    t.state = head_forward(params.state_head, h2);
    return t;
}

inline void backward_sample(const ModelParams& params, const SampleTrace& t, std::size_t pad_index,
                            std::span<const double> verb_grad, std::span<const double> state_grad, ParamGrads& g) {
    const std::size_t len = t.layer2.size();
    const Vector& h_final = t.layer2.back().h;
    Vector dh2 = head_backward(params.verb_head, h_final, t.verb, verb_grad, g.verb_head);
    dh2 += head_backward(params.state_head, h_final, t.state, state_grad, g.state_head);

    const Vector zero1 = Vector::Zero(static_cast<Eigen::Index>(params.gru1.hidden_size()));
    const Vector zero2 = Vector::Zero(static_cast<Eigen::Index>(params.gru2.hidden_size()));

    // Layer 2 first: its input gradients become the per-step external gradients of layer 1.
    std::vector<Vector> dh1_ext(len, zero1);
    for (std::size_t step = len; step-- > 0;) {
        const Vector& h_prev = step > 0 ? t.layer2[step - 1].h : zero2;
        dh2 = gru_backward_step(params.gru2, t.layer1[step].h, h_prev, t.layer2[step], dh2, g.gru2, &dh1_ext[step]);
    }
    Vector dh1 = zero1;
    for (std::size_t step = len; step-- > 0;) {
        dh1 += dh1_ext[step];
        const Vector& h_prev = step > 0 ? t.layer1[step - 1].h : zero1;
        dh1 = gru_backward_step(params.gru1, text_input(t.tokens[step], pad_index), h_prev, t.layer1[step], dh1,
                                g.gru1, static_cast<Vector*>(nullptr));
    }
}

inline void check_batch(const ModelParams& params, const Batch& batch) {
    const std::size_t input = params.gru1.input_size();
    for (std::size_t r = 0; r < batch.size(); ++r) {
        if (batch.lengths[r] == 0) throw DataError("sample " + std::to_string(r) + " has length 0");
        for (auto tok : batch.row_tokens(r)) {
            if (tok >= input) {
                throw DataError("token index " + std::to_string(tok) + " out of range for input dimension " +
                                std::to_string(input));
            }
        }
    }
}

} // namespace detail

/// One GRU update: h' = (1 - z) * h + z * tanh(W_h x + U_h (r * h) + b_h).
inline Vector gru_step(const GruLayerParams& params, const Vector& x, const Vector& h) {
    if (static_cast<std::size_t>(x.size()) != params.input_size() ||
        static_cast<std::size_t>(h.size()) != params.hidden_size()) {
        throw ShapeError("gru_step: expected input " + std::to_string(params.input_size()) + " and hidden " +
                         std::to_string(params.hidden_size()) + ", got " + std::to_string(x.size()) + " and " +
                         std::to_string(h.size()));
    }
    GruStepTrace t;
    detail::gru_forward_step(params, x, h, t);
    return t.h;
}

/**
 * Runs both GRU layers over exactly lengths[r] steps of each row and reads the
 * heads off the layer-2 state at the true length, so padding never reaches
 * the outputs.
 */
inline ForwardResult forward(const ModelParams& params, const Batch& batch, std::size_t workers = worker_count()) {
    detail::check_batch(params, batch);
    const auto rows = static_cast<Eigen::Index>(batch.size());
    ForwardResult out;
    out.verb_pred.resize(rows, params.verb_head.W2.rows());
    out.state_pred.resize(rows, params.state_head.W2.rows());
    out.traces.resize(batch.size());
    parallel_blocks(batch.size(), workers, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            out.traces[r] = detail::forward_sample(params, batch.row_tokens(r), batch.pad_index);
            out.verb_pred.row(static_cast<Eigen::Index>(r)) = out.traces[r].verb.output.transpose();
            out.state_pred.row(static_cast<Eigen::Index>(r)) = out.traces[r].state.output.transpose();
        }
    });
    return out;
}

/**
 * Reverse-mode gradients of sum_r loss_r w.r.t. every parameter, given
 * dloss/dprediction per row and head. Contributions are summed over the batch
 * in row order (per worker block, then block order).
 */
inline ParamGrads backward(const ModelParams& params, const Batch& batch, const std::vector<SampleTrace>& traces,
                           const RowMatrix& verb_grads, const RowMatrix& state_grads,
                           std::size_t workers = worker_count()) {
    const auto rows = static_cast<Eigen::Index>(batch.size());
    if (traces.size() != batch.size() || verb_grads.rows() != rows || state_grads.rows() != rows) {
        throw ShapeError("backward: traces/gradients do not match the batch");
    }
    if (verb_grads.cols() != params.verb_head.W2.rows() || state_grads.cols() != params.state_head.W2.rows()) {
        throw ShapeError("backward: output gradient width does not match the heads");
    }
    for (std::size_t r = 0; r < batch.size(); ++r) {
        if (traces[r].layer1.size() != batch.lengths[r]) {
            throw ShapeError("backward: trace length differs from batch length at row " + std::to_string(r));
        }
    }

    std::vector<ParamGrads> partial;
    const std::size_t blocks = std::max<std::size_t>(1, std::min(workers, batch.size()));
    partial.assign(blocks, zeros_like(params));
    parallel_blocks(batch.size(), workers, [&](std::size_t b, std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            detail::backward_sample(params, traces[r], batch.pad_index, row_span(verb_grads, row),
                                    row_span(state_grads, row), partial[b]);
        }
    });
    ParamGrads total = std::move(partial.front());
    for (std::size_t b = 1; b < partial.size(); ++b) {
        std::vector<Eigen::Map<Eigen::VectorXd>> dst;
        total.for_each([&](const std::string&, auto& t) { dst.emplace_back(t.data(), t.size()); });
        std::size_t k = 0;
        partial[b].for_each([&](const std::string&, const auto& t) { dst[k++] += Eigen::Map<const Eigen::VectorXd>(t.data(), t.size()); });
    }
    return total;
}

} // namespace tanloss

#endif
