#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fairlong/rng.hpp"
#include "fairlong/tensor.hpp"

// Network parameter bundles and forward passes. All forwards are batched:
// s is an [n x 1] column of {0,1}, x an [n x d] feature matrix, and every
// output keeps the batch as its first dimension.

namespace fairlong {

using NamedParams = std::vector<std::pair<std::string, Param*>>;

inline void init_uniform(Param& p, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.value) v = rng.uniform(-bound, bound);
}

// ---- MLP classifier: FC(in->h1) -> tanh -> FC(h1->h2) -> tanh -> FC(h2->1) -> sigmoid
// Input is [X, S] concatenated, so in = d + 1.
struct MlpClassifierParams {
    std::size_t d = 0;
    Param w1, b1, w2, b2, w3, b3;

    MlpClassifierParams() = default;
    MlpClassifierParams(std::size_t feature_dim, std::size_t h1, std::size_t h2)
        : d(feature_dim),
          w1(feature_dim + 1, h1),
          b1(1, h1),
          w2(h1, h2),
          b2(1, h2),
          w3(h2, 1),
          b3(1, 1) {}

    void init(Rng& rng) {
        init_uniform(w1, d + 1, rng);
        init_uniform(b1, d + 1, rng);
        init_uniform(w2, w2.rows, rng);
        init_uniform(b2, w2.rows, rng);
        init_uniform(w3, w3.rows, rng);
        init_uniform(b3, w3.rows, rng);
    }

    NamedParams params() {
        return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}, {"w3", &w3}, {"b3", &b3}};
    }
};

inline Tensor affine(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b) {
    return t.add_rowvec(t.matmul(x, w), b);
}

// P(Y=1 | s, x) for a batch; [n x 1] in (0,1).
inline Tensor mlp_forward(Tape& t, MlpClassifierParams& m, const Tensor& s, const Tensor& x,
                          bool trainable) {
    if (s.cols() != 1 || s.rows() != x.rows())
        throw ShapeError("mlp_forward: s must be [n x 1] matching x rows");
    if (x.cols() != m.d)
        throw ShapeError("mlp_forward: feature dim " + std::to_string(x.cols()) +
                         " != model dim " + std::to_string(m.d));
    Tensor in = t.concat_cols({x, s});
    Tensor h1 = t.tanh_(affine(t, in, t.bind(m.w1, trainable), t.bind(m.b1, trainable)));
    Tensor h2 = t.tanh_(affine(t, h1, t.bind(m.w2, trainable), t.bind(m.b2, trainable)));
    return t.sigmoid(affine(t, h2, t.bind(m.w3, trainable), t.bind(m.b3, trainable)));
}

// Decision function abstraction; swapping it on a generator realizes the
// soft intervention. Returns [n x 1] probabilities.
using DecisionFn = std::function<Tensor(Tape&, const Tensor& s, const Tensor& x)>;

inline DecisionFn make_decision_fn(MlpClassifierParams& m, bool trainable) {
    return [&m, trainable](Tape& t, const Tensor& s, const Tensor& x) {
        return mlp_forward(t, m, s, x, trainable);
    };
}

// ---- GRU cell -------------------------------------------------------------

struct GruCellParams {
    std::size_t in = 0, hidden = 0;
    Param wz, uz, bz, wr, ur, br, wh, uh, bh;

    GruCellParams() = default;
    GruCellParams(std::size_t in_dim, std::size_t hidden_dim)
        : in(in_dim),
          hidden(hidden_dim),
          wz(in_dim, hidden_dim),
          uz(hidden_dim, hidden_dim),
          bz(1, hidden_dim),
          wr(in_dim, hidden_dim),
          ur(hidden_dim, hidden_dim),
          br(1, hidden_dim),
          wh(in_dim, hidden_dim),
          uh(hidden_dim, hidden_dim),
          bh(1, hidden_dim) {}

    void init(Rng& rng) {
        for (Param* p : {&wz, &wr, &wh}) init_uniform(*p, in, rng);
        for (Param* p : {&uz, &ur, &uh, &bz, &br, &bh}) init_uniform(*p, hidden, rng);
    }

    NamedParams params(const std::string& prefix) {
        return {{prefix + ".wz", &wz}, {prefix + ".uz", &uz}, {prefix + ".bz", &bz},
                {prefix + ".wr", &wr}, {prefix + ".ur", &ur}, {prefix + ".br", &br},
                {prefix + ".wh", &wh}, {prefix + ".uh", &uh}, {prefix + ".bh", &bh}};
    }
};

// z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
// c = tanh(x Wh + (r*h) Uh + bh), h' = z*h + (1-z)*c.
// z saturated at 1 keeps the previous state.
inline Tensor gru_cell(Tape& t, GruCellParams& g, const Tensor& x, const Tensor& h_prev,
                       bool trainable) {
    if (x.cols() != g.in || h_prev.cols() != g.hidden || x.rows() != h_prev.rows())
        throw ShapeError("gru_cell: dimension mismatch");
    Tensor z = t.sigmoid(t.add(affine(t, x, t.bind(g.wz, trainable), t.bind(g.bz, trainable)),
                               t.matmul(h_prev, t.bind(g.uz, trainable))));
    Tensor r = t.sigmoid(t.add(affine(t, x, t.bind(g.wr, trainable), t.bind(g.br, trainable)),
                               t.matmul(h_prev, t.bind(g.ur, trainable))));
    Tensor c = t.tanh_(t.add(affine(t, x, t.bind(g.wh, trainable), t.bind(g.bh, trainable)),
                             t.matmul(t.mul(r, h_prev), t.bind(g.uh, trainable))));
    return t.add(t.mul(z, h_prev), t.mul(t.one_minus(z), c));
}

// ---- RCGAN generator ------------------------------------------------------

struct GeneratorParams {
    std::size_t d = 0, dim_z = 0, hidden = 0;
    Param init_w, init_b;  // X^1 -> initial hidden state of both GRU layers
    GruCellParams gru1, gru2;
    Param out_w, out_b;  // hidden -> next features

    GeneratorParams() = default;
    GeneratorParams(std::size_t feature_dim, std::size_t noise_dim, std::size_t hidden_dim)
        : d(feature_dim),
          dim_z(noise_dim),
          hidden(hidden_dim),
          init_w(feature_dim, 2 * hidden_dim),
          init_b(1, 2 * hidden_dim),
          gru1(noise_dim + 2, hidden_dim),
          gru2(hidden_dim, hidden_dim),
          out_w(hidden_dim, feature_dim),
          out_b(1, feature_dim) {}

    void init(Rng& rng) {
        init_uniform(init_w, d, rng);
        init_uniform(init_b, d, rng);
        gru1.init(rng);
        gru2.init(rng);
        init_uniform(out_w, hidden, rng);
        init_uniform(out_b, hidden, rng);
    }

    NamedParams params() {
        NamedParams out = {{"init_w", &init_w}, {"init_b", &init_b}};
        for (auto& p : gru1.params("gru1")) out.push_back(p);
        for (auto& p : gru2.params("gru2")) out.push_back(p);
        out.push_back({"out_w", &out_w});
        out.push_back({"out_b", &out_b});
        return out;
    }
};

enum class DecisionMode { Soft, Sampled };

struct Rollout {
    std::vector<Tensor> x;       // horizon entries, each [n x d]
    std::vector<Tensor> y;       // horizon entries, each [n x 1]; probs (soft) or {0,1} (sampled)
    std::vector<Tensor> y_prob;  // decision probabilities in both modes
};

// Unrolls the generator: x_1 is given, and for each later step the GRU stack
// consumes [y_{t-1}, s, z_{t-1}] and the output MLP emits x_{t+1}. Decisions
// come from decision_fn at every step. Soft mode is differentiable end to end.
inline Rollout generator_rollout(Tape& t, GeneratorParams& gen, const DecisionFn& decision_fn,
                                 const Tensor& s, const Tensor& x1,
                                 const std::vector<Tensor>& noise, DecisionMode mode, Rng* rng,
                                 bool trainable) {
    const std::size_t horizon = noise.size() + 1;
    if (horizon < 1) throw ValidationError("generator_rollout: horizon must be >= 1");
    if (mode == DecisionMode::Sampled && rng == nullptr)
        throw ValidationError("generator_rollout: sampled mode requires an rng");
    if (x1.cols() != gen.d) throw ShapeError("generator_rollout: x1 feature dim mismatch");
    for (const auto& z : noise)
        if (z.rows() != x1.rows() || z.cols() != gen.dim_z)
            throw ShapeError("generator_rollout: noise shape mismatch");

    const std::size_t n = x1.rows();
    Rollout out;

    auto decide = [&](const Tensor& xt) {
        Tensor p = decision_fn(t, s, xt);
        if (p.rows() != n || p.cols() != 1)
            throw ShapeError("generator_rollout: decision_fn must return [n x 1]");
        out.y_prob.push_back(p);
        if (mode == DecisionMode::Soft) return p;
        std::vector<double> draws(n);
        for (std::size_t i = 0; i < n; ++i)
            draws[i] = static_cast<double>(rng->bernoulli(p.value()[i]));
        return t.constant(n, 1, std::move(draws));
    };

    out.x.push_back(x1);
    out.y.push_back(decide(x1));
    if (horizon == 1) return out;

    Tensor h0 = t.tanh_(affine(t, x1, t.bind(gen.init_w, trainable), t.bind(gen.init_b, trainable)));
    Tensor h1 = t.slice_cols(h0, 0, gen.hidden);
    Tensor h2 = t.slice_cols(h0, gen.hidden, 2 * gen.hidden);

    for (std::size_t step = 0; step + 1 < horizon; ++step) {
        Tensor input = t.concat_cols({out.y.back(), s, noise[step]});
        h1 = gru_cell(t, gen.gru1, input, h1, trainable);
        h2 = gru_cell(t, gen.gru2, h1, h2, trainable);
        Tensor xt = affine(t, h2, t.bind(gen.out_w, trainable), t.bind(gen.out_b, trainable));
        out.x.push_back(xt);
        out.y.push_back(decide(xt));
    }
    return out;
}

// ---- RCGAN discriminator --------------------------------------------------

struct DiscriminatorParams {
    std::size_t d = 0, hidden = 0;
    GruCellParams gru1, gru2;
    Param out_w, out_b;  // hidden -> per-step logit

    DiscriminatorParams() = default;
    DiscriminatorParams(std::size_t feature_dim, std::size_t hidden_dim)
        : d(feature_dim),
          hidden(hidden_dim),
          gru1(feature_dim, hidden_dim),
          gru2(hidden_dim, hidden_dim),
          out_w(hidden_dim, 1),
          out_b(1, 1) {}

    // Final layer stays zero so the untrained output is exactly 0.5.
    void init(Rng& rng) {
        gru1.init(rng);
        gru2.init(rng);
    }

    NamedParams params() {
        NamedParams out;
        for (auto& p : gru1.params("gru1")) out.push_back(p);
        for (auto& p : gru2.params("gru2")) out.push_back(p);
        out.push_back({"out_w", &out_w});
        out.push_back({"out_b", &out_b});
        return out;
    }
};

// One probability per time step, each [n x 1] in (0,1).
inline std::vector<Tensor> discriminator_forward(Tape& t, DiscriminatorParams& disc,
                                                 const std::vector<Tensor>& series,
                                                 bool trainable) {
    if (series.empty()) throw ShapeError("discriminator_forward: empty series");
    const std::size_t n = series[0].rows();
    Tensor h1 = t.full(n, disc.hidden, 0.0);
    Tensor h2 = t.full(n, disc.hidden, 0.0);
    std::vector<Tensor> probs;
    for (const auto& xt : series) {
        if (xt.cols() != disc.d || xt.rows() != n)
            throw ShapeError("discriminator_forward: series shape mismatch");
        h1 = gru_cell(t, disc.gru1, xt, h1, trainable);
        h2 = gru_cell(t, disc.gru2, h1, h2, trainable);
        probs.push_back(
            t.sigmoid(affine(t, h2, t.bind(disc.out_w, trainable), t.bind(disc.out_b, trainable))));
    }
    return probs;
}

}  // namespace fairlong
