#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fairlong/models.hpp"
#include "fairlong/rng.hpp"
#include "fairlong/tensor.hpp"

// Ground-truth temporal structural causal model: initial-cohort synthesis,
// Bernoulli decision sampling from the frozen true classifier, and the
// gradient-based feature feedback X^{t+1} = X^t - eps*(2y-1)*dL/dX with
// L the cross-entropy toward label 1.

namespace fairlong {

struct Cohort {
    std::size_t n = 0, d = 0;
    std::vector<int> s;          // n, in {0,1}
    std::vector<double> x1;      // n x d row-major
    std::vector<int> y1;         // optional initial labels; empty or size n

    void validate() const {
        if (s.size() != n || x1.size() != n * d)
            throw ShapeError("Cohort: inconsistent shapes");
        if (!y1.empty() && y1.size() != n) throw ShapeError("Cohort: y1 size mismatch");
        for (int v : s)
            if (v != 0 && v != 1) throw ValidationError("Cohort: S must be binary");
        for (int v : y1)
            if (v != 0 && v != 1) throw ValidationError("Cohort: Y must be binary");
    }
};

struct TimeSeriesDataset {
    std::size_t n = 0, d = 0, horizon = 0;
    std::vector<int> s;       // n
    std::vector<double> x;    // n x horizon x d
    std::vector<int> y;       // n x horizon

    double& xat(std::size_t i, std::size_t t, std::size_t q) {
        return x[(i * horizon + t) * d + q];
    }
    double xat(std::size_t i, std::size_t t, std::size_t q) const {
        return x[(i * horizon + t) * d + q];
    }
    int& yat(std::size_t i, std::size_t t) { return y[i * horizon + t]; }
    int yat(std::size_t i, std::size_t t) const { return y[i * horizon + t]; }

    // features of all individuals at one step, as an n x d matrix
    std::vector<double> step_features(std::size_t t) const {
        std::vector<double> out(n * d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < d; ++q) out[i * d + q] = xat(i, t, q);
        return out;
    }

    void validate() const {
        if (s.size() != n || x.size() != n * horizon * d || y.size() != n * horizon)
            throw ShapeError("TimeSeriesDataset: inconsistent shapes");
        for (double v : x)
            if (!std::isfinite(v)) throw NumericError("TimeSeriesDataset: non-finite feature");
        for (int v : y)
            if (v != 0 && v != 1) throw ValidationError("TimeSeriesDataset: Y must be binary");
    }
};

struct GroundTruthModel {
    MlpClassifierParams classifier;  // h_theta*, frozen after construction
    double epsilon = 0.05;
};

// Two-component spherical Gaussian mixture with means +-(separation/2)*u for
// a fixed unit direction u; S is the mixture component, Y^1 a seeded random
// linear labeler thresholded at its median score (balanced labels).
inline Cohort generate_initial_cohort(std::size_t n, std::size_t d, double cluster_separation,
                                      std::uint64_t seed) {
    if (n < 2) throw ValidationError("generate_initial_cohort: n must be >= 2");
    if (d < 1) throw ValidationError("generate_initial_cohort: d must be >= 1");
    Rng rng(seed);

    std::vector<double> u(d);
    double norm = 0.0;
    for (double& v : u) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (double& v : u) v /= norm;

    Cohort c;
    c.n = n;
    c.d = d;
    c.s.resize(n);
    c.x1.resize(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const int group = rng.bernoulli(0.5);
        c.s[i] = group;
        const double sign = group == 1 ? 1.0 : -1.0;
        for (std::size_t q = 0; q < d; ++q)
            c.x1[i * d + q] = sign * 0.5 * cluster_separation * u[q] + rng.normal();
    }

    // linear labeler, thresholded at its median score for balanced labels
    std::vector<double> w(d);
    for (double& v : w) v = rng.normal();
    std::vector<double> score(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < d; ++q) score[i] += w[q] * c.x1[i * d + q];
    std::vector<double> sorted = score;
    std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
    const double thresh = sorted[n / 2];
    c.y1.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.y1[i] = score[i] > thresh ? 1 : 0;
    return c;
}

// y_i ~ Bernoulli(h_theta*(s_i, x_i)) for a whole batch
inline std::vector<int> sample_decisions(MlpClassifierParams& classifier,
                                         const std::vector<int>& s, const std::vector<double>& x,
                                         std::size_t n, std::size_t d, Rng& rng) {
    Tape t;
    std::vector<double> s_col(n);
    for (std::size_t i = 0; i < n; ++i) s_col[i] = static_cast<double>(s[i]);
    Tensor probs = mlp_forward(t, classifier, t.constant(n, 1, std::move(s_col)),
                               t.constant(n, d, x), false);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = rng.bernoulli(probs.value()[i]);
    return y;
}

inline int sample_decision(GroundTruthModel& gt, int s, const std::vector<double>& x, Rng& rng) {
    return sample_decisions(gt.classifier, {s}, x, 1, x.size(), rng)[0];
}

// X^{t+1} = X^t - eps*(2y-1)*d(-log h(s,x))/dx, batched; the gradient comes
// from the autodiff substrate.
inline std::vector<double> step_features(GroundTruthModel& gt, const std::vector<int>& s,
                                         const std::vector<double>& x, const std::vector<int>& y,
                                         std::size_t n, std::size_t d) {
    Tape t;
    std::vector<double> s_col(n);
    for (std::size_t i = 0; i < n; ++i) s_col[i] = static_cast<double>(s[i]);
    Tensor xt = t.leaf(n, d, x, true);
    Tensor p = mlp_forward(t, gt.classifier, t.constant(n, 1, std::move(s_col)), xt, false);
    // sum of -log p over the batch: per-row gradient of the per-row loss
    Tensor loss = t.sum(t.scale(t.log_(t.max_const(p, 1e-300)), -1.0));
    t.backward(loss);

    std::vector<double> out(n * d);
    const auto& g = xt.grad();
    for (std::size_t i = 0; i < n; ++i) {
        const double factor = gt.epsilon * (2.0 * y[i] - 1.0);
        for (std::size_t q = 0; q < d; ++q) out[i * d + q] = x[i * d + q] - factor * g[i * d + q];
    }
    for (double v : out)
        if (!std::isfinite(v)) throw NumericError("step_features: non-finite feature update");
    return out;
}

inline std::vector<double> step_features_single(GroundTruthModel& gt, int s,
                                                const std::vector<double>& x, int y) {
    return step_features(gt, std::vector<int>{s}, x, std::vector<int>{y}, 1, x.size());
}

// Observational rollout (policy = nullptr, decisions from h_theta*) or
// interventional rollout under a supplied policy; dynamics always true.
inline TimeSeriesDataset roll_out_truth(GroundTruthModel& gt, const Cohort& cohort,
                                        MlpClassifierParams* policy, std::size_t horizon,
                                        Rng& rng) {
    cohort.validate();
    if (horizon < 1) throw ValidationError("roll_out_truth: horizon must be >= 1");

    TimeSeriesDataset ds;
    ds.n = cohort.n;
    ds.d = cohort.d;
    ds.horizon = horizon;
    ds.s = cohort.s;
    ds.x.resize(ds.n * horizon * ds.d);
    ds.y.resize(ds.n * horizon);

    std::vector<double> xt = cohort.x1;
    for (std::size_t t = 0; t < horizon; ++t) {
        MlpClassifierParams& decider = policy ? *policy : gt.classifier;
        std::vector<int> yt = sample_decisions(decider, ds.s, xt, ds.n, ds.d, rng);
        for (std::size_t i = 0; i < ds.n; ++i) {
            ds.yat(i, t) = yt[i];
            for (std::size_t q = 0; q < ds.d; ++q) ds.xat(i, t, q) = xt[i * ds.d + q];
        }
        if (t + 1 < horizon) xt = step_features(gt, ds.s, xt, yt, ds.n, ds.d);
    }
    return ds;
}

}  // namespace fairlong
