#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fairlong/models.hpp"
#include "fairlong/rng.hpp"
#include "fairlong/tensor.hpp"

// Distribution distances and fairness gaps. The exact sorted-sample W1 is
// the oracle; the entropic Sinkhorn divergence is the deployed, differentiable
// approximation. Gradients through Sinkhorn flow via the converged plan.

namespace fairlong {

// ---- exact 1-D Wasserstein oracle -----------------------------------------

inline double wasserstein1_exact_1d(std::vector<double> a, std::vector<double> b) {
    if (a.size() != b.size() || a.empty())
        throw ShapeError("wasserstein1_exact_1d: equal nonzero lengths required");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

// ---- Sinkhorn --------------------------------------------------------------

struct SinkhornConfig {
    double reg = 0.0;        // absolute entropic regularization; <= 0 -> reg_scale * median cost
    double reg_scale = 0.05;
    std::size_t max_iter = 500;
    double tol = 1e-6;       // L1 marginal violation stop
    bool debias = true;
};

struct WeightedSample {
    std::size_t m = 0, d = 0;
    std::vector<double> points;   // m x d row-major
    std::vector<double> weights;  // sums to 1; empty -> uniform

    static WeightedSample uniform(std::size_t m_, std::size_t d_, std::vector<double> pts) {
        WeightedSample w;
        w.m = m_;
        w.d = d_;
        w.points = std::move(pts);
        w.weights.assign(m_, 1.0 / static_cast<double>(m_));
        if (w.points.size() != m_ * d_) throw ShapeError("WeightedSample: point count mismatch");
        return w;
    }

    void validate() const {
        if (m < 1) throw ShapeError("WeightedSample: empty");
        double s = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw ValidationError("WeightedSample: negative weight");
            s += w;
        }
        if (std::fabs(s - 1.0) > 1e-9) throw ValidationError("WeightedSample: weights must sum to 1");
    }
};

namespace detail {

inline std::vector<double> pairwise_dist(const double* a, std::size_t m, const double* b,
                                         std::size_t k, std::size_t d) {
    std::vector<double> c(m * k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t q = 0; q < d; ++q) {
                const double diff = a[i * d + q] - b[j * d + q];
                s += diff * diff;
            }
            c[i * k + j] = std::sqrt(s);
        }
    return c;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    return v[mid];
}

struct EntropicOt {
    double value = 0.0;          // dual objective <f,a> + <g,b>
    bool converged = false;
    std::vector<double> plan;    // m x k
};

// Log-domain Sinkhorn for OT_eps(a, b) = min <P,C> + eps KL(P | a (x) b).
// At convergence the dual value equals the regularized cost and the plan
// is the exact gradient of the value w.r.t. the cost matrix.
inline EntropicOt entropic_ot(const std::vector<double>& cost, std::size_t m, std::size_t k,
                              const std::vector<double>& a, const std::vector<double>& b,
                              double eps, std::size_t max_iter, double tol) {
    std::vector<double> f(m, 0.0), g(k, 0.0);
    std::vector<double> loga(m), logb(k);
    for (std::size_t i = 0; i < m; ++i) loga[i] = std::log(std::max(a[i], 1e-300));
    for (std::size_t j = 0; j < k; ++j) logb[j] = std::log(std::max(b[j], 1e-300));

    auto lse_row = [&](std::size_t i) {  // log sum_j exp((g_j - C_ij)/eps + log b_j)
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j)
            mx = std::max(mx, (g[j] - cost[i * k + j]) / eps + logb[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            s += std::exp((g[j] - cost[i * k + j]) / eps + logb[j] - mx);
        return mx + std::log(s);
    };
    auto lse_col = [&](std::size_t j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m; ++i)
            mx = std::max(mx, (f[i] - cost[i * k + j]) / eps + loga[i]);
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            s += std::exp((f[i] - cost[i * k + j]) / eps + loga[i] - mx);
        return mx + std::log(s);
    };

    EntropicOt out;
    for (std::size_t it = 0; it < max_iter; ++it) {
        for (std::size_t i = 0; i < m; ++i) f[i] = -eps * lse_row(i);
        for (std::size_t j = 0; j < k; ++j) g[j] = -eps * lse_col(j);
        // column update makes column marginals exact; check rows
        double viol = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                row += std::exp((f[i] + g[j] - cost[i * k + j]) / eps + loga[i] + logb[j]);
            viol += std::fabs(row - a[i]);
        }
        if (viol < tol) {
            out.converged = true;
            break;
        }
    }

    out.plan.resize(m * k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j)
            out.plan[i * k + j] =
                std::exp((f[i] + g[j] - cost[i * k + j]) / eps + loga[i] + logb[j]);
    for (std::size_t i = 0; i < m; ++i) out.value += f[i] * a[i];
    for (std::size_t j = 0; j < k; ++j) out.value += g[j] * b[j];
    return out;
}

// Accumulate d(OT)/d(points) through the plan: sum_j P_ij * (x_i - y_j)/C_ij.
inline void accumulate_plan_grad(const std::vector<double>& plan, const std::vector<double>& cost,
                                 const double* a_pts, std::size_t m, const double* b_pts,
                                 std::size_t k, std::size_t d, double scale, double* grad_a,
                                 double* grad_b) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double c = cost[i * k + j];
            if (c < 1e-12) continue;
            const double w = scale * plan[i * k + j] / c;
            if (w == 0.0) continue;
            for (std::size_t q = 0; q < d; ++q) {
                const double diff = a_pts[i * d + q] - b_pts[j * d + q];
                if (grad_a) grad_a[i * d + q] += w * diff;
                if (grad_b) grad_b[j * d + q] -= w * diff;
            }
        }
}

}  // namespace detail

struct SinkhornValue {
    double value = 0.0;
    bool converged = true;
    double reg_used = 0.0;
};

// Debiased divergence on raw point clouds (no gradients). The residual
// entropic blur is roughly linear in the regularizer, so the value is
// extrapolated from solves at eps/2 and eps: S = 2 S(eps/2) - S(eps).
inline SinkhornValue sinkhorn_divergence_value(const WeightedSample& A, const WeightedSample& B,
                                               const SinkhornConfig& cfg,
                                               std::vector<double>* grad_a = nullptr,
                                               std::vector<double>* grad_b = nullptr) {
    A.validate();
    B.validate();
    if (A.d != B.d) throw ShapeError("sinkhorn_divergence: feature dims differ");
    if (cfg.max_iter < 1 || cfg.tol <= 0.0)
        throw ValidationError("sinkhorn_divergence: bad config");

    const auto cost_ab = detail::pairwise_dist(A.points.data(), A.m, B.points.data(), B.m, A.d);
    double eps = cfg.reg;
    if (eps <= 0.0) eps = std::max(cfg.reg_scale * detail::median_of(cost_ab), 1e-9);

    SinkhornValue out;
    out.reg_used = eps;
    if (grad_a) grad_a->assign(A.m * A.d, 0.0);
    if (grad_b) grad_b->assign(B.m * B.d, 0.0);

    // one debiased solve at a given regularizer, accumulated with weight w
    auto solve_at = [&](double e, double w) {
        auto ab = detail::entropic_ot(cost_ab, A.m, B.m, A.weights, B.weights, e, cfg.max_iter,
                                      cfg.tol);
        out.value += w * ab.value;
        out.converged = out.converged && ab.converged;
        if (grad_a || grad_b)
            detail::accumulate_plan_grad(ab.plan, cost_ab, A.points.data(), A.m, B.points.data(),
                                         B.m, A.d, w, grad_a ? grad_a->data() : nullptr,
                                         grad_b ? grad_b->data() : nullptr);
        if (!cfg.debias) return;
        const auto cost_aa =
            detail::pairwise_dist(A.points.data(), A.m, A.points.data(), A.m, A.d);
        const auto cost_bb =
            detail::pairwise_dist(B.points.data(), B.m, B.points.data(), B.m, B.d);
        auto aa = detail::entropic_ot(cost_aa, A.m, A.m, A.weights, A.weights, e, cfg.max_iter,
                                      cfg.tol);
        auto bb = detail::entropic_ot(cost_bb, B.m, B.m, B.weights, B.weights, e, cfg.max_iter,
                                      cfg.tol);
        out.value -= w * 0.5 * (aa.value + bb.value);
        out.converged = out.converged && aa.converged && bb.converged;
        if (grad_a)
            // both marginals are A, so the plan gradient counts twice
            detail::accumulate_plan_grad(aa.plan, cost_aa, A.points.data(), A.m, A.points.data(),
                                         A.m, A.d, -w, grad_a->data(), nullptr);
        if (grad_b)
            detail::accumulate_plan_grad(bb.plan, cost_bb, B.points.data(), B.m, B.points.data(),
                                         B.m, B.d, -w, grad_b->data(), nullptr);
    };
    solve_at(0.5 * eps, 2.0);
    solve_at(eps, -1.0);
    return out;
}

// Differentiable Sinkhorn divergence between two point-cloud tensors
// (uniform weights). Backward treats the converged plans as constant.
inline Tensor sinkhorn_divergence(Tape& t, const Tensor& a_points, const Tensor& b_points,
                                  const SinkhornConfig& cfg, bool* converged = nullptr) {
    WeightedSample A = WeightedSample::uniform(a_points.rows(), a_points.cols(), a_points.value());
    WeightedSample B = WeightedSample::uniform(b_points.rows(), b_points.cols(), b_points.value());
    std::vector<double> ga, gb;
    SinkhornValue v = sinkhorn_divergence_value(A, B, cfg, &ga, &gb);
    if (converged) *converged = v.converged;
    auto an = a_points.node(), bn = b_points.node();
    return t.custom(1, 1, {v.value}, {a_points, b_points},
                    [an, bn, ga = std::move(ga), gb = std::move(gb)](const Node& o) {
                        const double go = o.grad[0];
                        if (an->requires_grad)
                            for (std::size_t i = 0; i < ga.size(); ++i) an->grad[i] += go * ga[i];
                        if (bn->requires_grad)
                            for (std::size_t i = 0; i < gb.size(); ++i) bn->grad[i] += go * gb[i];
                    },
                    "sinkhorn");
}

// ---- MMD -------------------------------------------------------------------

// Biased V-statistic with Gaussian kernel exp(-||x-y||^2 / (2 bw^2)).
// bandwidth <= 0 selects the median pairwise distance of the pooled sample
// (held constant, not differentiated).
inline double mmd_bandwidth_median(const std::vector<double>& a, std::size_t m,
                                   const std::vector<double>& b, std::size_t k, std::size_t d) {
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::size_t n = m + k;
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t q = 0; q < d; ++q) {
                const double diff = pooled[i * d + q] - pooled[j * d + q];
                s += diff * diff;
            }
            dists.push_back(std::sqrt(s));
        }
    const double med = detail::median_of(std::move(dists));
    return med > 0.0 ? med : 1.0;
}

inline double mmd_rbf_value(const std::vector<double>& a, std::size_t m,
                            const std::vector<double>& b, std::size_t k, std::size_t d,
                            double bandwidth, std::vector<double>* grad_a = nullptr,
                            std::vector<double>* grad_b = nullptr) {
    if (m == 0 || k == 0) throw ShapeError("mmd_rbf: empty input");
    const double bw = bandwidth > 0.0 ? bandwidth : mmd_bandwidth_median(a, m, b, k, d);
    const double inv2s2 = 1.0 / (2.0 * bw * bw);
    const double invs2 = 1.0 / (bw * bw);
    if (grad_a) grad_a->assign(m * d, 0.0);
    if (grad_b) grad_b->assign(k * d, 0.0);

    auto kernel_sum = [&](const std::vector<double>& x, std::size_t nx,
                          const std::vector<double>& y, std::size_t ny, double coeff,
                          std::vector<double>* gx, std::vector<double>* gy) {
        double total = 0.0;
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < ny; ++j) {
                double s = 0.0;
                for (std::size_t q = 0; q < d; ++q) {
                    const double diff = x[i * d + q] - y[j * d + q];
                    s += diff * diff;
                }
                const double kv = std::exp(-s * inv2s2);
                total += kv;
                if (gx || gy) {
                    const double w = coeff * kv * invs2 / (static_cast<double>(nx) * ny);
                    for (std::size_t q = 0; q < d; ++q) {
                        const double diff = x[i * d + q] - y[j * d + q];
                        if (gx) (*gx)[i * d + q] -= w * diff;
                        if (gy) (*gy)[j * d + q] += w * diff;
                    }
                }
            }
        return total / (static_cast<double>(nx) * ny);
    };

    const double kaa = kernel_sum(a, m, a, m, 1.0, grad_a, grad_a);
    const double kbb = kernel_sum(b, k, b, k, 1.0, grad_b, grad_b);
    const double kab = kernel_sum(a, m, b, k, -2.0, grad_a, grad_b);
    return std::max(kaa + kbb - 2.0 * kab, 0.0);
}

inline Tensor mmd_rbf(Tape& t, const Tensor& a, const Tensor& b, double bandwidth = 0.0) {
    if (a.cols() != b.cols()) throw ShapeError("mmd_rbf: feature dims differ");
    std::vector<double> ga, gb;
    const double v =
        mmd_rbf_value(a.value(), a.rows(), b.value(), b.rows(), a.cols(), bandwidth, &ga, &gb);
    auto an = a.node(), bn = b.node();
    return t.custom(1, 1, {v}, {a, b},
                    [an, bn, ga = std::move(ga), gb = std::move(gb)](const Node& o) {
                        const double go = o.grad[0];
                        if (an->requires_grad)
                            for (std::size_t i = 0; i < ga.size(); ++i) an->grad[i] += go * ga[i];
                        if (bn->requires_grad)
                            for (std::size_t i = 0; i < gb.size(); ++i) bn->grad[i] += go * gb[i];
                    },
                    "mmd_rbf");
}

// ---- group fairness gaps ---------------------------------------------------

using ScalarDecisionFn = std::function<double(int s, const std::vector<double>& x)>;

inline double demographic_parity(const ScalarDecisionFn& f, const std::vector<int>& s,
                                 const std::vector<std::vector<double>>& xs) {
    if (s.size() != xs.size()) throw ShapeError("demographic_parity: size mismatch");
    double sum_pos = 0.0, sum_neg = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double v = f(s[i], xs[i]);
        if (s[i] == 1) {
            sum_pos += v;
            ++n_pos;
        } else {
            sum_neg += v;
            ++n_neg;
        }
    }
    if (n_pos == 0 || n_neg == 0)
        throw ValidationError("demographic_parity: a sensitive group is empty");
    return std::fabs(sum_pos / n_pos - sum_neg / n_neg);
}

inline double equal_opportunity(const ScalarDecisionFn& f, const std::vector<int>& s,
                                const std::vector<std::vector<double>>& xs,
                                const std::vector<int>& y) {
    if (s.size() != xs.size() || s.size() != y.size())
        throw ShapeError("equal_opportunity: size mismatch");
    double sum_pos = 0.0, sum_neg = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        const double v = f(s[i], xs[i]);
        if (s[i] == 1) {
            sum_pos += v;
            ++n_pos;
        } else {
            sum_neg += v;
            ++n_neg;
        }
    }
    if (n_pos == 0) throw ValidationError("equal_opportunity: cell (Y=1, S=1) is empty");
    if (n_neg == 0) throw ValidationError("equal_opportunity: cell (Y=1, S=0) is empty");
    return std::fabs(sum_pos / n_pos - sum_neg / n_neg);
}

// Direct discrimination over the disadvantaged group: the decision gap from
// flipping S to s+ while holding the (interventional) features fixed.
inline double direct_discrimination(const ScalarDecisionFn& f,
                                    const std::vector<std::vector<double>>& xs_neg_group) {
    if (xs_neg_group.empty()) throw ValidationError("direct_discrimination: empty group");
    double flipped = 0.0, kept = 0.0;
    for (const auto& x : xs_neg_group) {
        flipped += f(1, x);
        kept += f(0, x);
    }
    const double n = static_cast<double>(xs_neg_group.size());
    return std::fabs(flipped / n - kept / n);
}

// Differentiable variant used inside the training objective: decisions are
// evaluated with S forced to 1 and to 0 on the s- rows of x.
inline Tensor direct_discrimination_t(Tape& t, const DecisionFn& f, const Tensor& x_neg_rows) {
    const std::size_t n = x_neg_rows.rows();
    if (n == 0) throw ValidationError("direct_discrimination: empty group");
    Tensor s_pos = t.full(n, 1, 1.0);
    Tensor s_neg = t.full(n, 1, 0.0);
    Tensor gap = t.sub(t.mean(f(t, s_pos, x_neg_rows)), t.mean(f(t, s_neg, x_neg_rows)));
    return t.abs_(gap);
}

// J1: Sinkhorn divergence between the group feature clouds at the target step.
// xs is the per-step sequence of an interventional rollout.
inline Tensor long_term_unfairness(Tape& t, const std::vector<Tensor>& xs,
                                   const std::vector<int>& s, std::size_t target_T,
                                   const SinkhornConfig& cfg, bool* converged = nullptr) {
    if (target_T < 1 || target_T > xs.size())
        throw ValidationError("long_term_unfairness: target step outside rollout horizon");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < s.size(); ++i) (s[i] == 1 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty())
        throw ValidationError("long_term_unfairness: a sensitive group is empty");
    const Tensor& xT = xs[target_T - 1];
    return sinkhorn_divergence(t, t.gather_rows(xT, pos), t.gather_rows(xT, neg), cfg, converged);
}

// ---- Proposition 1 empirical bound check ----------------------------------

// Sensitive-attribute-unconscious sigmoid-of-affine model on 1-D features.
struct SigmoidAffine {
    double w = 0.0;
    double b = 0.0;
    double operator()(double x) const {
        const double z = w * x + b;
        return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    double lipschitz() const { return std::fabs(w) / 4.0; }
};

struct Prop1Result {
    double dp = 0.0, dp_bound = 0.0;
    double eo = 0.0, eo_bound = 0.0;
    double distance = 0.0;
    double base_rate = 0.0;
    bool holds = false;
};

// Empirical check of the DP / EO bounds: labels are drawn from g, the
// distance is the exact 1-D W1, and the tolerance is 1e-6 plus Monte-Carlo
// slack (3 standard errors of the group-conditional means).
inline Prop1Result verify_proposition1(const SigmoidAffine& f, const SigmoidAffine& g,
                                       const std::vector<double>& group_pos,
                                       const std::vector<double>& group_neg, Rng& rng) {
    if (group_pos.empty() || group_neg.empty())
        throw ValidationError("verify_proposition1: empty group");

    Prop1Result r;
    r.distance = wasserstein1_exact_1d(group_pos, group_neg);

    auto group_mean_f = [&](const std::vector<double>& xs) {
        double s = 0.0;
        for (double x : xs) s += f(x);
        return s / static_cast<double>(xs.size());
    };
    r.dp = std::fabs(group_mean_f(group_pos) - group_mean_f(group_neg));
    r.dp_bound = f.lipschitz() * r.distance;

    // sample labels from g, then condition on Y=1
    struct Cell {
        double sum = 0.0, sumsq = 0.0;
        std::size_t n = 0;
    };
    Cell pos, neg;
    std::size_t n_y1 = 0, n_total = 0;
    auto visit = [&](const std::vector<double>& xs, Cell& cell) {
        for (double x : xs) {
            ++n_total;
            if (rng.bernoulli(g(x))) {
                ++n_y1;
                const double v = f(x);
                cell.sum += v;
                cell.sumsq += v * v;
                ++cell.n;
            }
        }
    };
    visit(group_pos, pos);
    visit(group_neg, neg);
    if (pos.n == 0 || neg.n == 0)
        throw ValidationError("verify_proposition1: a (Y=1, group) cell is empty");

    const double mean_pos = pos.sum / pos.n;
    const double mean_neg = neg.sum / neg.n;
    r.eo = std::fabs(mean_pos - mean_neg);
    r.base_rate = static_cast<double>(n_y1) / static_cast<double>(n_total);
    r.eo_bound = (f.lipschitz() + g.lipschitz()) / r.base_rate * r.distance;

    auto se = [](const Cell& c, double mean) {
        const double var = std::max(c.sumsq / c.n - mean * mean, 0.0);
        return std::sqrt(var / static_cast<double>(c.n));
    };
    const double mc_slack =
        3.0 * std::sqrt(se(pos, mean_pos) * se(pos, mean_pos) + se(neg, mean_neg) * se(neg, mean_neg));

    r.holds = (r.dp <= r.dp_bound + 1e-6) && (r.eo <= r.eo_bound + mc_slack + 1e-6);
    return r;
}

}  // namespace fairlong
