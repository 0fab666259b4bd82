#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairlong/metrics.hpp"
#include "fairlong/models.hpp"
#include "fairlong/rng.hpp"
#include "fairlong/simulator.hpp"
#include "fairlong/tensor.hpp"

// The three learning phases: cross-entropy classifier fitting, adversarial
// RCGAN training with an MMD penalty, and repeated-gradient-descent
// optimization of the combined long-term/local/utility objective, plus the
// DP/EO penalty baselines.

namespace fairlong {

struct TrainConfig {
    double lambda_long = 128.4;   // weight on J1 (long-term)
    double lambda_util = 1.0;     // weight on J2 (utility)
    double lambda_local = 2.1;    // weight on J3 (direct discrimination)
    double gamma_mmd = 100.0;
    double learning_rate = 0.001;
    std::size_t batch_size = 512;
    std::size_t epochs = 50;
    std::size_t rcgan_rounds = 300;
    std::size_t rgd_rounds = 40;
    std::size_t inner_steps = 1;  // Adam steps per RGD round
    std::size_t target_T = 10;
    std::size_t deploy_start = 1;  // first step where theta replaces the observed policy
    std::uint64_t seed = 0;
    double split_train = 0.7, split_val = 0.1, split_test = 0.2;

    void validate() const {
        if (lambda_long < 0 || lambda_util < 0 || lambda_local < 0 || gamma_mmd < 0)
            throw ValidationError("TrainConfig: weights must be nonnegative");
        if (deploy_start < 1) throw ValidationError("TrainConfig: deploy_start must be >= 1");
        if (learning_rate <= 0) throw ValidationError("TrainConfig: learning_rate must be > 0");
        if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
        if (split_train <= 0 || split_val <= 0 || split_test <= 0 ||
            std::fabs(split_train + split_val + split_test - 1.0) > 1e-9)
            throw ValidationError("TrainConfig: split ratios must be positive and sum to 1");
    }
};

// JSON-lines training log: one record per epoch/round.
struct TrainLogger {
    std::ostream* os = nullptr;

    void record(const std::string& phase, std::size_t round, double loss, double j1, double j2,
                double j3_mean, std::uint64_t seed) const {
        if (!os) return;
        nlohmann::json j{{"phase", phase}, {"round", round},   {"loss", loss}, {"j1", j1},
                         {"j2", j2},       {"j3_mean", j3_mean}, {"seed", seed}};
        (*os) << j.dump() << "\n";
    }
};

// ---- Adam ------------------------------------------------------------------

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> m, v;

    explicit AdamState(const NamedParams& params) {
        for (const auto& [name, p] : params) {
            m.emplace_back(p->size(), 0.0);
            v.emplace_back(p->size(), 0.0);
        }
    }
};

inline void adam_step(AdamState& st, const NamedParams& params,
                      const std::vector<std::vector<double>>& grads, double lr) {
    if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count mismatch");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k].second;
        const auto& g = grads[k];
        if (g.size() != p.size()) throw ShapeError("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            st.m[k][i] = st.beta1 * st.m[k][i] + (1.0 - st.beta1) * g[i];
            st.v[k][i] = st.beta2 * st.v[k][i] + (1.0 - st.beta2) * g[i] * g[i];
            const double mhat = st.m[k][i] / bc1;
            const double vhat = st.v[k][i] / bc2;
            p.value[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

inline std::vector<std::vector<double>> collect_grads(Tape& t, const NamedParams& params) {
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (const auto& [name, p] : params)
        grads.push_back(t.is_bound(*p) ? t.grad_of(*p) : std::vector<double>(p->size(), 0.0));
    return grads;
}

// ---- dataset split ---------------------------------------------------------

inline std::vector<std::size_t> subset_rounded(std::size_t n, double r1, double r2) {
    // sizes by rounding, remainder absorbed by the first split
    const std::size_t n2 = static_cast<std::size_t>(std::llround(n * r2));
    const std::size_t n1 = static_cast<std::size_t>(std::llround(n * r1));
    return {n - n1 - n2, n1, n2};
}

inline TimeSeriesDataset take_individuals(const TimeSeriesDataset& ds,
                                          const std::vector<std::size_t>& idx) {
    TimeSeriesDataset out;
    out.n = idx.size();
    out.d = ds.d;
    out.horizon = ds.horizon;
    out.s.resize(out.n);
    out.x.resize(out.n * out.horizon * out.d);
    out.y.resize(out.n * out.horizon);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        out.s[r] = ds.s[idx[r]];
        for (std::size_t t = 0; t < ds.horizon; ++t) {
            out.yat(r, t) = ds.yat(idx[r], t);
            for (std::size_t q = 0; q < ds.d; ++q) out.xat(r, t, q) = ds.xat(idx[r], t, q);
        }
    }
    return out;
}

struct DatasetSplit {
    TimeSeriesDataset train, val, test;
};

// Individual-level disjoint partition; whole trajectories move together.
inline DatasetSplit split_dataset(const TimeSeriesDataset& ds, double r_train, double r_val,
                                  double r_test, std::uint64_t seed) {
    if (r_train <= 0 || r_val <= 0 || r_test <= 0 ||
        std::fabs(r_train + r_val + r_test - 1.0) > 1e-9)
        throw ValidationError("split_dataset: ratios must be positive and sum to 1");
    std::vector<std::size_t> order(ds.n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::derive(seed, "split"));
    for (std::size_t i = ds.n; i > 1; --i)
        std::swap(order[i - 1], order[rng.next_u64() % i]);

    const auto sizes = subset_rounded(ds.n, r_val, r_test);
    if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0)
        throw ValidationError("split_dataset: a split would be empty");
    DatasetSplit out;
    auto cut = [&](std::size_t begin, std::size_t count) {
        return take_individuals(
            ds, std::vector<std::size_t>(order.begin() + begin, order.begin() + begin + count));
    };
    out.train = cut(0, sizes[0]);
    out.val = cut(sizes[0], sizes[1]);
    out.test = cut(sizes[0] + sizes[1], sizes[2]);
    return out;
}

// ---- classifier training (Phase 1 + baselines) ----------------------------

namespace detail {

inline Tensor s_column(Tape& t, const std::vector<int>& s, const std::vector<std::size_t>& idx) {
    std::vector<double> col(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) col[r] = static_cast<double>(s[idx[r]]);
    return t.constant(idx.size(), 1, std::move(col));
}

inline Tensor x_step(Tape& t, const TimeSeriesDataset& ds, std::size_t step,
                     const std::vector<std::size_t>& idx) {
    std::vector<double> x(idx.size() * ds.d);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t q = 0; q < ds.d; ++q) x[r * ds.d + q] = ds.xat(idx[r], step, q);
    return t.constant(idx.size(), ds.d, std::move(x));
}

inline Tensor y_step(Tape& t, const TimeSeriesDataset& ds, std::size_t step,
                     const std::vector<std::size_t>& idx) {
    std::vector<double> y(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) y[r] = static_cast<double>(ds.yat(idx[r], step));
    return t.constant(idx.size(), 1, std::move(y));
}

// -mean(y log p + (1-y) log(1-p)); targets may be soft
inline Tensor bce(Tape& t, const Tensor& p, const Tensor& target) {
    Tensor logp = t.log_(t.max_const(p, 1e-12));
    Tensor log1p = t.log_(t.max_const(t.one_minus(p), 1e-12));
    Tensor per = t.add(t.mul(target, logp), t.mul(t.one_minus(target), log1p));
    return t.scale(t.mean(per), -1.0);
}

}  // namespace detail

enum class BaselineKind { Plain, Dp, Eo };

struct ClassifierTrainResult {
    MlpClassifierParams model;
    std::vector<double> epoch_losses;
    std::size_t penalty_skips = 0;  // batches lacking a group / (Y=1,group) cell
};

// Shared mini-batch loop. Plain with zero penalty IS Phase-1 training; the
// DP/EO baselines add a per-batch soft gap penalty.
inline ClassifierTrainResult train_classifier(const TimeSeriesDataset& ds, BaselineKind kind,
                                              double penalty_weight, const TrainConfig& cfg,
                                              std::size_t h1 = 32, std::size_t h2 = 64,
                                              const TrainLogger& log = {},
                                              const std::string& phase_name = "phase1") {
    cfg.validate();
    ds.validate();
    if (ds.n == 0) throw ValidationError("train_classifier: empty dataset");

    ClassifierTrainResult out;
    out.model = MlpClassifierParams(ds.d, h1, h2);
    Rng init_rng(Rng::derive(cfg.seed, "clf-init"));
    out.model.init(init_rng);

    auto named = out.model.params();
    AdamState adam(named);
    Rng order_rng(Rng::derive(cfg.seed, "clf-batch"));

    std::vector<std::size_t> order(ds.n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = ds.n; i > 1; --i)
            std::swap(order[i - 1], order[order_rng.next_u64() % i]);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < ds.n; b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(b0 + cfg.batch_size, ds.n);
            std::vector<std::size_t> idx(order.begin() + b0, order.begin() + b1);
            Tape t;
            Tensor s_col = detail::s_column(t, ds.s, idx);
            Tensor loss = t.scalar(0.0);
            for (std::size_t step = 0; step < ds.horizon; ++step) {
                Tensor p = mlp_forward(t, out.model, s_col, detail::x_step(t, ds, step, idx), true);
                loss = t.add(loss, detail::bce(t, p, detail::y_step(t, ds, step, idx)));
                if (kind != BaselineKind::Plain && penalty_weight > 0.0) {
                    std::vector<std::size_t> pos, neg;
                    for (std::size_t r = 0; r < idx.size(); ++r) {
                        const bool eligible =
                            kind == BaselineKind::Dp || ds.yat(idx[r], step) == 1;
                        if (!eligible) continue;
                        (ds.s[idx[r]] == 1 ? pos : neg).push_back(r);
                    }
                    if (pos.empty() || neg.empty()) {
                        ++out.penalty_skips;
                    } else {
                        Tensor gap = t.abs_(t.sub(t.mean(t.gather_rows(p, pos)),
                                                  t.mean(t.gather_rows(p, neg))));
                        loss = t.add(loss, t.scale(gap, penalty_weight));
                    }
                }
            }
            loss = t.scale(loss, 1.0 / static_cast<double>(ds.horizon));
            t.backward(loss);
            adam_step(adam, named, collect_grads(t, named), cfg.learning_rate);
            epoch_loss += loss.scalar_value();
            ++batches;
        }
        epoch_loss /= static_cast<double>(std::max<std::size_t>(batches, 1));
        out.epoch_losses.push_back(epoch_loss);
        log.record(phase_name, epoch, epoch_loss, 0.0, epoch_loss, 0.0, cfg.seed);
    }
    return out;
}

inline ClassifierTrainResult train_phase1(const TimeSeriesDataset& ds, const TrainConfig& cfg,
                                          std::size_t h1 = 32, std::size_t h2 = 64,
                                          const TrainLogger& log = {}) {
    return train_classifier(ds, BaselineKind::Plain, 0.0, cfg, h1, h2, log, "phase1");
}

inline ClassifierTrainResult train_baseline(const TimeSeriesDataset& ds, BaselineKind kind,
                                            double penalty_weight, const TrainConfig& cfg,
                                            std::size_t h1 = 32, std::size_t h2 = 64,
                                            const TrainLogger& log = {}) {
    const char* name = kind == BaselineKind::Dp ? "baseline-dp"
                       : kind == BaselineKind::Eo ? "baseline-eo"
                                                  : "baseline-plain";
    return train_classifier(ds, kind, penalty_weight, cfg, h1, h2, log, name);
}

// ---- Phase 2: RCGAN --------------------------------------------------------

struct RcganRound {
    double disc_loss = 0.0;
    double gen_loss = 0.0;
    double mmd = 0.0;
};

struct RcganResult {
    GeneratorParams gen;
    DiscriminatorParams disc;
    std::vector<RcganRound> history;
};

namespace detail {

inline std::vector<Tensor> sample_noise(Tape& t, std::size_t steps, std::size_t n,
                                        std::size_t dim_z, Rng& rng) {
    std::vector<Tensor> noise;
    for (std::size_t k = 0; k < steps; ++k) {
        std::vector<double> z(n * dim_z);
        for (double& v : z) v = rng.normal();
        noise.push_back(t.constant(n, dim_z, std::move(z)));
    }
    return noise;
}

inline std::vector<Tensor> real_series(Tape& t, const TimeSeriesDataset& ds,
                                       const std::vector<std::size_t>& idx) {
    std::vector<Tensor> out;
    for (std::size_t step = 0; step < ds.horizon; ++step) out.push_back(x_step(t, ds, step, idx));
    return out;
}

inline Tensor mean_log(Tape& t, const std::vector<Tensor>& probs, bool complement) {
    Tensor acc = t.scalar(0.0);
    for (const auto& p : probs) {
        Tensor q = complement ? t.one_minus(p) : p;
        acc = t.add(acc, t.mean(t.log_(t.max_const(q, 1e-12))));
    }
    return t.scale(acc, 1.0 / static_cast<double>(probs.size()));
}

}  // namespace detail

// Alternating adversarial training; the Phase-1 classifier supplies the
// decisions inside the generator and stays frozen throughout.
inline RcganResult train_rcgan(const TimeSeriesDataset& ds, MlpClassifierParams& classifier,
                               const TrainConfig& cfg, std::size_t dim_z = 6,
                               std::size_t hidden = 64, const TrainLogger& log = {}) {
    cfg.validate();
    ds.validate();
    if (ds.horizon < 2) throw ValidationError("train_rcgan: need horizon >= 2");

    RcganResult out;
    out.gen = GeneratorParams(ds.d, dim_z, hidden);
    out.disc = DiscriminatorParams(ds.d, hidden);
    Rng init_rng(Rng::derive(cfg.seed, "gan-init"));
    out.gen.init(init_rng);
    out.disc.init(init_rng);

    auto gen_named = out.gen.params();
    auto disc_named = out.disc.params();
    AdamState gen_adam(gen_named), disc_adam(disc_named);

    Rng order_rng(Rng::derive(cfg.seed, "gan-batch"));
    Rng noise_rng(Rng::derive(cfg.seed, "gan-noise"));
    DecisionFn frozen = make_decision_fn(classifier, false);

    std::vector<std::size_t> order(ds.n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t round = 0; round < cfg.rcgan_rounds; ++round) {
        for (std::size_t i = ds.n; i > 1; --i)
            std::swap(order[i - 1], order[order_rng.next_u64() % i]);
        std::vector<std::size_t> idx(order.begin(),
                                     order.begin() + std::min(cfg.batch_size, ds.n));

        // one noise draw per round, shared by both updates
        std::vector<std::vector<double>> noise_raw(ds.horizon - 1);
        for (auto& z : noise_raw) {
            z.resize(idx.size() * dim_z);
            for (double& v : z) v = noise_rng.normal();
        }

        RcganRound rec;

        {  // discriminator ascent (as descent on the negation)
            Tape t;
            Tensor s_col = detail::s_column(t, ds.s, idx);
            std::vector<Tensor> noise;
            for (auto& z : noise_raw) noise.push_back(t.constant(idx.size(), dim_z, z));
            auto real = detail::real_series(t, ds, idx);
            Rollout fake = generator_rollout(t, out.gen, frozen, s_col, real[0], noise,
                                             DecisionMode::Soft, nullptr, false);
            auto d_real = discriminator_forward(t, out.disc, real, true);
            auto d_fake = discriminator_forward(t, out.disc, fake.x, true);
            Tensor obj = t.add(detail::mean_log(t, d_real, false),
                               detail::mean_log(t, d_fake, true));
            Tensor loss = t.scale(obj, -1.0);
            t.backward(loss);
            adam_step(disc_adam, disc_named, collect_grads(t, disc_named), cfg.learning_rate);
            rec.disc_loss = loss.scalar_value();
        }

        {  // generator descent
            Tape t;
            Tensor s_col = detail::s_column(t, ds.s, idx);
            std::vector<Tensor> noise;
            for (auto& z : noise_raw) noise.push_back(t.constant(idx.size(), dim_z, z));
            auto real = detail::real_series(t, ds, idx);
            Rollout fake = generator_rollout(t, out.gen, frozen, s_col, real[0], noise,
                                             DecisionMode::Soft, nullptr, true);
            auto d_fake = discriminator_forward(t, out.disc, fake.x, false);
            Tensor adv = detail::mean_log(t, d_fake, true);

            Tensor mmd_acc = t.scalar(0.0);
            for (std::size_t step = 1; step < ds.horizon; ++step)
                mmd_acc = t.add(mmd_acc, mmd_rbf(t, real[step], fake.x[step]));
            mmd_acc = t.scale(mmd_acc, 1.0 / static_cast<double>(ds.horizon - 1));

            Tensor loss = t.add(adv, t.scale(mmd_acc, cfg.gamma_mmd));
            t.backward(loss);
            adam_step(gen_adam, gen_named, collect_grads(t, gen_named), cfg.learning_rate);
            rec.gen_loss = loss.scalar_value();
            rec.mmd = mmd_acc.scalar_value();
        }

        out.history.push_back(rec);
        log.record("rcgan", round, rec.gen_loss, 0.0, rec.disc_loss, rec.mmd, cfg.seed);
    }
    return out;
}

// ---- Phase 3: performative objective and RGD ------------------------------

struct ObjectiveBatch {
    std::vector<int> s;                       // n
    std::vector<double> x1;                   // n x d
    std::vector<std::vector<double>> noise;   // horizon-1 entries, each n x dim_z
    std::size_t n = 0, d = 0, dim_z = 0;
    std::size_t horizon = 0;
};

inline ObjectiveBatch make_objective_batch(const TimeSeriesDataset& ds,
                                           const std::vector<std::size_t>& idx,
                                           std::size_t horizon, std::size_t dim_z, Rng& rng) {
    ObjectiveBatch b;
    b.n = idx.size();
    b.d = ds.d;
    b.dim_z = dim_z;
    b.horizon = horizon;
    b.s.resize(b.n);
    b.x1.resize(b.n * ds.d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        b.s[r] = ds.s[idx[r]];
        for (std::size_t q = 0; q < ds.d; ++q) b.x1[r * ds.d + q] = ds.xat(idx[r], 0, q);
    }
    b.noise.resize(horizon - 1);
    for (auto& z : b.noise) {
        z.resize(b.n * dim_z);
        for (double& v : z) v = rng.normal();
    }
    return b;
}

struct ObjectiveParts {
    double j1 = 0.0, j2 = 0.0, j3_mean = 0.0, total = 0.0;
    bool sinkhorn_converged = true;
};

// lambda1*J1^T + lambda2*J2 + (lambda3/T)*sum_t J3^t, differentiable in theta.
// J2 uses observational rollouts (decisions from the frozen Phase-1
// classifier) as data and targets; J1/J3 use interventional rollouts where
// theta replaces the decision function.
inline Tensor total_objective(Tape& t, MlpClassifierParams& theta, GeneratorParams& gen,
                              MlpClassifierParams& obs_classifier, const ObjectiveBatch& batch,
                              const TrainConfig& cfg, const SinkhornConfig& sink,
                              ObjectiveParts* parts = nullptr) {
    if (cfg.target_T < 1 || cfg.target_T > batch.horizon)
        throw ValidationError("total_objective: target_T outside generated horizon");

    std::vector<double> s_vals(batch.n);
    for (std::size_t i = 0; i < batch.n; ++i) s_vals[i] = static_cast<double>(batch.s[i]);
    Tensor s_col = t.constant(batch.n, 1, s_vals);
    Tensor x1 = t.constant(batch.n, batch.d, batch.x1);
    std::vector<Tensor> noise;
    for (const auto& z : batch.noise) noise.push_back(t.constant(batch.n, batch.dim_z, z));

    DecisionFn obs_fn = make_decision_fn(obs_classifier, false);
    DecisionFn theta_fn = make_decision_fn(theta, true);

    // J2: utility on the observational distribution
    Rollout obs = generator_rollout(t, gen, obs_fn, s_col, x1, noise, DecisionMode::Soft,
                                    nullptr, false);
    Tensor j2 = t.scalar(0.0);
    for (std::size_t step = 0; step < batch.horizon; ++step) {
        Tensor p = mlp_forward(t, theta, s_col, obs.x[step], true);
        j2 = t.add(j2, detail::bce(t, p, obs.y_prob[step]));
    }
    j2 = t.scale(j2, 1.0 / static_cast<double>(batch.horizon));

    // J1 and J3: interventional distribution under theta. When deployment
    // starts later than step 1, earlier decisions follow the observed policy
    // (the rollout queries the decision function once per step, in order).
    DecisionFn inter_fn = theta_fn;
    if (cfg.deploy_start > 1) {
        auto step_no = std::make_shared<std::size_t>(0);
        inter_fn = [step_no, obs_fn, theta_fn, start = cfg.deploy_start](
                       Tape& tt, const Tensor& sv, const Tensor& xv) {
            return ++*step_no < start ? obs_fn(tt, sv, xv) : theta_fn(tt, sv, xv);
        };
    }
    Rollout inter = generator_rollout(t, gen, inter_fn, s_col, x1, noise, DecisionMode::Soft,
                                      nullptr, false);
    bool converged = true;
    Tensor j1 = long_term_unfairness(t, inter.x, batch.s, cfg.target_T, sink, &converged);

    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < batch.n; ++i)
        if (batch.s[i] == 0) neg.push_back(i);
    if (neg.empty()) throw ValidationError("total_objective: disadvantaged group is empty");
    if (cfg.deploy_start > cfg.target_T)
        throw ValidationError("total_objective: deploy_start beyond target_T");
    Tensor j3 = t.scalar(0.0);
    for (std::size_t step = cfg.deploy_start - 1; step < cfg.target_T; ++step)
        j3 = t.add(j3, direct_discrimination_t(t, theta_fn, t.gather_rows(inter.x[step], neg)));
    Tensor j3_mean = t.scale(j3, 1.0 / static_cast<double>(cfg.target_T - cfg.deploy_start + 1));

    Tensor total = t.add(t.add(t.scale(j1, cfg.lambda_long), t.scale(j2, cfg.lambda_util)),
                         t.scale(j3_mean, cfg.lambda_local));
    if (parts) {
        parts->j1 = j1.scalar_value();
        parts->j2 = j2.scalar_value();
        parts->j3_mean = j3_mean.scalar_value();
        parts->total = total.scalar_value();
        parts->sinkhorn_converged = converged;
    }
    return total;
}

struct DeeplfRound {
    ObjectiveParts parts;
    std::uint64_t theta_hash = 0;  // hash of the parameters used for this round's rollouts
};

struct DeeplfResult {
    MlpClassifierParams model;
    std::vector<DeeplfRound> history;
    std::size_t rounds_run = 0;
};

inline std::uint64_t hash_params(const NamedParams& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, p] : params)
        for (double v : p->value) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            h ^= bits;
            h *= 0x100000001b3ULL;
        }
    return h;
}

// Repeated gradient descent: every round regenerates interventional data
// with the current theta, then takes cfg.inner_steps Adam steps. Stops after
// rgd_rounds or when the parameter change drops below 1e-6.
inline DeeplfResult train_deeplf(const TimeSeriesDataset& ds, GeneratorParams& gen,
                                 MlpClassifierParams& obs_classifier,
                                 const MlpClassifierParams& classifier_init,
                                 const TrainConfig& cfg, const SinkhornConfig& sink,
                                 const TrainLogger& log = {}) {
    cfg.validate();
    DeeplfResult out;
    out.model = classifier_init;

    auto named = out.model.params();
    AdamState adam(named);
    Rng order_rng(Rng::derive(cfg.seed, "rgd-batch"));
    Rng noise_rng(Rng::derive(cfg.seed, "rgd-noise"));

    std::vector<std::size_t> order(ds.n);
    std::iota(order.begin(), order.end(), 0);

    const std::size_t horizon = std::max<std::size_t>(ds.horizon, cfg.target_T);
    for (std::size_t round = 0; round < cfg.rgd_rounds; ++round) {
        for (std::size_t i = ds.n; i > 1; --i)
            std::swap(order[i - 1], order[order_rng.next_u64() % i]);
        std::vector<std::size_t> idx(order.begin(),
                                     order.begin() + std::min(cfg.batch_size, ds.n));
        ObjectiveBatch batch =
            make_objective_batch(ds, idx, horizon, gen.dim_z, noise_rng);

        DeeplfRound rec;
        rec.theta_hash = hash_params(named);
        double max_delta = 0.0;
        for (std::size_t inner = 0; inner < std::max<std::size_t>(cfg.inner_steps, 1); ++inner) {
            Tape t;
            Tensor obj = total_objective(t, out.model, gen, obs_classifier, batch, cfg, sink,
                                         &rec.parts);
            if (!std::isfinite(obj.scalar_value()))
                throw NumericError("train_deeplf: non-finite objective at round " +
                                   std::to_string(round));
            t.backward(obj);
            std::vector<std::vector<double>> before;
            for (const auto& [name, p] : named) before.push_back(p->value);
            adam_step(adam, named, collect_grads(t, named), cfg.learning_rate);
            for (std::size_t k = 0; k < named.size(); ++k)
                for (std::size_t q = 0; q < before[k].size(); ++q)
                    max_delta = std::max(max_delta,
                                         std::fabs(named[k].second->value[q] - before[k][q]));
        }
        out.history.push_back(rec);
        ++out.rounds_run;
        log.record("deeplf", round, rec.parts.total, rec.parts.j1, rec.parts.j2,
                   rec.parts.j3_mean, cfg.seed);
        if (max_delta < 1e-6) break;
    }
    return out;
}

}  // namespace fairlong
