#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairlong/io.hpp"
#include "fairlong/metrics.hpp"
#include "fairlong/models.hpp"
#include "fairlong/simulator.hpp"
#include "fairlong/tensor.hpp"

// Deployment evaluation: roll the candidate decision model through the
// trained generator (sampled decisions), score per-step accuracy against the
// ground-truth classifier, per-step direct discrimination, and the Sinkhorn
// long-term unfairness at the target step; repeated over derived seeds.

namespace fairlong {

struct EvalSetting {
    std::size_t target_T = 10;
    std::size_t start_step = 1;  // 1 for Setting 1, 10 for Setting 2
    std::size_t horizon = 10;
    std::size_t n_eval = 0;      // 0 -> whole cohort
    std::size_t n_repeats = 5;

    void validate() const {
        if (start_step < 1) throw ValidationError("EvalSetting: start_step must be >= 1");
        if (horizon < 1) throw ValidationError("EvalSetting: horizon must be >= 1");
        if (target_T != start_step + horizon - 1)
            throw ValidationError("EvalSetting: target_T must equal start_step + horizon - 1");
        if (n_repeats < 1) throw ValidationError("EvalSetting: n_repeats must be >= 1");
    }

    std::string label() const {
        std::ostringstream os;
        os << "range-[" << start_step << "," << target_T << "]";
        return os.str();
    }
};

struct StepStats {
    std::size_t t = 0;  // absolute step index (start_step-based)
    double accuracy_mean = 0.0, accuracy_std = 0.0;
    double local_mean = 0.0, local_std = 0.0;
};

struct FairnessReport {
    std::string model_name;
    std::string setting;
    std::vector<StepStats> per_step;
    double long_term_j1_mean = 0.0, long_term_j1_std = 0.0;
    std::vector<std::uint64_t> seeds_used;
    bool sinkhorn_converged = true;

    double mean_accuracy() const {
        double s = 0.0;
        for (const auto& p : per_step) s += p.accuracy_mean;
        return s / static_cast<double>(per_step.size());
    }
    double mean_local() const {
        double s = 0.0;
        for (const auto& p : per_step) s += p.local_mean;
        return s / static_cast<double>(per_step.size());
    }
};

namespace detail {
struct MeanStd {
    double mean = 0.0, sd = 0.0;
};
inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double s2 = 0.0;
        for (double x : v) s2 += (x - r.mean) * (x - r.mean);
        r.sd = std::sqrt(s2 / static_cast<double>(v.size() - 1));
    }
    return r;
}
}  // namespace detail

// One interventional rollout through the generator with sampled decisions;
// returns per-step accuracy and local unfairness plus the step-T clouds.
struct SingleEvalRun {
    std::vector<double> accuracy;  // horizon entries
    std::vector<double> local;     // horizon entries
    double j1 = 0.0;
    bool converged = true;
};

inline SingleEvalRun eval_run(MlpClassifierParams& model, GeneratorParams& gen,
                              MlpClassifierParams& accuracy_ref, const Cohort& cohort,
                              const EvalSetting& setting, const SinkhornConfig& sink,
                              std::uint64_t seed) {
    const std::size_t n = cohort.n;
    Rng rng(Rng::derive(seed, "eval-decisions"));
    Rng noise_rng(Rng::derive(seed, "eval-noise"));

    Tape t;
    std::vector<double> s_vals(n);
    for (std::size_t i = 0; i < n; ++i) s_vals[i] = static_cast<double>(cohort.s[i]);
    Tensor s_col = t.constant(n, 1, s_vals);
    Tensor x1 = t.constant(n, cohort.d, cohort.x1);
    std::vector<Tensor> noise;
    for (std::size_t k = 0; k + 1 < setting.horizon; ++k) {
        std::vector<double> z(n * gen.dim_z);
        for (double& v : z) v = noise_rng.normal();
        noise.push_back(t.constant(n, gen.dim_z, std::move(z)));
    }

    Rollout roll = generator_rollout(t, gen, make_decision_fn(model, false), s_col, x1, noise,
                                     DecisionMode::Sampled, &rng, false);

    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (cohort.s[i] == 1 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty())
        throw ValidationError("evaluate_model: cohort must contain both sensitive groups");

    SingleEvalRun out;
    for (std::size_t step = 0; step < setting.horizon; ++step) {
        const Tensor& xt = roll.x[step];
        Tensor ref_p = mlp_forward(t, accuracy_ref, s_col, xt, false);
        std::size_t agree = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool model_dec = roll.y_prob[step].value()[i] > 0.5;
            const bool ref_dec = ref_p.value()[i] > 0.5;
            if (model_dec == ref_dec) ++agree;
        }
        out.accuracy.push_back(static_cast<double>(agree) / static_cast<double>(n));

        Tensor neg_rows = t.gather_rows(xt, neg);
        out.local.push_back(
            direct_discrimination_t(t, make_decision_fn(model, false), neg_rows).scalar_value());
    }

    const Tensor& xT = roll.x[setting.horizon - 1];
    WeightedSample A = WeightedSample::uniform(pos.size(), cohort.d,
                                               t.gather_rows(xT, pos).value());
    WeightedSample B = WeightedSample::uniform(neg.size(), cohort.d,
                                               t.gather_rows(xT, neg).value());
    SinkhornValue sv = sinkhorn_divergence_value(A, B, sink);
    out.j1 = sv.value;
    out.converged = sv.converged;
    return out;
}

inline FairnessReport evaluate_model(const std::string& model_name, MlpClassifierParams& model,
                                     GeneratorParams& gen, MlpClassifierParams& accuracy_ref,
                                     const Cohort& cohort_full, const EvalSetting& setting,
                                     const SinkhornConfig& sink, std::uint64_t seed) {
    setting.validate();
    cohort_full.validate();

    Cohort cohort = cohort_full;
    if (setting.n_eval > 0 && setting.n_eval < cohort_full.n) {
        cohort.n = setting.n_eval;
        cohort.s.assign(cohort_full.s.begin(), cohort_full.s.begin() + setting.n_eval);
        cohort.x1.assign(cohort_full.x1.begin(),
                         cohort_full.x1.begin() + setting.n_eval * cohort_full.d);
        if (!cohort_full.y1.empty())
            cohort.y1.assign(cohort_full.y1.begin(), cohort_full.y1.begin() + setting.n_eval);
    }

    std::vector<std::vector<double>> acc(setting.horizon), local(setting.horizon);
    std::vector<double> j1s;
    FairnessReport rep;
    rep.model_name = model_name;
    rep.setting = setting.label();

    for (std::size_t r = 0; r < setting.n_repeats; ++r) {
        const std::uint64_t run_seed = Rng::derive(seed, "eval-repeat", r);
        rep.seeds_used.push_back(run_seed);
        SingleEvalRun run = eval_run(model, gen, accuracy_ref, cohort, setting, sink, run_seed);
        for (std::size_t step = 0; step < setting.horizon; ++step) {
            acc[step].push_back(run.accuracy[step]);
            local[step].push_back(run.local[step]);
        }
        j1s.push_back(run.j1);
        rep.sinkhorn_converged = rep.sinkhorn_converged && run.converged;
    }

    for (std::size_t step = 0; step < setting.horizon; ++step) {
        StepStats st;
        st.t = setting.start_step + step;
        auto a = detail::mean_std(acc[step]);
        auto l = detail::mean_std(local[step]);
        st.accuracy_mean = a.mean;
        st.accuracy_std = a.sd;
        st.local_mean = l.mean;
        st.local_std = l.sd;
        rep.per_step.push_back(st);
    }
    auto j = detail::mean_std(j1s);
    rep.long_term_j1_mean = j.mean;
    rep.long_term_j1_std = j.sd;
    return rep;
}

// Roll a cohort forward through the generator to produce the step-`to`
// feature matrix (used as the Setting-2 starting cohort).
inline Cohort advance_cohort(MlpClassifierParams& policy, GeneratorParams& gen,
                             const Cohort& cohort, std::size_t to_step, std::uint64_t seed) {
    if (to_step < 1) throw ValidationError("advance_cohort: to_step must be >= 1");
    if (to_step == 1) return cohort;
    Rng rng(Rng::derive(seed, "advance-decisions"));
    Rng noise_rng(Rng::derive(seed, "advance-noise"));

    Tape t;
    std::vector<double> s_vals(cohort.n);
    for (std::size_t i = 0; i < cohort.n; ++i) s_vals[i] = static_cast<double>(cohort.s[i]);
    Tensor s_col = t.constant(cohort.n, 1, s_vals);
    Tensor x1 = t.constant(cohort.n, cohort.d, cohort.x1);
    std::vector<Tensor> noise;
    for (std::size_t k = 0; k + 1 < to_step; ++k) {
        std::vector<double> z(cohort.n * gen.dim_z);
        for (double& v : z) v = noise_rng.normal();
        noise.push_back(t.constant(cohort.n, gen.dim_z, std::move(z)));
    }
    Rollout roll = generator_rollout(t, gen, make_decision_fn(policy, false), s_col, x1, noise,
                                     DecisionMode::Sampled, &rng, false);
    Cohort out;
    out.n = cohort.n;
    out.d = cohort.d;
    out.s = cohort.s;
    out.x1 = roll.x[to_step - 1].value();
    return out;
}

// ---- comparison table ------------------------------------------------------

struct ComparisonRow {
    std::string model;
    double mean_accuracy = 0.0;
    double mean_local = 0.0;
    double long_term_j1 = 0.0;
};

struct ComparisonTable {
    std::string setting;
    std::vector<ComparisonRow> rows;
};

inline ComparisonTable compare_models(const std::vector<FairnessReport>& reports) {
    if (reports.size() < 2) throw ValidationError("compare_models: need at least 2 reports");
    ComparisonTable table;
    table.setting = reports[0].setting;
    for (const auto& r : reports) {
        if (r.setting != table.setting)
            throw ValidationError("compare_models: mismatched settings '" + r.setting +
                                  "' vs '" + table.setting + "'");
        table.rows.push_back({r.model_name, r.mean_accuracy(), r.mean_local(),
                              r.long_term_j1_mean});
    }
    return table;
}

// ---- serialization ---------------------------------------------------------

inline nlohmann::json report_to_json(const FairnessReport& r) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : r.per_step)
        steps.push_back({{"t", s.t},
                         {"accuracy_mean", s.accuracy_mean},
                         {"accuracy_std", s.accuracy_std},
                         {"local_mean", s.local_mean},
                         {"local_std", s.local_std}});
    return {{"model_name", r.model_name},
            {"setting", r.setting},
            {"per_step", std::move(steps)},
            {"long_term_j1_mean", r.long_term_j1_mean},
            {"long_term_j1_std", r.long_term_j1_std},
            {"seeds_used", r.seeds_used},
            {"sinkhorn_converged", r.sinkhorn_converged}};
}

inline FairnessReport report_from_json(const nlohmann::json& j) {
    FairnessReport r;
    r.model_name = j.at("model_name").get<std::string>();
    r.setting = j.at("setting").get<std::string>();
    for (const auto& s : j.at("per_step")) {
        StepStats st;
        st.t = s.at("t").get<std::size_t>();
        st.accuracy_mean = s.at("accuracy_mean").get<double>();
        st.accuracy_std = s.at("accuracy_std").get<double>();
        st.local_mean = s.at("local_mean").get<double>();
        st.local_std = s.at("local_std").get<double>();
        r.per_step.push_back(st);
    }
    r.long_term_j1_mean = j.at("long_term_j1_mean").get<double>();
    r.long_term_j1_std = j.at("long_term_j1_std").get<double>();
    r.seeds_used = j.at("seeds_used").get<std::vector<std::uint64_t>>();
    r.sinkhorn_converged = j.at("sinkhorn_converged").get<bool>();
    return r;
}

inline void save_report(const FairnessReport& r, const std::string& json_path,
                        const std::string& csv_path = "") {
    io::atomic_write(json_path, report_to_json(r).dump(2) + "\n");
    if (!csv_path.empty()) {
        std::ostringstream os;
        os << "t,accuracy,local_unfairness\n";
        for (const auto& s : r.per_step)
            os << s.t << ',' << io::fmt_g17(s.accuracy_mean) << ',' << io::fmt_g17(s.local_mean)
               << '\n';
        io::atomic_write(csv_path, os.str());
    }
}

// Raw projection-ready feature clouds (in place of a built-in embedding).
inline void emit_projection_data(const std::vector<std::vector<double>>& group_pos,
                                 const std::vector<std::vector<double>>& group_neg,
                                 const std::string& path) {
    if (group_pos.empty() || group_neg.empty())
        throw ValidationError("emit_projection_data: empty cloud");
    const std::size_t d = group_pos[0].size();
    std::ostringstream os;
    os << "group";
    for (std::size_t q = 0; q < d; ++q) os << ",x" << q;
    os << '\n';
    auto dump = [&](int g, const std::vector<std::vector<double>>& rows) {
        for (const auto& row : rows) {
            if (row.size() != d) throw ShapeError("emit_projection_data: ragged rows");
            os << g;
            for (double v : row) os << ',' << io::fmt_g17(v);
            os << '\n';
        }
    };
    dump(1, group_pos);
    dump(0, group_neg);
    io::atomic_write(path, os.str());
}

}  // namespace fairlong
