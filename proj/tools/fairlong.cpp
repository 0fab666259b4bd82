// fairlong: experiment pipeline CLI.
//   generate  - synthesize the time-series dataset and the frozen ground truth
//   train     - run one training phase (phase1 | rcgan | deeplf | baseline-*)
//   evaluate  - produce fairness reports for trained models
//   report    - aggregate saved reports into a comparison table
// Exit codes: 0 success, 2 validation error, 3 missing prerequisite,
// 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fairlong/config.hpp"
#include "fairlong/evaluation.hpp"
#include "fairlong/io.hpp"
#include "fairlong/metrics.hpp"
#include "fairlong/models.hpp"
#include "fairlong/simulator.hpp"
#include "fairlong/training.hpp"

namespace fl = fairlong;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_set = false;
};

fl::ExperimentConfig load_cfg(const CommonArgs& args) {
    fl::ExperimentConfig cfg = fl::load_config(args.config_path);
    if (args.seed_set) cfg.master_seed = args.seed;
    cfg.validate();
    return cfg;
}

std::string out_path(const CommonArgs& args, const std::string& name) {
    fs::create_directories(args.out_dir);
    return (fs::path(args.out_dir) / name).string();
}

fl::io::CheckpointMeta meta_for(const fl::ExperimentConfig& cfg, const std::string& lineage) {
    return {cfg.fingerprint(), lineage + "@" + std::to_string(cfg.master_seed)};
}

fl::TrainConfig training_with_seed(const fl::ExperimentConfig& cfg, const char* stream) {
    fl::TrainConfig tc = cfg.training;
    tc.seed = fl::Rng::derive(cfg.master_seed, stream);
    return tc;
}

// Ground truth: Phase-1 fit on the initial step, then frozen.
fl::GroundTruthModel fit_ground_truth(const fl::Cohort& cohort, const fl::ExperimentConfig& cfg) {
    fl::TimeSeriesDataset initial;
    initial.n = cohort.n;
    initial.d = cohort.d;
    initial.horizon = 1;
    initial.s = cohort.s;
    initial.x = cohort.x1;
    initial.y = cohort.y1;
    fl::TrainConfig tc = training_with_seed(cfg, "ground-truth");
    fl::GroundTruthModel gt;
    gt.classifier = fl::train_phase1(initial, tc, cfg.model.h1, cfg.model.h2).model;
    gt.epsilon = cfg.dataset.epsilon;
    return gt;
}

int cmd_generate(const CommonArgs& args) {
    fl::ExperimentConfig cfg = load_cfg(args);

    fl::Cohort cohort;
    if (!cfg.dataset.csv.empty()) {
        cohort = fl::io::load_initial_cohort_csv(cfg.dataset.csv);
        if (cohort.y1.empty())
            throw fl::ValidationError("cohort csv must carry initial labels in the y column");
    } else {
        cohort = fl::generate_initial_cohort(cfg.dataset.n, cfg.dataset.d,
                                             cfg.dataset.cluster_separation,
                                             fl::Rng::derive(cfg.master_seed, "data"));
    }

    fl::GroundTruthModel gt = fit_ground_truth(cohort, cfg);
    fl::Rng roll_rng(fl::Rng::derive(cfg.master_seed, "rollout"));
    fl::TimeSeriesDataset ds = fl::roll_out_truth(gt, cohort, nullptr, cfg.dataset.horizon,
                                                  roll_rng);

    fl::DatasetSplit split =
        fl::split_dataset(ds, cfg.training.split_train, cfg.training.split_val,
                          cfg.training.split_test, fl::Rng::derive(cfg.master_seed, "split"));

    fl::io::save_dataset_csv(split.train, out_path(args, "train.csv"));
    fl::io::save_dataset_csv(split.val, out_path(args, "val.csv"));
    fl::io::save_dataset_csv(split.test, out_path(args, "test.csv"));
    fl::io::save_ground_truth(gt, meta_for(cfg, "ground-truth"), out_path(args, "ground_truth.json"));
    std::cout << "generated n=" << ds.n << " d=" << ds.d << " horizon=" << ds.horizon
              << " -> " << args.out_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& phase) {
    fl::ExperimentConfig cfg = load_cfg(args);

    const std::string train_csv = out_path(args, "train.csv");
    if (!fs::exists(train_csv))
        throw fl::PrereqError("missing dataset: " + train_csv + " (run 'fairlong generate')");
    fl::TimeSeriesDataset train = fl::io::load_dataset_csv(train_csv);

    std::ofstream log_file(out_path(args, "train_" + phase + ".log.jsonl"));
    fl::TrainLogger log{&log_file};

    if (phase == "phase1") {
        fl::TrainConfig tc = training_with_seed(cfg, "phase1");
        auto res = fl::train_phase1(train, tc, cfg.model.h1, cfg.model.h2, log);
        fl::io::save_classifier(res.model, "classifier", meta_for(cfg, "phase1"),
                                out_path(args, "phase1.json"));
    } else if (phase == "rcgan") {
        fl::MlpClassifierParams clf = fl::io::load_classifier(out_path(args, "phase1.json"));
        fl::TrainConfig tc = training_with_seed(cfg, "rcgan");
        auto res = fl::train_rcgan(train, clf, tc, cfg.model.dim_z, cfg.model.gru_hidden, log);
        fl::io::save_generator(res.gen, meta_for(cfg, "rcgan"), out_path(args, "generator.json"));
        fl::io::save_discriminator(res.disc, meta_for(cfg, "rcgan"),
                                   out_path(args, "discriminator.json"));
    } else if (phase == "deeplf") {
        fl::MlpClassifierParams clf = fl::io::load_classifier(out_path(args, "phase1.json"));
        fl::GeneratorParams gen = fl::io::load_generator(out_path(args, "generator.json"));
        fl::TrainConfig tc = training_with_seed(cfg, "deeplf");
        auto res = fl::train_deeplf(train, gen, clf, clf, tc, cfg.sinkhorn, log);
        fl::io::save_classifier(res.model, "classifier", meta_for(cfg, "deeplf"),
                                out_path(args, "deeplf.json"));
    } else if (phase == "baseline-plain" || phase == "baseline-dp" || phase == "baseline-eo") {
        const fl::BaselineKind kind = phase == "baseline-dp"  ? fl::BaselineKind::Dp
                                      : phase == "baseline-eo" ? fl::BaselineKind::Eo
                                                               : fl::BaselineKind::Plain;
        const double weight = kind == fl::BaselineKind::Plain ? 0.0 : cfg.baseline_penalty;
        fl::TrainConfig tc = training_with_seed(cfg, "phase1");  // shares phase1 streams
        auto res = fl::train_baseline(train, kind, weight, tc, cfg.model.h1, cfg.model.h2, log);
        fl::io::save_classifier(res.model, "classifier", meta_for(cfg, phase),
                                out_path(args, phase + ".json"));
    } else {
        throw fl::ValidationError("unknown phase '" + phase + "'");
    }
    std::cout << "trained " << phase << " -> " << args.out_dir << "\n";
    return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::vector<std::string>& model_paths,
                 int setting, const std::string& accuracy_ref) {
    fl::ExperimentConfig cfg = load_cfg(args);
    if (model_paths.empty()) throw fl::ValidationError("evaluate: no model checkpoints given");

    fl::GeneratorParams gen = fl::io::load_generator(out_path(args, "generator.json"));
    fl::GroundTruthModel gt = fl::io::load_ground_truth(out_path(args, "ground_truth.json"));
    const std::string test_csv = out_path(args, "test.csv");
    if (!fs::exists(test_csv))
        throw fl::PrereqError("missing dataset: " + test_csv + " (run 'fairlong generate')");
    fl::TimeSeriesDataset test = fl::io::load_dataset_csv(test_csv);

    fl::Cohort cohort;
    cohort.n = test.n;
    cohort.d = test.d;
    cohort.s = test.s;
    cohort.x1 = test.step_features(0);

    fl::EvalSetting es = cfg.evaluation;
    if (setting == 1) {
        es.start_step = 1;
        es.horizon = cfg.dataset.horizon;
        es.target_T = es.horizon;
    } else if (setting == 2) {
        es.start_step = cfg.dataset.horizon;
        es.horizon = cfg.dataset.horizon;
        es.target_T = es.start_step + es.horizon - 1;
    }
    es.validate();

    fl::MlpClassifierParams phase1;
    bool have_phase1 = fs::exists(out_path(args, "phase1.json"));
    if (have_phase1) phase1 = fl::io::load_classifier(out_path(args, "phase1.json"));

    if (es.start_step > 1) {
        // shared starting features for comparability: the Phase-1 policy is
        // rolled through the generator once with a fixed derived seed
        if (!have_phase1)
            throw fl::PrereqError("setting 2 requires phase1.json to produce the start cohort");
        cohort = fl::advance_cohort(phase1, gen, cohort, es.start_step,
                                    fl::Rng::derive(cfg.master_seed, "setting2-advance"));
    }

    fl::MlpClassifierParams* acc_ref = &gt.classifier;
    if (accuracy_ref == "phase1") {
        if (!have_phase1) throw fl::PrereqError("accuracy reference phase1.json not found");
        acc_ref = &phase1;
    }

    std::vector<fl::FairnessReport> reports;
    for (const auto& path : model_paths) {
        fl::MlpClassifierParams model = fl::io::load_classifier(path);
        const std::string name = fs::path(path).stem().string();
        fl::FairnessReport rep = fl::evaluate_model(
            name, model, gen, *acc_ref, cohort, es, cfg.sinkhorn,
            fl::Rng::derive(cfg.master_seed, "evaluate"));
        fl::save_report(rep, out_path(args, "report_" + name + ".json"),
                        out_path(args, "report_" + name + ".csv"));
        reports.push_back(std::move(rep));
    }

    if (reports.size() >= 2) {
        fl::ComparisonTable table = fl::compare_models(reports);
        std::ostringstream os;
        os << "model,mean_accuracy,mean_local_unfairness,long_term_j1\n";
        for (const auto& row : table.rows)
            os << row.model << ',' << fl::io::fmt_g17(row.mean_accuracy) << ','
               << fl::io::fmt_g17(row.mean_local) << ',' << fl::io::fmt_g17(row.long_term_j1)
               << '\n';
        fl::io::atomic_write(out_path(args, "comparison.csv"), os.str());
        std::cout << os.str();
    } else {
        std::cout << "model " << reports[0].model_name
                  << ": accuracy=" << reports[0].mean_accuracy()
                  << " local=" << reports[0].mean_local()
                  << " j1=" << reports[0].long_term_j1_mean << "\n";
    }
    return 0;
}

int cmd_report(const CommonArgs& args, const std::vector<std::string>& report_paths) {
    if (report_paths.size() < 2)
        throw fl::ValidationError("report: need at least 2 report files");
    std::vector<fl::FairnessReport> reports;
    for (const auto& p : report_paths) {
        if (!fs::exists(p)) throw fl::PrereqError("missing report: " + p);
        reports.push_back(fl::report_from_json(nlohmann::json::parse(fl::io::read_file(p))));
    }
    fl::ComparisonTable table = fl::compare_models(reports);
    std::ostringstream os;
    os << "model,mean_accuracy,mean_local_unfairness,long_term_j1\n";
    for (const auto& row : table.rows)
        os << row.model << ',' << fl::io::fmt_g17(row.mean_accuracy) << ','
           << fl::io::fmt_g17(row.mean_local) << ',' << fl::io::fmt_g17(row.long_term_j1) << '\n';
    fl::io::atomic_write(out_path(args, "comparison.csv"), os.str());
    std::cout << os.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"long-term fairness simulation, training, and evaluation pipeline"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string phase;
    std::vector<std::string> models, report_files;
    int setting = 0;
    std::string accuracy_ref = "ground_truth";

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "experiment config file")->required();
        sub->add_option("--out", common.out_dir, "output directory");
        sub->add_option("--seed", common.seed, "override master seed")
            ->each([&](const std::string&) { common.seed_set = true; });
    };

    CLI::App* gen = app.add_subcommand("generate", "synthesize dataset + ground truth");
    add_common(gen);

    CLI::App* train = app.add_subcommand("train", "run one training phase");
    add_common(train);
    train->add_option("--phase", phase,
                      "phase1 | rcgan | deeplf | baseline-plain | baseline-dp | baseline-eo")
        ->required();

    CLI::App* eval = app.add_subcommand("evaluate", "evaluate trained decision models");
    add_common(eval);
    eval->add_option("--models", models, "model checkpoint files")->required();
    eval->add_option("--setting", setting, "1 (range [1,T]) or 2 (range [T,2T-1])");
    eval->add_option("--accuracy-ref", accuracy_ref, "ground_truth | phase1");

    CLI::App* rep = app.add_subcommand("report", "aggregate saved reports");
    rep->add_option("--config", common.config_path, "experiment config file")->required();
    rep->add_option("--out", common.out_dir, "output directory");
    rep->add_option("--reports", report_files, "report json files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(common);
        if (train->parsed()) return cmd_train(common, phase);
        if (eval->parsed()) return cmd_evaluate(common, models, setting, accuracy_ref);
        if (rep->parsed()) return cmd_report(common, report_files);
    } catch (const fl::PrereqError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const fl::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
