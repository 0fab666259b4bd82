#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fairlong/evaluation.hpp"
#include "fairlong/metrics.hpp"
#include "fairlong/tensor.hpp"
#include "fairlong/training.hpp"

// Experiment configuration: sectioned key=value text file with every default
// embedded, so an empty file is a valid config. Unknown sections or keys are
// rejected at parse time.

namespace fairlong {

struct DatasetConfig {
    std::size_t n = 10000;
    std::size_t d = 6;
    std::size_t horizon = 10;
    double epsilon = 0.05;
    double cluster_separation = 2.0;
    std::string csv;  // optional user-supplied initial cohort
};

struct ModelConfig {
    std::size_t h1 = 32;
    std::size_t h2 = 64;
    std::size_t gru_hidden = 64;
    std::size_t dim_z = 6;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;
    TrainConfig training;
    SinkhornConfig sinkhorn;
    EvalSetting evaluation;
    double baseline_penalty = 10.0;
    std::uint64_t master_seed = 42;

    void validate() const {
        if (dataset.n < 2) throw ValidationError("dataset.n must be >= 2");
        if (dataset.d < 1) throw ValidationError("dataset.d must be >= 1");
        if (dataset.horizon < 1) throw ValidationError("dataset.horizon must be >= 1");
        if (dataset.epsilon <= 0) throw ValidationError("dataset.epsilon must be > 0");
        if (sinkhorn.max_iter < 1) throw ValidationError("sinkhorn.max_iter must be >= 1");
        if (sinkhorn.tol <= 0) throw ValidationError("sinkhorn.tol must be > 0");
        if (baseline_penalty < 0) throw ValidationError("training.baseline_penalty must be >= 0");
        training.validate();
        evaluation.validate();
    }

    std::string fingerprint() const;
};

namespace detail_cfg {

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const std::uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ValidationError("config: bad integer for '" + key + "': " + v);
    }
}

inline double parse_f64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ValidationError("config: bad number for '" + key + "': " + v);
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config: bad boolean for '" + key + "': " + v);
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

}  // namespace detail_cfg

inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;

    auto apply = [&](const std::string& key, const std::string& value) {
        using namespace detail_cfg;
        const std::string full = section + "." + key;
        auto& ds = cfg.dataset;
        auto& md = cfg.model;
        auto& tr = cfg.training;
        auto& sk = cfg.sinkhorn;
        auto& ev = cfg.evaluation;
        if (section == "dataset") {
            if (key == "n") ds.n = parse_u64(value, full);
            else if (key == "d") ds.d = parse_u64(value, full);
            else if (key == "horizon") ds.horizon = parse_u64(value, full);
            else if (key == "epsilon") ds.epsilon = parse_f64(value, full);
            else if (key == "cluster_separation") ds.cluster_separation = parse_f64(value, full);
            else if (key == "csv") ds.csv = value;
            else throw ValidationError("config line " + std::to_string(lineno) +
                                       ": unknown key '" + full + "'");
        } else if (section == "model") {
            if (key == "h1") md.h1 = parse_u64(value, full);
            else if (key == "h2") md.h2 = parse_u64(value, full);
            else if (key == "gru_hidden") md.gru_hidden = parse_u64(value, full);
            else if (key == "dim_z") md.dim_z = parse_u64(value, full);
            else throw ValidationError("config line " + std::to_string(lineno) +
                                       ": unknown key '" + full + "'");
        } else if (section == "training") {
            if (key == "lambda_long") tr.lambda_long = parse_f64(value, full);
            else if (key == "lambda_util") tr.lambda_util = parse_f64(value, full);
            else if (key == "lambda_local") tr.lambda_local = parse_f64(value, full);
            else if (key == "gamma_mmd") tr.gamma_mmd = parse_f64(value, full);
            else if (key == "learning_rate") tr.learning_rate = parse_f64(value, full);
            else if (key == "batch_size") tr.batch_size = parse_u64(value, full);
            else if (key == "epochs") tr.epochs = parse_u64(value, full);
            else if (key == "rcgan_rounds") tr.rcgan_rounds = parse_u64(value, full);
            else if (key == "rgd_rounds") tr.rgd_rounds = parse_u64(value, full);
            else if (key == "inner_steps") tr.inner_steps = parse_u64(value, full);
            else if (key == "target_T") tr.target_T = parse_u64(value, full);
            else if (key == "split_train") tr.split_train = parse_f64(value, full);
            else if (key == "split_val") tr.split_val = parse_f64(value, full);
            else if (key == "split_test") tr.split_test = parse_f64(value, full);
            else if (key == "baseline_penalty") cfg.baseline_penalty = parse_f64(value, full);
            else throw ValidationError("config line " + std::to_string(lineno) +
                                       ": unknown key '" + full + "'");
        } else if (section == "sinkhorn") {
            if (key == "reg") sk.reg = parse_f64(value, full);
            else if (key == "reg_scale") sk.reg_scale = parse_f64(value, full);
            else if (key == "max_iter") sk.max_iter = parse_u64(value, full);
            else if (key == "tol") sk.tol = parse_f64(value, full);
            else if (key == "debias") sk.debias = parse_bool(value, full);
            else throw ValidationError("config line " + std::to_string(lineno) +
                                       ": unknown key '" + full + "'");
        } else if (section == "evaluation") {
            if (key == "target_T") ev.target_T = parse_u64(value, full);
            else if (key == "start_step") ev.start_step = parse_u64(value, full);
            else if (key == "horizon") ev.horizon = parse_u64(value, full);
            else if (key == "n_eval") ev.n_eval = parse_u64(value, full);
            else if (key == "n_repeats") ev.n_repeats = parse_u64(value, full);
            else throw ValidationError("config line " + std::to_string(lineno) +
                                       ": unknown key '" + full + "'");
        } else if (section == "seed") {
            if (key == "master") cfg.master_seed = parse_u64(value, full);
            else throw ValidationError("config line " + std::to_string(lineno) +
                                       ": unknown key '" + full + "'");
        } else {
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": unknown section '" + section + "'");
        }
    };

    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail_cfg::trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ValidationError("config line " + std::to_string(lineno) +
                                      ": malformed section header");
            section = s.substr(1, s.size() - 2);
            continue;
        }
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": expected key=value");
        if (section.empty())
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": key outside any [section]");
        apply(detail_cfg::trim(s.substr(0, eq)), detail_cfg::trim(s.substr(eq + 1)));
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    ExperimentConfig cfg = parse_config_text(ss.str());
    cfg.validate();
    return cfg;
}

inline std::string ExperimentConfig::fingerprint() const {
    std::ostringstream os;
    os << dataset.n << '|' << dataset.d << '|' << dataset.horizon << '|' << dataset.epsilon << '|'
       << dataset.cluster_separation << '|' << dataset.csv << '|' << model.h1 << '|' << model.h2
       << '|' << model.gru_hidden << '|' << model.dim_z << '|' << training.lambda_long << '|'
       << training.lambda_util << '|' << training.lambda_local << '|' << training.gamma_mmd << '|'
       << training.learning_rate << '|' << training.batch_size << '|' << training.epochs << '|'
       << training.rcgan_rounds << '|' << training.rgd_rounds << '|' << training.inner_steps
       << '|' << training.target_T << '|' << sinkhorn.reg << '|' << sinkhorn.reg_scale << '|'
       << sinkhorn.max_iter << '|' << sinkhorn.tol << '|' << sinkhorn.debias << '|'
       << evaluation.target_T << '|' << evaluation.start_step << '|' << evaluation.horizon << '|'
       << evaluation.n_eval << '|' << evaluation.n_repeats << '|' << baseline_penalty << '|'
       << master_seed;
    const std::string s = os.str();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    std::ostringstream hex;
    hex << std::hex << h;
    return hex.str();
}

}  // namespace fairlong
