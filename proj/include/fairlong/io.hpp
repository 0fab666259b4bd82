#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairlong/models.hpp"
#include "fairlong/simulator.hpp"

// Persistence: CSV cohorts/datasets (17 significant digits) and JSON
// checkpoints with hex-float values for bit-exact round trips. All files
// are written via a temp file plus rename.

namespace fairlong {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// a required upstream artifact (checkpoint, dataset) does not exist
struct PrereqError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace io {

inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

inline double parse_hex(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw IoError("checkpoint: unparsable value '" + s + "'");
    return v;
}

inline void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        out << content;
        if (!out.good()) throw IoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- CSV: header id,t,s,x0..x{d-1},y; one row per (individual, step) ------

inline std::string dataset_csv(const TimeSeriesDataset& ds) {
    std::ostringstream out;
    out << "id,t,s";
    for (std::size_t q = 0; q < ds.d; ++q) out << ",x" << q;
    out << ",y\n";
    for (std::size_t i = 0; i < ds.n; ++i)
        for (std::size_t t = 0; t < ds.horizon; ++t) {
            out << i << ',' << (t + 1) << ',' << ds.s[i];
            for (std::size_t q = 0; q < ds.d; ++q) out << ',' << fmt_g17(ds.xat(i, t, q));
            out << ',' << ds.yat(i, t) << '\n';
        }
    return out.str();
}

inline void save_dataset_csv(const TimeSeriesDataset& ds, const std::string& path) {
    atomic_write(path, dataset_csv(ds));
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::size_t parse_header(const std::string& line, std::size_t lineno) {
    auto fields = split_csv_line(line);
    if (fields.size() < 5 || fields[0] != "id" || fields[1] != "t" || fields[2] != "s" ||
        fields.back() != "y")
        throw IoError("csv line " + std::to_string(lineno) + ": bad header, expected id,t,s,x*,y");
    const std::size_t d = fields.size() - 4;
    for (std::size_t q = 0; q < d; ++q)
        if (fields[3 + q] != "x" + std::to_string(q))
            throw IoError("csv line " + std::to_string(lineno) + ": bad feature column '" +
                          fields[3 + q] + "'");
    return d;
}

struct CsvRow {
    std::size_t id = 0, t = 0;
    int s = 0, y = 0;
    std::vector<double> x;
};

inline CsvRow parse_row(const std::string& line, std::size_t d, std::size_t lineno) {
    auto fields = split_csv_line(line);
    if (fields.size() != d + 4)
        throw IoError("csv line " + std::to_string(lineno) + ": expected " +
                      std::to_string(d + 4) + " fields, got " + std::to_string(fields.size()));
    CsvRow row;
    try {
        row.id = std::stoull(fields[0]);
        row.t = std::stoull(fields[1]);
        row.s = std::stoi(fields[2]);
        row.x.resize(d);
        for (std::size_t q = 0; q < d; ++q) {
            std::size_t used = 0;
            row.x[q] = std::stod(fields[3 + q], &used);
            if (used != fields[3 + q].size()) throw std::invalid_argument(fields[3 + q]);
        }
        row.y = std::stoi(fields[3 + d]);
    } catch (const std::exception&) {
        throw IoError("csv line " + std::to_string(lineno) + ": malformed row");
    }
    if (row.s != 0 && row.s != 1)
        throw IoError("csv line " + std::to_string(lineno) + ": S must be 0 or 1, got " +
                      fields[2]);
    if (row.y != 0 && row.y != 1)
        throw IoError("csv line " + std::to_string(lineno) + ": Y must be 0 or 1, got " +
                      fields[3 + d]);
    return row;
}
}  // namespace detail

inline TimeSeriesDataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw IoError("csv: empty file " + path);
    const std::size_t d = detail::parse_header(line, lineno);

    std::vector<detail::CsvRow> rows;
    std::size_t max_id = 0, max_t = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto row = detail::parse_row(line, d, lineno);
        if (row.t < 1) throw IoError("csv line " + std::to_string(lineno) + ": t must be >= 1");
        max_id = std::max(max_id, row.id);
        max_t = std::max(max_t, row.t);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IoError("csv: no data rows in " + path);

    TimeSeriesDataset ds;
    ds.n = max_id + 1;
    ds.d = d;
    ds.horizon = max_t;
    ds.s.assign(ds.n, 0);
    ds.x.assign(ds.n * ds.horizon * d, 0.0);
    ds.y.assign(ds.n * ds.horizon, 0);
    std::vector<char> seen(ds.n * ds.horizon, 0);
    for (const auto& row : rows) {
        const std::size_t cell = row.id * ds.horizon + (row.t - 1);
        if (seen[cell]) throw IoError("csv: duplicate (id,t) = (" + std::to_string(row.id) + "," +
                                      std::to_string(row.t) + ")");
        seen[cell] = 1;
        ds.s[row.id] = row.s;
        for (std::size_t q = 0; q < d; ++q) ds.xat(row.id, row.t - 1, q) = row.x[q];
        ds.yat(row.id, row.t - 1) = row.y;
    }
    for (char c : seen)
        if (!c) throw IoError("csv: missing (id,t) rows, expected a full grid");
    ds.validate();
    return ds;
}

inline Cohort load_initial_cohort_csv(const std::string& path) {
    TimeSeriesDataset ds = load_dataset_csv(path);
    if (ds.horizon != 1)
        throw IoError("cohort csv must contain only t=1 rows, found horizon " +
                      std::to_string(ds.horizon));
    Cohort c;
    c.n = ds.n;
    c.d = ds.d;
    c.s = ds.s;
    c.x1 = ds.step_features(0);
    c.y1 = ds.y;
    c.validate();
    return c;
}

inline void save_cohort_csv(const Cohort& c, const std::string& path) {
    TimeSeriesDataset ds;
    ds.n = c.n;
    ds.d = c.d;
    ds.horizon = 1;
    ds.s = c.s;
    ds.x = c.x1;
    ds.y = c.y1.empty() ? std::vector<int>(c.n, 0) : c.y1;
    save_dataset_csv(ds, path);
}

// ---- checkpoints -----------------------------------------------------------

inline nlohmann::json params_to_json(const NamedParams& params) {
    nlohmann::json names = nlohmann::json::array();
    nlohmann::json shapes = nlohmann::json::array();
    nlohmann::json values = nlohmann::json::array();
    for (const auto& [name, p] : params) {
        names.push_back(name);
        shapes.push_back({p->rows, p->cols});
        nlohmann::json vals = nlohmann::json::array();
        for (double v : p->value) vals.push_back(fmt_hex(v));
        values.push_back(std::move(vals));
    }
    return {{"names", std::move(names)}, {"shapes", std::move(shapes)},
            {"values", std::move(values)}};
}

inline void params_from_json(const nlohmann::json& j, const NamedParams& params) {
    const auto& names = j.at("names");
    const auto& shapes = j.at("shapes");
    const auto& values = j.at("values");
    if (names.size() != params.size())
        throw IoError("checkpoint: expected " + std::to_string(params.size()) +
                      " parameter tensors, found " + std::to_string(names.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, p] = params[i];
        if (names[i].get<std::string>() != name)
            throw IoError("checkpoint: parameter '" + names[i].get<std::string>() +
                          "' where '" + name + "' expected");
        if (shapes[i][0].get<std::size_t>() != p->rows ||
            shapes[i][1].get<std::size_t>() != p->cols)
            throw IoError("checkpoint: shape mismatch for '" + name + "'");
        const auto& vals = values[i];
        if (vals.size() != p->size()) throw IoError("checkpoint: value count mismatch");
        for (std::size_t q = 0; q < p->size(); ++q)
            p->value[q] = parse_hex(vals[q].get<std::string>());
    }
}

struct CheckpointMeta {
    std::string config_fingerprint;
    std::string seed_lineage;
};

inline void save_checkpoint(const std::string& kind, NamedParams params,
                            const CheckpointMeta& meta, const std::string& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json j = params_to_json(params);
    j["kind"] = kind;
    j["config_fingerprint"] = meta.config_fingerprint;
    j["seed_lineage"] = meta.seed_lineage;
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    atomic_write(path, j.dump(2) + "\n");
}

inline nlohmann::json load_checkpoint_json(const std::string& path, const std::string& kind) {
    if (!std::filesystem::exists(path))
        throw PrereqError("missing checkpoint: " + path + " (kind " + kind + ")");
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    if (j.at("kind").get<std::string>() != kind)
        throw IoError("checkpoint " + path + " has kind '" + j.at("kind").get<std::string>() +
                      "', expected '" + kind + "'");
    return j;
}

inline void save_classifier(MlpClassifierParams& m, const std::string& kind,
                            const CheckpointMeta& meta, const std::string& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json e = extra;
    e["d"] = m.d;
    e["hidden"] = {m.w1.cols, m.w2.cols};
    save_checkpoint(kind, m.params(), meta, path, e);
}

inline MlpClassifierParams load_classifier(const std::string& path,
                                           const std::string& kind = "classifier",
                                           nlohmann::json* meta_out = nullptr) {
    nlohmann::json j = load_checkpoint_json(path, kind);
    MlpClassifierParams m(j.at("d").get<std::size_t>(), j.at("hidden")[0].get<std::size_t>(),
                          j.at("hidden")[1].get<std::size_t>());
    params_from_json(j, m.params());
    if (meta_out) *meta_out = j;
    return m;
}

inline void save_ground_truth(GroundTruthModel& gt, const CheckpointMeta& meta,
                              const std::string& path) {
    save_classifier(gt.classifier, "ground_truth", meta, path,
                    {{"epsilon", fmt_hex(gt.epsilon)}});
}

inline GroundTruthModel load_ground_truth(const std::string& path) {
    nlohmann::json meta;
    GroundTruthModel gt;
    gt.classifier = load_classifier(path, "ground_truth", &meta);
    gt.epsilon = parse_hex(meta.at("epsilon").get<std::string>());
    return gt;
}

inline void save_generator(GeneratorParams& g, const CheckpointMeta& meta,
                           const std::string& path) {
    save_checkpoint("generator", g.params(), meta, path,
                    {{"d", g.d}, {"dim_z", g.dim_z}, {"hidden", g.hidden}});
}

inline GeneratorParams load_generator(const std::string& path) {
    nlohmann::json j = load_checkpoint_json(path, "generator");
    GeneratorParams g(j.at("d").get<std::size_t>(), j.at("dim_z").get<std::size_t>(),
                      j.at("hidden").get<std::size_t>());
    params_from_json(j, g.params());
    return g;
}

inline void save_discriminator(DiscriminatorParams& dsc, const CheckpointMeta& meta,
                               const std::string& path) {
    save_checkpoint("discriminator", dsc.params(), meta, path,
                    {{"d", dsc.d}, {"hidden", dsc.hidden}});
}

inline DiscriminatorParams load_discriminator(const std::string& path) {
    nlohmann::json j = load_checkpoint_json(path, "discriminator");
    DiscriminatorParams dsc(j.at("d").get<std::size_t>(), j.at("hidden").get<std::size_t>());
    params_from_json(j, dsc.params());
    return dsc;
}

}  // namespace io
}  // namespace fairlong
