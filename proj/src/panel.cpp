#include "mfscm/panel.hpp"

#include "mfscm/error.hpp"
#include "text_io.hpp"

#include "mfscm/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mfscm {

namespace fs = std::filesystem;
using nlohmann::json;

FrequencyClass FrequencyClass::lower(int m_low, LowFreqMode mode, int offset) {
    FrequencyClass f;
    f.kind = FrequencyKind::Lower;
    f.ratio = m_low;
    f.mode = mode;
    f.offset = mode == LowFreqMode::PointSample ? offset : 0;
    return f;
}

FrequencyClass FrequencyClass::higher(int m) {
    FrequencyClass f;
    f.kind = FrequencyKind::Higher;
    f.ratio = m;
    return f;
}

std::vector<int> FrequencyClass::observation_times(int horizon) const {
    std::vector<int> times;
    if (kind != FrequencyKind::Lower || ratio < 1) return times;
    const int first = mode == LowFreqMode::Aggregate ? ratio : offset;
    if (first < 1) return times;
    for (int t = first; t <= horizon; t += ratio) times.push_back(t);
    return times;
}

int UnitSeries::horizon() const {
    switch (freq.kind) {
        case FrequencyKind::Same:
            return static_cast<int>(values.size());
        case FrequencyKind::Higher:
            return freq.ratio > 0 ? static_cast<int>(values.size()) / freq.ratio : 0;
        case FrequencyKind::Lower:
            return static_cast<int>(covariates.cols());
    }
    return 0;
}

double UnitSeries::high(int t, int k) const {
    return values[static_cast<std::size_t>((t - 1) * freq.ratio + (k - 1))];
}

std::array<std::size_t, 3> MixedPanel::group_sizes() const {
    std::array<std::size_t, 3> sizes{0, 0, 0};
    for (const auto& d : donors) {
        ++sizes[static_cast<std::size_t>(d.freq.kind)];
    }
    return sizes;
}

namespace {

void check_unit(const UnitSeries& u, int T, int Q, std::vector<Diagnostic>& out) {
    auto add = [&](std::string msg) { out.push_back({u.id, std::move(msg)}); };
    const auto& f = u.freq;
    if (f.is_lower() && f.ratio < 2) add("lower-frequency ratio must be >= 2");
    if (f.is_higher() && f.ratio < 2) add("higher-frequency ratio must be >= 2");
    if (f.is_lower() && f.mode == LowFreqMode::PointSample &&
        (f.offset < 1 || f.offset > f.ratio)) {
        add("point-sample offset must lie in 1..ratio");
    }

    if (f.is_lower()) {
        if (u.obs_times.size() != u.values.size()) {
            add("observation times and values differ in length");
        } else if (f.ratio >= 2) {
            const auto expected = f.observation_times(T);
            std::set<int> have(u.obs_times.begin(), u.obs_times.end());
            for (int t : expected) {
                if (!have.count(t)) add("missing value at t=" + std::to_string(t));
            }
            std::set<int> want(expected.begin(), expected.end());
            for (int t : u.obs_times) {
                if (!want.count(t)) add("unexpected observation at t=" + std::to_string(t));
            }
        }
    } else {
        const int h = u.horizon();
        if (h != T) {
            add("horizon " + std::to_string(h) + " does not match T0+T1=" + std::to_string(T));
        }
        if (f.is_higher() && f.ratio >= 1 &&
            u.values.size() != static_cast<std::size_t>(f.ratio) * static_cast<std::size_t>(T)) {
            add("high-frequency series must hold m*T values");
        }
    }
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        if (!std::isfinite(u.values[i])) {
            int t = 0;
            if (f.is_lower()) {
                t = i < u.obs_times.size() ? u.obs_times[i] : 0;
            } else {
                t = static_cast<int>(i) / std::max(1, f.ratio) + 1;
            }
            add("missing value at t=" + std::to_string(t));
        }
    }

    if (u.covariates.rows() != Q) {
        add("covariate count " + std::to_string(u.covariates.rows()) + " differs from Q=" +
            std::to_string(Q));
    }
    if (Q > 0 && u.covariates.cols() != T) {
        add("covariates must cover t=1.." + std::to_string(T));
    }
    for (Eigen::Index t = 0; t < u.covariates.cols(); ++t) {
        for (Eigen::Index q = 0; q < u.covariates.rows(); ++q) {
            if (!std::isfinite(u.covariates(q, t))) {
                add("missing covariate q=" + std::to_string(q + 1) + " at t=" +
                    std::to_string(t + 1));
            }
        }
    }
}

}  // namespace

std::vector<Diagnostic> validate_panel(const MixedPanel& panel) {
    std::vector<Diagnostic> out;
    const int T = panel.horizon();
    if (!panel.treated.freq.is_same()) {
        out.push_back({panel.treated.id, "treated must be baseline frequency"});
    }
    if (panel.T0 < 1) out.push_back({"", "T0 must be positive"});
    if (panel.T1 < 1) out.push_back({"", "post-treatment period empty"});
    if (panel.Q < 0) out.push_back({"", "Q must be non-negative"});
    if (panel.donors.empty()) out.push_back({"", "donor pool is empty"});

    std::set<std::string> ids{panel.treated.id};
    bool has_lower = false;
    for (const auto& d : panel.donors) {
        if (!ids.insert(d.id).second) out.push_back({d.id, "duplicate unit id"});
        has_lower = has_lower || d.freq.is_lower();
    }
    if (has_lower && panel.Q == 0) {
        out.push_back({"", "low-frequency donors require covariates (Q > 0)"});
    }

    check_unit(panel.treated, T, panel.Q, out);
    for (const auto& d : panel.donors) check_unit(d, T, panel.Q, out);
    return out;
}

void require_valid(const MixedPanel& panel) {
    const auto diags = validate_panel(panel);
    if (diags.empty()) return;
    std::ostringstream msg;
    msg << "invalid panel:";
    for (const auto& d : diags) {
        msg << "\n  " << (d.unit.empty() ? std::string("<panel>") : d.unit) << ": " << d.message;
    }
    throw ValidationError(msg.str());
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

template <typename T>
T required(const json& node, const char* key, const std::string& where) {
    if (!node.contains(key)) {
        throw ConfigError("manifest: missing key '" + where + key + "'");
    }
    try {
        return node.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("manifest: key '" + where + key + "' has the wrong type");
    }
}

template <typename T>
T optional(const json& node, const char* key, T fallback, const std::string& where) {
    if (!node.contains(key)) return fallback;
    try {
        return node.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("manifest: key '" + where + key + "' has the wrong type");
    }
}

FrequencyClass parse_frequency(const json& node, const std::string& where) {
    const auto tag = optional<std::string>(node, "frequency", "same", where);
    if (tag == "same") return FrequencyClass::same();
    if (tag == "higher") return FrequencyClass::higher(required<int>(node, "ratio", where));
    if (tag == "lower") {
        const auto mode_tag = optional<std::string>(node, "mode", "aggregate", where);
        LowFreqMode mode;
        if (mode_tag == "aggregate") {
            mode = LowFreqMode::Aggregate;
        } else if (mode_tag == "point_sample") {
            mode = LowFreqMode::PointSample;
        } else {
            throw ConfigError("manifest: unknown low-frequency mode '" + mode_tag + "' at '" +
                              where + "mode'");
        }
        const int ratio = required<int>(node, "ratio", where);
        const int offset =
            mode == LowFreqMode::PointSample ? required<int>(node, "offset", where) : 0;
        return FrequencyClass::lower(ratio, mode, offset);
    }
    throw ConfigError("manifest: unknown frequency tag '" + tag + "' at '" + where +
                      "frequency'");
}

Manifest::UnitEntry parse_unit(const json& node, const fs::path& base, const std::string& where,
                               int Q) {
    Manifest::UnitEntry e;
    e.id = required<std::string>(node, "id", where);
    e.freq = parse_frequency(node, where);
    e.outcomes = base / required<std::string>(node, "outcomes", where);
    if (Q > 0) {
        e.covariates = base / required<std::string>(node, "covariates", where);
    }
    return e;
}

json frequency_json(const FrequencyClass& f) {
    json j;
    switch (f.kind) {
        case FrequencyKind::Same:
            j["frequency"] = "same";
            break;
        case FrequencyKind::Higher:
            j["frequency"] = "higher";
            j["ratio"] = f.ratio;
            break;
        case FrequencyKind::Lower:
            j["frequency"] = "lower";
            j["ratio"] = f.ratio;
            j["mode"] = f.mode == LowFreqMode::Aggregate ? "aggregate" : "point_sample";
            if (f.mode == LowFreqMode::PointSample) j["offset"] = f.offset;
            break;
    }
    return j;
}

EstimationConfig parse_estimation(const json& node) {
    EstimationConfig c;
    const std::string w = "estimation.";
    c.lag_order = optional<int>(node, "P", c.lag_order, w);
    c.basis_degree = optional<int>(node, "L", c.basis_degree, w);
    c.nonneg_midas = optional<bool>(node, "nonneg_midas", c.nonneg_midas, w);
    const auto variant = optional<std::string>(node, "variant", to_string(c.variant), w);
    try {
        c.variant = parse_variant(variant.c_str());
    } catch (const ConfigError&) {
        throw ConfigError("manifest: unknown variant '" + variant + "' at 'estimation.variant'");
    }
    const auto pooling = optional<std::string>(node, "pooling", "per_unit", w);
    if (pooling == "per_unit") {
        c.pooling = ReconstructionPooling::PerUnit;
    } else if (pooling == "pooled") {
        c.pooling = ReconstructionPooling::Pooled;
    } else {
        throw ConfigError("manifest: unknown pooling '" + pooling + "' at 'estimation.pooling'");
    }
    if (node.contains("solver")) {
        const auto& s = node.at("solver");
        c.solver.tol = optional<double>(s, "tol", c.solver.tol, w + "solver.");
        c.solver.max_iter = optional<int>(s, "max_iter", c.solver.max_iter, w + "solver.");
    }
    if (node.contains("als")) {
        const auto& a = node.at("als");
        c.als.tol = optional<double>(a, "tol", c.als.tol, w + "als.");
        c.als.max_iter = optional<int>(a, "max_iter", c.als.max_iter, w + "als.");
        c.als.nonneg_weights =
            optional<bool>(a, "nonneg_weights", c.als.nonneg_weights, w + "als.");
    }
    if (c.lag_order < 0) throw ConfigError("estimation.P must be >= 0");
    if (c.basis_degree < 1) throw ConfigError("estimation.L must be >= 1");
    if (!(c.solver.tol > 0)) throw ConfigError("estimation.solver.tol must be positive");
    if (c.solver.max_iter < 1) throw ConfigError("estimation.solver.max_iter must be >= 1");
    if (!(c.als.tol > 0)) throw ConfigError("estimation.als.tol must be positive");
    if (c.als.max_iter < 1) throw ConfigError("estimation.als.max_iter must be >= 1");
    return c;
}

}  // namespace

json to_json(const EstimationConfig& c) {
    return json{{"P", c.lag_order},
                {"L", c.basis_degree},
                {"nonneg_midas", c.nonneg_midas},
                {"variant", to_string(c.variant)},
                {"pooling", c.pooling == ReconstructionPooling::PerUnit ? "per_unit" : "pooled"},
                {"solver", {{"tol", c.solver.tol}, {"max_iter", c.solver.max_iter}}},
                {"als",
                 {{"tol", c.als.tol},
                  {"max_iter", c.als.max_iter},
                  {"nonneg_weights", c.als.nonneg_weights}}}};
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest " + path.string());
    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    const fs::path base = path.parent_path();
    Manifest m;
    m.T0 = required<int>(root, "T0", "");
    m.T = optional<int>(root, "T", 0, "");
    m.Q = optional<int>(root, "Q", 0, "");
    if (m.Q < 0) throw ConfigError("manifest: key 'Q' must be >= 0");
    if (!root.contains("treated")) throw ConfigError("manifest: missing key 'treated'");
    m.treated = parse_unit(root.at("treated"), base, "treated.", m.Q);
    if (!root.contains("donors") || !root.at("donors").is_array()) {
        throw ConfigError("manifest: missing key 'donors'");
    }
    std::size_t i = 0;
    for (const auto& node : root.at("donors")) {
        m.donors.push_back(
            parse_unit(node, base, "donors[" + std::to_string(i++) + "].", m.Q));
    }
    if (root.contains("estimation")) m.estimation = parse_estimation(root.at("estimation"));
    return m;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

struct Row {
    int t;
    int k;  // 0 when empty
    double value;
    std::size_t line;
};

std::vector<Row> read_rows(const fs::path& path, const char* second_column) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<Row> rows;
    std::string line;
    std::size_t lineno = 0;
    const std::string expected_header = std::string("t,") + second_column + ",value";
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
            if (line != expected_header) {
                throw ParseError(path.string() + ":1: expected header '" + expected_header +
                                 "'");
            }
            continue;
        }
        if (line.empty()) continue;
        const auto fields = detail::split_csv(line);
        if (fields.size() != 3) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected 3 fields");
        }
        Row r{};
        r.line = lineno;
        if (!detail::parse_int(fields[0], r.t)) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad t");
        }
        if (fields[1].empty()) {
            r.k = 0;
        } else if (!detail::parse_int(fields[1], r.k) || r.k < 1) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad " +
                             second_column);
        }
        if (!detail::parse_double(fields[2], r.value)) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad value");
        }
        rows.push_back(r);
    }
    return rows;
}

void load_outcomes(UnitSeries& u, const fs::path& path, int T) {
    const auto rows = read_rows(path, "k");
    const auto& f = u.freq;
    auto fail = [&](const Row& r, const std::string& msg) {
        throw ParseError(path.string() + ":" + std::to_string(r.line) + ": " + msg);
    };
    if (f.is_higher()) {
        std::map<std::pair<int, int>, double> cells;
        for (const auto& r : rows) {
            if (r.k < 1 || r.k > f.ratio) fail(r, "k must lie in 1.." + std::to_string(f.ratio));
            if (r.t < 1 || r.t > T) fail(r, "t outside 1.." + std::to_string(T));
            if (!cells.emplace(std::make_pair(r.t, r.k), r.value).second) {
                fail(r, "duplicate (t,k)");
            }
        }
        std::vector<std::string> problems;
        u.values.assign(static_cast<std::size_t>(T) * f.ratio, 0.0);
        for (int t = 1; t <= T; ++t) {
            int have = 0;
            for (int k = 1; k <= f.ratio; ++k) {
                auto it = cells.find({t, k});
                if (it != cells.end()) {
                    ++have;
                    u.values[static_cast<std::size_t>((t - 1) * f.ratio + k - 1)] = it->second;
                }
            }
            if (have != f.ratio) {
                problems.push_back("period t=" + std::to_string(t) + " has " +
                                   std::to_string(have) + " of " + std::to_string(f.ratio) +
                                   " high-frequency observations");
            }
        }
        if (!problems.empty()) {
            throw ValidationError("unit " + u.id + ": " + problems.front());
        }
        return;
    }

    std::map<int, double> cells;
    for (const auto& r : rows) {
        if (r.k != 0) fail(r, "k must be empty for baseline or low-frequency units");
        if (r.t < 1 || r.t > T) fail(r, "t outside 1.." + std::to_string(T));
        if (!cells.emplace(r.t, r.value).second) fail(r, "duplicate t");
    }
    if (f.is_same()) {
        u.values.assign(static_cast<std::size_t>(T), 0.0);
        for (int t = 1; t <= T; ++t) {
            auto it = cells.find(t);
            if (it == cells.end()) {
                throw ValidationError("unit " + u.id + ": missing value at t=" +
                                      std::to_string(t));
            }
            u.values[static_cast<std::size_t>(t - 1)] = it->second;
        }
        return;
    }
    const auto expected = f.observation_times(T);
    for (int t : expected) {
        auto it = cells.find(t);
        if (it == cells.end()) {
            throw ValidationError("unit " + u.id + ": missing value at t=" + std::to_string(t));
        }
        u.obs_times.push_back(t);
        u.values.push_back(it->second);
    }
    if (cells.size() != expected.size()) {
        for (const auto& [t, v] : cells) {
            if (std::find(expected.begin(), expected.end(), t) == expected.end()) {
                throw ValidationError("unit " + u.id + ": unexpected observation at t=" +
                                      std::to_string(t));
            }
        }
    }
}

void load_covariates(UnitSeries& u, const fs::path& path, int T, int Q) {
    u.covariates = Eigen::MatrixXd::Zero(Q, T);
    if (Q == 0) return;
    const auto rows = read_rows(path, "q");
    std::vector<char> seen(static_cast<std::size_t>(Q) * T, 0);
    for (const auto& r : rows) {
        if (r.t < 1 || r.t > T || r.k < 1 || r.k > Q) {
            throw ParseError(path.string() + ":" + std::to_string(r.line) +
                             ": (t,q) outside 1..T x 1..Q");
        }
        auto& flag = seen[static_cast<std::size_t>((r.t - 1) * Q + r.k - 1)];
        if (flag) {
            throw ParseError(path.string() + ":" + std::to_string(r.line) + ": duplicate (t,q)");
        }
        flag = 1;
        u.covariates(r.k - 1, r.t - 1) = r.value;
    }
    for (int t = 1; t <= T; ++t) {
        for (int q = 1; q <= Q; ++q) {
            if (!seen[static_cast<std::size_t>((t - 1) * Q + q - 1)]) {
                throw ValidationError("unit " + u.id + ": missing covariate q=" +
                                      std::to_string(q) + " at t=" + std::to_string(t));
            }
        }
    }
}

int infer_horizon(const fs::path& treated_outcomes) {
    int T = 0;
    for (const auto& r : read_rows(treated_outcomes, "k")) T = std::max(T, r.t);
    return T;
}

}  // namespace

MixedPanel load_panel(const Manifest& manifest) {
    const int T = manifest.T > 0 ? manifest.T : infer_horizon(manifest.treated.outcomes);
    MixedPanel p;
    p.T0 = manifest.T0;
    p.T1 = T - manifest.T0;
    p.Q = manifest.Q;

    auto load_unit = [&](const Manifest::UnitEntry& e) {
        UnitSeries u;
        u.id = e.id;
        u.freq = e.freq;
        load_outcomes(u, e.outcomes, T);
        load_covariates(u, e.covariates, T, manifest.Q);
        return u;
    };
    p.treated = load_unit(manifest.treated);
    for (const auto& e : manifest.donors) {
        p.donors.push_back(load_unit(e));
    }
    require_valid(p);
    return p;
}

MixedPanel load_panel(const fs::path& manifest_path) {
    return load_panel(read_manifest(manifest_path));
}

// ---------------------------------------------------------------------------
// Writing

namespace {

void write_outcomes(const UnitSeries& u, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "t,k,value\n";
    if (u.freq.is_higher()) {
        const int T = u.horizon();
        for (int t = 1; t <= T; ++t) {
            for (int k = 1; k <= u.freq.ratio; ++k) {
                out << t << ',' << k << ',' << detail::format_double(u.high(t, k)) << '\n';
            }
        }
    } else if (u.freq.is_lower()) {
        for (std::size_t i = 0; i < u.values.size(); ++i) {
            out << u.obs_times[i] << ",," << detail::format_double(u.values[i]) << '\n';
        }
    } else {
        for (std::size_t i = 0; i < u.values.size(); ++i) {
            out << (i + 1) << ",," << detail::format_double(u.values[i]) << '\n';
        }
    }
}

void write_covariates(const UnitSeries& u, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "t,q,value\n";
    for (Eigen::Index t = 0; t < u.covariates.cols(); ++t) {
        for (Eigen::Index q = 0; q < u.covariates.rows(); ++q) {
            out << (t + 1) << ',' << (q + 1) << ',' << detail::format_double(u.covariates(q, t))
                << '\n';
        }
    }
}

}  // namespace

void write_panel(const MixedPanel& panel, const fs::path& dir, const EstimationConfig& estimation) {
    fs::create_directories(dir);
    json root;
    root["schema_version"] = 1;
    root["T0"] = panel.T0;
    root["T"] = panel.horizon();
    root["Q"] = panel.Q;

    auto emit = [&](const UnitSeries& u, std::size_t index) {
        const std::string stem = "unit" + std::to_string(index);
        json j = frequency_json(u.freq);
        j["id"] = u.id;
        j["outcomes"] = stem + "_y.csv";
        write_outcomes(u, dir / (stem + "_y.csv"));
        if (panel.Q > 0) {
            j["covariates"] = stem + "_x.csv";
            write_covariates(u, dir / (stem + "_x.csv"));
        }
        return j;
    };
    root["treated"] = emit(panel.treated, 0);
    root["donors"] = json::array();
    for (std::size_t i = 0; i < panel.donors.size(); ++i) {
        root["donors"].push_back(emit(panel.donors[i], i + 1));
    }
    root["estimation"] = to_json(estimation);
    std::ofstream out(dir / "manifest.json");
    out << root.dump(2) << '\n';
}

MixedPanel truncate_panel(const MixedPanel& panel, int horizon, int new_T0) {
    if (horizon > panel.horizon() || horizon < 1) {
        throw DomainError("truncation horizon outside 1..T");
    }
    if (new_T0 < 1 || new_T0 >= horizon) {
        throw DomainError("truncated split point must satisfy 1 <= T0 < horizon");
    }
    auto cut = [&](const UnitSeries& u) {
        UnitSeries v;
        v.id = u.id;
        v.freq = u.freq;
        v.covariates = u.covariates.leftCols(std::min<Eigen::Index>(horizon, u.covariates.cols()));
        if (u.freq.is_lower()) {
            for (std::size_t i = 0; i < u.obs_times.size(); ++i) {
                if (u.obs_times[i] <= horizon) {
                    v.obs_times.push_back(u.obs_times[i]);
                    v.values.push_back(u.values[i]);
                }
            }
        } else {
            const std::size_t n = static_cast<std::size_t>(horizon) * u.freq.ratio;
            v.values.assign(u.values.begin(), u.values.begin() + static_cast<std::ptrdiff_t>(n));
        }
        return v;
    };
    MixedPanel out;
    out.treated = cut(panel.treated);
    for (const auto& d : panel.donors) out.donors.push_back(cut(d));
    out.T0 = new_T0;
    out.T1 = horizon - new_T0;
    out.Q = panel.Q;
    return out;
}

const char* to_string(Variant v) noexcept {
    switch (v) {
        case Variant::MfScm:
            return "mfscm";
        case Variant::NoMidas:
            return "no-midas";
        case Variant::BaselineOnly:
            return "baseline-only";
    }
    return "?";
}

Variant parse_variant(const char* name) {
    const std::string s(name);
    if (s == "mfscm") return Variant::MfScm;
    if (s == "no-midas") return Variant::NoMidas;
    if (s == "baseline-only") return Variant::BaselineOnly;
    throw ConfigError("unknown variant '" + s + "'");
}

}  // namespace mfscm
