#include "mfscm/serialize.hpp"

#include "mfscm/error.hpp"
#include "text_io.hpp"

#include <fstream>
#include <sstream>
#include <unistd.h>

namespace mfscm {

using nlohmann::json;

namespace {

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

const char* status_name(SolveStatus s) {
    return s == SolveStatus::Converged ? "converged" : "max_iter";
}

json dgp_json(const DgpConfig& d) {
    const char* shape = d.shape.kind == MidasShape::Kind::ExpAlmon ? "exp_almon"
                        : d.shape.kind == MidasShape::Kind::Beta   ? "beta"
                                                                   : "front_loaded";
    return json{{"J", d.J},           {"Q", d.Q},
                {"P", d.P},           {"sigma", d.sigma},
                {"sigma_h", d.sigma_h}, {"sigma_u", d.sigma_u},
                {"m", d.m},           {"m_low", d.m_low},
                {"L", d.basis_degree},
                {"shape", {{"kind", shape}, {"zeta1", d.shape.zeta1}, {"zeta2", d.shape.zeta2}}},
                {"effect", d.effect}, {"redraw_phi", d.redraw_phi},
                {"seed", d.seed}};
}

}  // namespace

json to_json(const FitResult& f) {
    json weights = json::object();
    for (std::size_t j = 0; j < f.donor_ids.size(); ++j)
        weights[f.donor_ids[j]] = f.weights(static_cast<Eigen::Index>(j));
    json midas = json::object();
    for (const auto& [id, m] : f.midas)
        midas[id] = {{"m", m.m}, {"zeta", vec(m.zeta)}, {"weights", vec(m.weights)}};
    json recon = json::object();
    for (const auto& [id, r] : f.recon_models) {
        json beta = json::array();
        for (Eigen::Index p = 0; p < r.beta.rows(); ++p) beta.push_back(vec(r.beta.row(p).transpose()));
        recon[id] = {{"mode", r.mode == LowFreqMode::Aggregate ? "aggregate" : "point_sample"},
                     {"alpha", r.alpha},
                     {"beta", beta},
                     {"agg_weights", vec(r.agg_weights)},
                     {"observations", r.observations},
                     {"iterations", r.iterations},
                     {"converged", r.converged},
                     {"pooled", r.pooled},
                     {"backfilled", r.backfilled},
                     {"objective", r.objective},
                     {"r_squared", r.r_squared}};
    }
    json diags = json::array();
    for (const auto& d : f.diagnostics) diags.push_back({{"unit", d.unit}, {"message", d.message}});
    return json{{"schema_version", kSchemaVersion},
                {"T0", f.T0},
                {"weights", weights},
                {"midas", midas},
                {"recon_models", recon},
                {"pre_mse", f.pre_mse},
                {"objective", f.objective},
                {"kkt_residual", f.kkt_residual},
                {"iterations", f.iterations},
                {"status", status_name(f.status)},
                {"degenerate_units", f.degenerate_units},
                {"non_unique", f.non_unique},
                {"diagnostics", diags},
                {"estimation", to_json(f.config)}};
}

json to_json(const EffectSeries& e) {
    return json{{"schema_version", kSchemaVersion},
                {"t", e.times},
                {"observed", e.observed},
                {"counterfactual", e.counterfactual},
                {"effects", e.effects},
                {"ate", e.ate}};
}

json to_json(const CiResult& ci) {
    return json{{"schema_version", kSchemaVersion},
                {"ate", ci.ate},
                {"sigma_v_hat", ci.sigma_v_hat},
                {"ci_lower", ci.ci_lower},
                {"ci_upper", ci.ci_upper},
                {"level", ci.level},
                {"n_boot", ci.n_boot},
                {"block_length", ci.block_length},
                {"seed", ci.seed}};
}

json to_json(const RiskExperimentResult& r) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        json variants = json::array();
        for (std::size_t v = 0; v < c.variants.size(); ++v)
            variants.push_back({{"variant", to_string(c.variants[v])},
                                {"mean_ratio", c.mean_ratio[v]},
                                {"se", c.se_ratio[v]},
                                {"min_ratio", c.min_ratio[v]},
                                {"completed", c.completed[v]}});
        cells.push_back({{"T0", c.T0},
                         {"denominator", c.denominator},
                         {"variants", variants},
                         {"errors", c.errors},
                         {"pooled_fallbacks", c.pooled_fallbacks}});
    }
    return json{{"schema_version", kSchemaVersion},
                {"experiment", "risk_ratio"},
                {"dgp", dgp_json(r.dgp)},
                {"T1", r.T1},
                {"S", r.S},
                {"M", r.M},
                {"pooling", to_string(r.pooling)},
                {"cells", cells}};
}

json to_json(const CoverageExperimentResult& r) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        json levels = json::array();
        for (std::size_t l = 0; l < c.levels.size(); ++l)
            levels.push_back({{"level", c.levels[l]},
                              {"coverage", c.coverage[l]},
                              {"mean_length", c.mean_length[l]}});
        cells.push_back({{"T0", c.T0},
                         {"T1", c.T1},
                         {"block_length", c.block_length},
                         {"reps", c.reps},
                         {"failures", c.failures},
                         {"pooled_fallbacks", c.pooled_fallbacks},
                         {"levels", levels}});
    }
    return json{{"schema_version", kSchemaVersion},
                {"experiment", "coverage"},
                {"dgp", dgp_json(r.dgp)},
                {"n_boot", r.n_boot},
                {"block_rule", r.block_rule.to_string()},
                {"pooling", to_string(r.pooling)},
                {"cells", cells}};
}

std::string effects_csv(const EffectSeries& e) {
    std::ostringstream os;
    os << "t,effect\n";
    for (std::size_t i = 0; i < e.effects.size(); ++i)
        os << e.times[i] << ',' << detail::format_double(e.effects[i]) << '\n';
    return os.str();
}

std::string boot_stats_csv(const CiResult& ci) {
    std::ostringstream os;
    os << "n,stat\n";
    for (std::size_t i = 0; i < ci.boot_stats.size(); ++i)
        os << (i + 1) << ',' << detail::format_double(ci.boot_stats[i]) << '\n';
    return os.str();
}

std::string coverage_table_csv(const CoverageExperimentResult& r) {
    std::ostringstream os;
    os << "T1,T0";
    if (!r.cells.empty())
        for (double l : r.cells.front().levels)
            os << ",coverage_" << detail::format_double(l) << ",length_" << detail::format_double(l);
    os << '\n';
    for (const auto& c : r.cells) {
        os << c.T1 << ',' << c.T0;
        for (std::size_t l = 0; l < c.levels.size(); ++l)
            os << ',' << detail::format_double(c.coverage[l]) << ','
               << detail::format_double(c.mean_length[l]);
        os << '\n';
    }
    return os.str();
}

std::string risk_plot_csv(const RiskExperimentResult& r) {
    std::ostringstream os;
    os << "T0,variant,ratio,se\n";
    for (const auto& c : r.cells)
        for (std::size_t v = 0; v < c.variants.size(); ++v)
            os << c.T0 << ',' << to_string(c.variants[v]) << ','
               << detail::format_double(c.mean_ratio[v]) << ','
               << detail::format_double(c.se_ratio[v]) << '\n';
    return os.str();
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    const fs::path tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error("write failed for " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error("cannot rename into " + path.string());
    }
}

}  // namespace mfscm
