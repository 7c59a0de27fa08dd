#include "mfscm/inference.hpp"

#include "mfscm/error.hpp"
#include "mfscm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace mfscm {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr std::uint64_t kBootDomain = 0xb0075ULL;

double parse_number(const std::string& s, const std::string& what) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw ConfigError("block-rule: bad " + what + " '" + s + "'");
    return v;
}

int order_index(double q, int n) {
    const int i = static_cast<int>(std::ceil(q * n - 1e-9));
    return std::clamp(i, 1, n);
}

}  // namespace

BlockRule BlockRule::parse(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    if (parts.size() == 2 && parts[0] == "pow") return pow(parse_number(parts[1], "exponent"));
    if (parts.size() == 2 && parts[0] == "fixed") {
        const double m = parse_number(parts[1], "length");
        if (m != std::floor(m)) throw ConfigError("block-rule: length must be an integer");
        return fixed(static_cast<int>(m));
    }
    if (parts.size() == 3 && parts[0] == "minpow") {
        const double mn = parse_number(parts[2], "minimum");
        if (mn != std::floor(mn)) throw ConfigError("block-rule: minimum must be an integer");
        return floor_pow_with_min(parse_number(parts[1], "exponent"), static_cast<int>(mn));
    }
    throw ConfigError("block-rule must be pow:A, fixed:M or minpow:A:MIN (got '" + text + "')");
}

int BlockRule::block_length(int T0) const {
    int m = 0;
    switch (kind) {
        case Kind::Pow:
            if (!(exponent > 0.0 && exponent < 1.0))
                throw ConfigError("block-rule exponent must lie in (0,1)");
            m = static_cast<int>(std::floor(std::pow(static_cast<double>(T0), exponent)));
            break;
        case Kind::Fixed:
            m = length;
            break;
        case Kind::FloorPowWithMin:
            if (!(exponent > 0.0 && exponent < 1.0))
                throw ConfigError("block-rule exponent must lie in (0,1)");
            m = std::max(length,
                         static_cast<int>(std::floor(std::pow(static_cast<double>(T0), exponent))));
            break;
    }
    if (m < 2) throw ConfigError("block-rule gives block length " + std::to_string(m) + " < 2");
    if (m >= T0)
        throw ConfigError("block-rule gives block length " + std::to_string(m) +
                          " >= T0=" + std::to_string(T0));
    return m;
}

std::string BlockRule::to_string() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::Pow: os << "pow:" << exponent; break;
        case Kind::Fixed: os << "fixed:" << length; break;
        case Kind::FloorPowWithMin: os << "minpow:" << exponent << ':' << length; break;
    }
    return os.str();
}

void BootstrapConfig::validate() const {
    if (n_boot < 1) throw ConfigError("n-boot must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0,1)");
}

double sigma_v_hat(const EffectSeries& effects) {
    const auto n = effects.effects.size();
    if (n < 2) throw SampleSizeError("sigma_v_hat needs T1 >= 2");
    double s = 0.0;
    for (double a : effects.effects) s += (a - effects.ate) * (a - effects.ate);
    return s / static_cast<double>(n);
}

void percentile_interval(const std::vector<double>& sorted_stats, double ate, int T1,
                         double level, double& lower, double& upper) {
    if (sorted_stats.empty()) throw DomainError("no bootstrap statistics");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0,1)");
    const int n = static_cast<int>(sorted_stats.size());
    const double alpha = 1.0 - level;
    const double scale = 1.0 / std::sqrt(static_cast<double>(T1));
    const double hi = sorted_stats[static_cast<std::size_t>(order_index(1.0 - alpha / 2.0, n) - 1)];
    const double lo = sorted_stats[static_cast<std::size_t>(order_index(alpha / 2.0, n) - 1)];
    lower = ate - scale * hi;
    upper = ate - scale * lo;
}

std::vector<CiResult> block_bootstrap_ci_levels(const MixedPanel& panel, const FitResult& fit,
                                                const EffectSeries& effects,
                                                const BootstrapConfig& config,
                                                const std::vector<double>& levels) {
    config.validate();
    for (double l : levels)
        if (!(l > 0.0 && l < 1.0)) throw ConfigError("level must lie in (0,1)");
    const int T0 = panel.T0;
    const int T1 = panel.T1;
    if (fit.T0 != T0) throw DomainError("fit was not produced from this panel (T0 differs)");
    const int m = config.block_rule.block_length(T0);
    const double sv = sigma_v_hat(effects);

    // Donors that may receive weight under the fitted variant.
    std::vector<Index> cols;
    for (std::size_t j = 0; j < panel.donors.size(); ++j)
        if (fit.config.variant != Variant::BaselineOnly || panel.donors[j].freq.is_same())
            cols.push_back(static_cast<Index>(j));
    const MatrixXd pre_all = aligned_outcomes(fit, panel, 1, T0);
    const MatrixXd post_all = aligned_outcomes(fit, panel, T0 + 1, panel.horizon());
    const Index k = static_cast<Index>(cols.size());
    MatrixXd pre(T0, k);
    VectorXd post_mean(k), w_hat(k);
    for (Index c = 0; c < k; ++c) {
        pre.col(c) = pre_all.col(cols[static_cast<std::size_t>(c)]);
        post_mean(c) = post_all.col(cols[static_cast<std::size_t>(c)]).mean();
        w_hat(c) = fit.weights(cols[static_cast<std::size_t>(c)]);
    }
    VectorXd y1(T0);
    for (int t = 0; t < T0; ++t) y1(t) = panel.treated.values[static_cast<std::size_t>(t)];

    const double c1 = -std::sqrt(static_cast<double>(T1) / T0) * std::sqrt(static_cast<double>(m));
    const double c2 = 1.0 / std::sqrt(static_cast<double>(T1));
    const double sd = std::sqrt(sv);
    std::vector<double> stats(static_cast<std::size_t>(config.n_boot));
    parallel_for(stats.size(), config.workers, [&](std::size_t n) {
        auto rng = make_stream(config.seed, kBootDomain, n);
        std::uniform_int_distribution<int> start(0, T0 - m);
        const int b = start(rng);
        const JointSolution s =
            solve_simplex_ls(y1.segment(b, m), pre.middleRows(b, m), fit.config.solver, m);
        double vsum = 0.0;
        if (sd > 0.0) {
            std::normal_distribution<double> v(0.0, sd);
            for (int t = 0; t < T1; ++t) vsum += v(rng);
        }
        stats[n] = c1 * post_mean.dot(s.w - w_hat) + c2 * vsum;
    });
    std::sort(stats.begin(), stats.end());

    std::vector<CiResult> out;
    for (double level : levels) {
        CiResult r;
        r.ate = effects.ate;
        r.sigma_v_hat = sv;
        r.level = level;
        r.n_boot = config.n_boot;
        r.block_length = m;
        r.seed = config.seed;
        percentile_interval(stats, effects.ate, T1, level, r.ci_lower, r.ci_upper);
        r.boot_stats = stats;
        out.push_back(std::move(r));
    }
    return out;
}

CiResult block_bootstrap_ci(const MixedPanel& panel, const FitResult& fit,
                            const EffectSeries& effects, const BootstrapConfig& config) {
    return block_bootstrap_ci_levels(panel, fit, effects, config, {config.level}).front();
}

}  // namespace mfscm
