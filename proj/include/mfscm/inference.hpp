#pragma once

#include "mfscm/estimator.hpp"
#include "mfscm/panel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mfscm {

/// Block length as a function of T0.
struct BlockRule {
    enum class Kind { Pow, Fixed, FloorPowWithMin };
    Kind kind = Kind::Pow;
    double exponent = 0.8;  ///< Pow, FloorPowWithMin
    int length = 0;         ///< Fixed: m; FloorPowWithMin: lower bound

    static BlockRule pow(double a) { return {Kind::Pow, a, 0}; }
    static BlockRule fixed(int m) { return {Kind::Fixed, 0.0, m}; }
    static BlockRule floor_pow_with_min(double a, int min_m) {
        return {Kind::FloorPowWithMin, a, min_m};
    }
    /// Parses "pow:A", "fixed:M" or "minpow:A:MIN".
    static BlockRule parse(const std::string& text);

    /// Block length for T0; ConfigError unless 2 <= m < T0.
    [[nodiscard]] int block_length(int T0) const;
    [[nodiscard]] std::string to_string() const;
};

struct BootstrapConfig {
    int n_boot = 1000;
    BlockRule block_rule{};
    std::uint64_t seed = 1;
    double level = 0.90;  ///< confidence level 1 - alpha
    unsigned workers = 1;

    void validate() const;
};

struct CiResult {
    double ate = 0.0;
    double sigma_v_hat = 0.0;
    std::vector<double> boot_stats;  ///< sorted E*_n
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double level = 0.0;
    int n_boot = 0;
    int block_length = 0;
    std::uint64_t seed = 0;
};

/// Mean squared deviation of the per-period effects from the ATE.
double sigma_v_hat(const EffectSeries& effects);

/// Percentile interval at `level` from sorted bootstrap statistics.
void percentile_interval(const std::vector<double>& sorted_stats, double ate, int T1,
                         double level, double& lower, double& upper);

/// Block-subsampling bootstrap for the ATE.
CiResult block_bootstrap_ci(const MixedPanel& panel, const FitResult& fit,
                            const EffectSeries& effects, const BootstrapConfig& config);

/// Same bootstrap sample evaluated at several levels (nested intervals).
std::vector<CiResult> block_bootstrap_ci_levels(const MixedPanel& panel, const FitResult& fit,
                                                const EffectSeries& effects,
                                                const BootstrapConfig& config,
                                                const std::vector<double>& levels);

}  // namespace mfscm
