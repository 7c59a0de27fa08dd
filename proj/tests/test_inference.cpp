#include "doctest.h"
#include "helpers.hpp"

#include "mfscm/error.hpp"
#include "mfscm/inference.hpp"
#include "mfscm/simlab.hpp"

#include <algorithm>

using namespace mfscm;
using doctest::Approx;

namespace {

struct Case {
    MixedPanel panel;
    FitResult fit;
    EffectSeries effects;
};

Case sim_case(std::uint64_t rep, int T0 = 60, int T1 = 20, double shift = 0.0) {
    DgpConfig d;
    d.seed = 77;
    SimPanel sp = gen_panel(d, draw_oracle(d), T0, T1, rep);
    for (int t = T0 + 1; t <= T0 + T1; ++t) sp.panel.treated.values[t - 1] += shift;
    Case c{sp.panel, fit(sp.panel, sim_estimation(d, Variant::MfScm)), {}};
    c.effects = effects(c.fit, c.panel);
    return c;
}

BootstrapConfig boot(int n, std::uint64_t seed = 5) {
    BootstrapConfig b;
    b.n_boot = n;
    b.seed = seed;
    b.block_rule = BlockRule::floor_pow_with_min(0.5, 10);
    return b;
}

}  // namespace

TEST_CASE("sigma_v_hat examples") {
    EffectSeries e;
    e.effects = {1.5, 1.5, 1.5};
    e.ate = 1.5;
    CHECK(sigma_v_hat(e) == 0.0);
    e.effects = {0.0, 2.0};
    e.ate = 1.0;
    CHECK(sigma_v_hat(e) == Approx(1.0));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z(0.0, 2.0);
    e.effects.clear();
    for (int i = 0; i < 10000; ++i) e.effects.push_back(z(rng));
    e.ate = 0.0;
    for (double v : e.effects) e.ate += v / 10000.0;
    double ss = 0.0;
    for (double v : e.effects) ss += (v - e.ate) * (v - e.ate);
    CHECK(sigma_v_hat(e) == Approx(ss / 10000.0).epsilon(1e-12));
    // sampling sd of the variance estimate is about 0.057 here
    CHECK(std::abs(sigma_v_hat(e) - 4.0) < 0.25);
    e.effects = {1.0};
    CHECK_THROWS_AS(sigma_v_hat(e), SampleSizeError);
}

TEST_CASE("block rules") {
    CHECK(BlockRule::pow(0.8).block_length(40) == 19);
    CHECK(BlockRule::floor_pow_with_min(0.5, 10).block_length(40) == 10);
    CHECK(BlockRule::floor_pow_with_min(0.5, 10).block_length(640) == 25);
    CHECK(BlockRule::fixed(7).block_length(40) == 7);
    CHECK_THROWS_AS((void)BlockRule::fixed(40).block_length(40), ConfigError);
    CHECK_THROWS_AS((void)BlockRule::fixed(1).block_length(40), ConfigError);
    CHECK_THROWS_AS((void)BlockRule::pow(1.2).block_length(40), ConfigError);
    CHECK(BlockRule::parse("minpow:0.5:10").block_length(400) == 20);
    CHECK(BlockRule::parse("fixed:12").length == 12);
    CHECK(BlockRule::parse("pow:0.8").exponent == 0.8);
    CHECK_THROWS_AS(BlockRule::parse("pow"), ConfigError);
    CHECK_THROWS_AS(BlockRule::parse("fixed:2.5"), ConfigError);
    CHECK_THROWS_AS(BlockRule::parse("cubic:3"), ConfigError);
    CHECK(BlockRule::parse(BlockRule::floor_pow_with_min(0.5, 10).to_string()).length == 10);
}

TEST_CASE("bootstrap config validation") {
    BootstrapConfig b;
    b.level = 1.5;
    try {
        b.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()) == "level must lie in (0,1)");
    }
    b.level = 0.9;
    b.n_boot = 0;
    CHECK_THROWS_AS(b.validate(), ConfigError);
}

TEST_CASE("percentile interval formula") {
    std::vector<double> s;
    for (int i = 1; i <= 100; ++i) s.push_back(i);
    double lo = 0, hi = 0;
    percentile_interval(s, 10.0, 4, 0.90, lo, hi);
    // ceil(0.95 * 100) = 95, ceil(0.05 * 100) = 5.
    CHECK(lo == Approx(10.0 - 95.0 / 2));
    CHECK(hi == Approx(10.0 - 5.0 / 2));
}

TEST_CASE("constant donors collapse the interval") {
    MixedPanel p;
    p.T0 = 40;
    p.T1 = 10;
    p.Q = 0;
    const std::vector<double> c(50, 5.0);
    for (int j = 0; j < 3; ++j)
        p.donors.push_back(testutil::same_unit("d" + std::to_string(j), c, Eigen::MatrixXd(0, 50)));
    p.treated = testutil::same_unit("tr", c, Eigen::MatrixXd(0, 50));
    const FitResult f = fit(p);
    const EffectSeries e = effects(f, p);
    const CiResult ci = block_bootstrap_ci(p, f, e, boot(200));
    CHECK(ci.sigma_v_hat == 0.0);
    for (double v : ci.boot_stats) CHECK(std::abs(v) < 1e-12);
    CHECK(ci.ci_lower == Approx(e.ate));
    CHECK(ci.ci_upper == Approx(e.ate));
}

TEST_CASE("bootstrap determinism, worker invariance and nesting") {
    const Case c = sim_case(1);
    BootstrapConfig b = boot(400);
    const CiResult a = block_bootstrap_ci(c.panel, c.fit, c.effects, b);
    const CiResult again = block_bootstrap_ci(c.panel, c.fit, c.effects, b);
    b.workers = 3;
    const CiResult par = block_bootstrap_ci(c.panel, c.fit, c.effects, b);
    CHECK(a.boot_stats == again.boot_stats);
    CHECK(a.boot_stats == par.boot_stats);
    CHECK(a.ci_lower == par.ci_lower);
    CHECK(a.ci_upper == par.ci_upper);
    CHECK(std::is_sorted(a.boot_stats.begin(), a.boot_stats.end()));
    CHECK(a.ci_lower <= a.ci_upper);
    CHECK(a.sigma_v_hat >= 0.0);
    CHECK(a.block_length == 10);

    const auto levels = block_bootstrap_ci_levels(c.panel, c.fit, c.effects, boot(400),
                                                  {0.90, 0.95, 0.99});
    CHECK(levels[0].ci_lower >= levels[1].ci_lower);
    CHECK(levels[1].ci_lower >= levels[2].ci_lower);
    CHECK(levels[0].ci_upper <= levels[1].ci_upper);
    CHECK(levels[1].ci_upper <= levels[2].ci_upper);
    CHECK(levels[0].ci_lower == a.ci_lower);

    const CiResult other = block_bootstrap_ci(c.panel, c.fit, c.effects, boot(400, 6));
    CHECK(other.boot_stats != a.boot_stats);
}

TEST_CASE("effect additivity of the interval") {
    const Case base = sim_case(2);
    const Case shifted = sim_case(2, 60, 20, 1.75);
    CHECK(shifted.effects.ate - base.effects.ate == Approx(1.75).epsilon(1e-12));
    const CiResult a = block_bootstrap_ci(base.panel, base.fit, base.effects, boot(300));
    const CiResult b = block_bootstrap_ci(shifted.panel, shifted.fit, shifted.effects, boot(300));
    CHECK(b.ci_lower - a.ci_lower == Approx(1.75).epsilon(1e-10));
    CHECK(b.ci_upper - a.ci_upper == Approx(1.75).epsilon(1e-10));
}

TEST_CASE("doubling N keeps the interval within Monte Carlo error") {
    const Case c = sim_case(3);
    const CiResult a = block_bootstrap_ci(c.panel, c.fit, c.effects, boot(1000));
    const CiResult b = block_bootstrap_ci(c.panel, c.fit, c.effects, boot(2000));
    const auto& s = a.boot_stats;
    const double iqr = s[750] - s[250];
    const double tol = 3.0 * iqr / std::sqrt(1000.0);
    CHECK(std::abs(a.ci_lower - b.ci_lower) < tol);
    CHECK(std::abs(a.ci_upper - b.ci_upper) < tol);
}

TEST_CASE("bootstrap preconditions") {
    const Case c = sim_case(4, 48, 10);
    BootstrapConfig b = boot(10);
    b.block_rule = BlockRule::fixed(48);
    CHECK_THROWS_AS(block_bootstrap_ci(c.panel, c.fit, c.effects, b), ConfigError);
    b = boot(10);
    b.level = 0.0;
    CHECK_THROWS_AS(block_bootstrap_ci(c.panel, c.fit, c.effects, b), ConfigError);
}
