#include "doctest.h"
#include "helpers.hpp"

#include "mfscm/error.hpp"
#include "mfscm/freq_align.hpp"

using namespace mfscm;
using doctest::Approx;

namespace {

UnitSeries high_unit(int m, const std::vector<double>& values) {
    UnitSeries u;
    u.id = "h";
    u.freq = FrequencyClass::higher(m);
    u.values = values;
    const int T = static_cast<int>(values.size()) / m;
    for (int t = 1; t <= T; ++t) u.obs_times.push_back(t);
    u.covariates = Eigen::MatrixXd::Zero(0, T);
    return u;
}

// Latent Y_t = alpha + sum_p beta_p' X_{max(1,t-p)}.
std::vector<double> latent_path(const Eigen::MatrixXd& X, double alpha, const Eigen::MatrixXd& beta) {
    const int T = static_cast<int>(X.cols());
    std::vector<double> y(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        double v = alpha;
        for (Eigen::Index p = 0; p < beta.rows(); ++p)
            v += beta.row(p).dot(X.col(std::max<Eigen::Index>(1, t - p) - 1));
        y[static_cast<std::size_t>(t - 1)] = v;
    }
    return y;
}

UnitSeries aggregate_unit(const Eigen::MatrixXd& X, const std::vector<double>& y,
                          const Eigen::VectorXd& W) {
    const int ms = static_cast<int>(W.size());
    UnitSeries u;
    u.id = "low";
    u.freq = FrequencyClass::lower(ms);
    u.covariates = X;
    u.obs_times = u.freq.observation_times(static_cast<int>(X.cols()));
    for (int t : u.obs_times) {
        double acc = 0.0;
        for (int s = 1; s <= ms; ++s) acc += W(s - 1) * y[static_cast<std::size_t>(t - ms + s - 1)];
        u.values.push_back(acc);
    }
    return u;
}

}  // namespace

TEST_CASE("basis_eval known values") {
    CHECK(basis_eval(1, 0.7) == Approx(1.0));
    CHECK(basis_eval(2, 0.5) == Approx(0.0));
    CHECK(basis_eval(3, 0.0) == Approx(1.0));
    // Shifted Legendre of degree 3 at 1/4: 20x^3 - 30x^2 + 12x - 1.
    CHECK(basis_eval(4, 0.25) == Approx(20.0 / 64 - 30.0 / 16 + 3.0 - 1.0));
    CHECK_THROWS_AS(basis_eval(1, 1.5), DomainError);
    CHECK_THROWS_AS(basis_eval(0, 0.5), DomainError);
}

TEST_CASE("build_midas_weights") {
    const LagPolyBasis basis{3};
    auto w = build_midas_weights(Eigen::Vector3d(1.0 / 3, 0, 0), 3, basis);
    for (int k = 0; k < 3; ++k) CHECK(w.weights(k) == Approx(1.0 / 3));
    w = build_midas_weights(Eigen::Vector3d::Zero(), 3, basis);
    CHECK(w.weights.isZero());
    w = build_midas_weights(Eigen::Vector3d(1.0 / 3, 1.0 / 3, 0), 3, basis);
    CHECK(w.weights(0) == Approx(0.0));
    CHECK(w.weights(1) == Approx(2.0 / 9));
    CHECK(w.weights(2) == Approx(4.0 / 9));
    const auto u = uniform_midas_weights(4, LagPolyBasis{2});
    CHECK(u.weights.sum() == Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(build_midas_weights(Eigen::Vector2d(1, 0), 3, basis), DomainError);
}

TEST_CASE("align_high_freq") {
    const UnitSeries u = high_unit(3, {3, 6, 9, 1, 2, 3});
    MidasWeights w;
    w.m = 3;
    w.weights = Eigen::Vector3d::Constant(1.0 / 3);
    CHECK(align_high_freq(u, w)[0] == Approx(6.0));
    w.weights = Eigen::Vector3d(1, 0, 0);
    CHECK(align_high_freq(u, w)[0] == Approx(3.0));
    CHECK(align_high_freq(u, w)[1] == Approx(1.0));
    w.weights = Eigen::Vector3d(0, 2.0 / 9, 4.0 / 9);
    CHECK(align_high_freq(u, w)[1] == Approx(16.0 / 9));
    w.m = 4;
    w.weights = Eigen::Vector4d::Constant(0.25);
    CHECK_THROWS_AS(align_high_freq(u, w), DomainError);
}

TEST_CASE("point-sample reconstruction recovers a noiseless line") {
    std::mt19937_64 rng(3);
    const int T = 80;
    const Eigen::MatrixXd X = testutil::randn(1, T, rng);
    UnitSeries u;
    u.id = "ps";
    u.freq = FrequencyClass::lower(4, LowFreqMode::PointSample, 2);
    u.covariates = X;
    u.obs_times = u.freq.observation_times(T);
    for (int t : u.obs_times) u.values.push_back(2.0 + X(0, t - 1));
    REQUIRE(u.obs_times.size() == 20);
    const ReconstructionModel m = fit_low_freq_point_sample(u, 0);
    CHECK(m.alpha == Approx(2.0).epsilon(1e-8));
    CHECK(m.beta(0, 0) == Approx(1.0).epsilon(1e-8));
    CHECK(m.objective < 1e-20);
}

TEST_CASE("point-sample constant data and rank deficiency") {
    const int T = 40;
    UnitSeries u;
    u.id = "c";
    u.freq = FrequencyClass::lower(4, LowFreqMode::PointSample, 4);
    std::mt19937_64 rng(5);
    u.covariates = testutil::randn(1, T, rng);
    u.obs_times = u.freq.observation_times(T);
    u.values.assign(u.obs_times.size(), 7.5);
    const auto m = fit_low_freq_point_sample(u, 0);
    for (double v : reconstruct_baseline(m, u)) CHECK(v == Approx(7.5));

    Eigen::MatrixXd dup(2, T);
    dup.row(0) = u.covariates.row(0);
    dup.row(1) = u.covariates.row(0);
    u.covariates = dup;
    CHECK_THROWS_AS(fit_low_freq_point_sample(u, 0), IllPosedError);
}

TEST_CASE("ALS round trip with W = (0.1, 0.2, 0.3, 0.4)") {
    std::mt19937_64 rng(17);
    const int T = 400;
    const Eigen::MatrixXd X = testutil::randn(2, T, rng);
    Eigen::MatrixXd beta(2, 2);
    beta << 0.8, -0.5, 0.3, 0.6;
    const std::vector<double> y = latent_path(X, 1.5, beta);
    const Eigen::Vector4d W(0.1, 0.2, 0.3, 0.4);
    const UnitSeries u = aggregate_unit(X, y, W);

    AlsOptions opt;
    opt.max_iter = 500;
    const ReconstructionModel m = fit_low_freq_aggregate(u, 1, opt);
    for (int s = 0; s < 4; ++s) CHECK(std::abs(m.agg_weights(s) - W(s)) < 1e-4);
    CHECK(m.objective < 1e-10);
    const auto yhat = reconstruct_baseline(m, u);
    double worst = 0.0;
    for (int t = 0; t < T; ++t) worst = std::max(worst, std::abs(yhat[t] - y[t]));
    CHECK(worst < 1e-6);
    for (std::size_t i = 1; i < m.objective_trace.size(); ++i)
        CHECK(m.objective_trace[i] <= m.objective_trace[i - 1] * (1 + 1e-12) + 1e-300);
    CHECK(m.agg_weights.sum() == Approx(1.0).epsilon(1e-10));

    const auto again = reaggregate(m, u, yhat);
    REQUIRE(again.size() == u.values.size());
    for (std::size_t i = 0; i < again.size(); ++i) CHECK(std::abs(again[i] - u.values[i]) < 1e-6);
}

TEST_CASE("ALS objective is nonincreasing on noisy data") {
    std::mt19937_64 rng(29);
    const int T = 200;
    const Eigen::MatrixXd X = testutil::randn(3, T, rng);
    Eigen::MatrixXd beta = testutil::randn(2, 3, rng);
    std::vector<double> y = latent_path(X, 0.0, beta);
    std::normal_distribution<double> z(0.0, 1.0);
    for (double& v : y) v += z(rng);
    const UnitSeries u = aggregate_unit(X, y, Eigen::Vector4d::Constant(0.25));
    const auto m = fit_low_freq_aggregate(u, 1);
    REQUIRE(m.objective_trace.size() >= 3);
    for (std::size_t i = 1; i < m.objective_trace.size(); ++i)
        CHECK(m.objective_trace[i] <= m.objective_trace[i - 1] * (1 + 1e-12));
    CHECK(m.agg_weights.sum() == Approx(1.0).epsilon(1e-10));
}

TEST_CASE("uniform W is a fixed point on uniform-weight data") {
    std::mt19937_64 rng(31);
    const int T = 120;
    const Eigen::MatrixXd X = testutil::randn(2, T, rng);
    Eigen::MatrixXd beta(1, 2);
    beta << 1.0, -2.0;
    const UnitSeries u = aggregate_unit(X, latent_path(X, 0.5, beta), Eigen::Vector4d::Constant(0.25));
    const auto m = fit_low_freq_aggregate(u, 0);
    for (int s = 0; s < 4; ++s) CHECK(m.agg_weights(s) == Approx(0.25).epsilon(1e-10));
}

TEST_CASE("too few low-frequency observations") {
    std::mt19937_64 rng(37);
    const Eigen::MatrixXd X = testutil::randn(1, 4, rng);
    const UnitSeries u = aggregate_unit(X, latent_path(X, 0, Eigen::MatrixXd::Ones(1, 1)),
                                        Eigen::Vector4d::Constant(0.25));
    CHECK(u.values.size() == 1);
    CHECK_THROWS_AS(fit_low_freq_aggregate(u, 0), SampleSizeError);
}

TEST_CASE("reconstruct_baseline evaluates the linear model") {
    UnitSeries u;
    u.id = "r";
    u.freq = FrequencyClass::lower(4);
    u.covariates.resize(1, 8);
    for (int t = 1; t <= 8; ++t) u.covariates(0, t - 1) = t;
    ReconstructionModel m;
    m.unit_id = "r";
    m.alpha = 2.0;
    m.beta = Eigen::MatrixXd::Ones(1, 1);
    auto y = reconstruct_baseline(m, u);
    for (int t = 1; t <= 8; ++t) CHECK(y[t - 1] == Approx(2.0 + t));
    m.beta.setZero();
    y = reconstruct_baseline(m, u);
    for (double v : y) CHECK(v == Approx(2.0));
    m.unit_id = "other";
    CHECK_THROWS_AS(reconstruct_baseline(m, u), DomainError);
}
