#pragma once

#include "mfscm/panel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace testutil {

inline Eigen::MatrixXd randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng);
    return m;
}

/// Visits every point of the step grid on the 3-simplex.
inline void simplex3_grid(double step, const std::function<void(const Eigen::Vector3d&)>& f) {
    const int n = static_cast<int>(std::lround(1.0 / step));
    for (int a = 0; a <= n; ++a)
        for (int b = 0; a + b <= n; ++b) f(Eigen::Vector3d(a, b, n - a - b) / n);
}

/// Grid minimum of a function on the 3-simplex with local refinement around
/// the best coarse point.
inline double simplex3_grid_min(const std::function<double(const Eigen::Vector3d&)>& f,
                                double step) {
    double best = std::numeric_limits<double>::infinity();
    simplex3_grid(step, [&](const Eigen::Vector3d& w) { best = std::min(best, f(w)); });
    return best;
}

inline mfscm::UnitSeries same_unit(const std::string& id, const std::vector<double>& y,
                                   const Eigen::MatrixXd& x) {
    mfscm::UnitSeries u;
    u.id = id;
    u.freq = mfscm::FrequencyClass::same();
    u.values = y;
    for (std::size_t t = 1; t <= y.size(); ++t) u.obs_times.push_back(static_cast<int>(t));
    u.covariates = x;
    return u;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("mfscm_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testutil
