#pragma once

#include "mfscm/config.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace mfscm {

enum class FrequencyKind { Same, Lower, Higher };

/// Interpretation of a low-frequency observation.
enum class LowFreqMode {
    Aggregate,    ///< weighted aggregate of the m~ baseline periods ending at t
    PointSample,  ///< the baseline value at a fixed within-cycle offset
};

/// Sampling frequency of a unit relative to the treated unit.
///
/// `ratio` is 1 for Same, m~ for Lower and m for Higher. For Lower units,
/// `mode` and `offset` (s* in 1..m~, point-sample only) say which baseline
/// periods carry an observation.
struct FrequencyClass {
    FrequencyKind kind = FrequencyKind::Same;
    int ratio = 1;
    LowFreqMode mode = LowFreqMode::Aggregate;
    int offset = 0;

    static FrequencyClass same() { return {}; }
    static FrequencyClass lower(int m_low, LowFreqMode mode = LowFreqMode::Aggregate,
                                int offset = 0);
    static FrequencyClass higher(int m);

    [[nodiscard]] bool is_same() const noexcept { return kind == FrequencyKind::Same; }
    [[nodiscard]] bool is_lower() const noexcept { return kind == FrequencyKind::Lower; }
    [[nodiscard]] bool is_higher() const noexcept { return kind == FrequencyKind::Higher; }

    /// Baseline periods (1-based) at which a Lower unit is observed, horizon T.
    [[nodiscard]] std::vector<int> observation_times(int horizon) const;
};

/// One unit's outcome and covariate history.
///
/// Storage by frequency class:
///   Same    values[t-1], t = 1..T
///   Lower   values[i] observed at obs_times[i]
///   Higher  values[(t-1)*m + (k-1)] = Y_{t-(k-1)/m}, k = 1 is the latest
///           sub-period of baseline period t
/// Covariates are Q x T at baseline frequency (column t-1).
struct UnitSeries {
    std::string id;
    FrequencyClass freq;
    std::vector<int> obs_times;
    std::vector<double> values;
    Eigen::MatrixXd covariates;

    [[nodiscard]] int horizon() const;
    [[nodiscard]] int covariate_count() const { return static_cast<int>(covariates.rows()); }
    [[nodiscard]] double high(int t, int k) const;
};

/// Treated unit plus donor pool and the pre/post split.
struct MixedPanel {
    UnitSeries treated;
    std::vector<UnitSeries> donors;
    int T0 = 0;
    int T1 = 0;
    int Q = 0;

    [[nodiscard]] int horizon() const noexcept { return T0 + T1; }
    [[nodiscard]] std::size_t donor_count() const noexcept { return donors.size(); }
    /// Donor counts per frequency class: {same, lower, higher}.
    [[nodiscard]] std::array<std::size_t, 3> group_sizes() const;
};

struct Diagnostic {
    std::string unit;  ///< empty for panel-level findings
    std::string message;
};

/// Returns one diagnostic per violated invariant; empty iff the panel is valid.
std::vector<Diagnostic> validate_panel(const MixedPanel& panel);

/// Throws ValidationError listing every diagnostic if the panel is invalid.
void require_valid(const MixedPanel& panel);

/// Contents of a manifest: where the unit files live plus estimation settings.
struct Manifest {
    struct UnitEntry {
        std::string id;
        FrequencyClass freq;
        std::filesystem::path outcomes;
        std::filesystem::path covariates;  ///< empty when Q == 0
    };
    UnitEntry treated;
    std::vector<UnitEntry> donors;
    int T0 = 0;
    int T = 0;  ///< 0: inferred from the treated outcome file
    int Q = 0;
    EstimationConfig estimation;
};

Manifest read_manifest(const std::filesystem::path& path);
MixedPanel load_panel(const Manifest& manifest);
MixedPanel load_panel(const std::filesystem::path& manifest_path);

/// Writes one outcome CSV per unit, one covariate CSV per unit (Q > 0) and
/// `manifest.json` into `dir`. Values are written in shortest round-trip
/// form, so load_panel reproduces the panel exactly.
void write_panel(const MixedPanel& panel, const std::filesystem::path& dir,
                 const EstimationConfig& estimation = {});

/// Restricts a panel to baseline periods 1..horizon with a new split point.
MixedPanel truncate_panel(const MixedPanel& panel, int horizon, int new_T0);

}  // namespace mfscm
