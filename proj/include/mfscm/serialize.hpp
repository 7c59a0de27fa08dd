#pragma once

#include "mfscm/estimator.hpp"
#include "mfscm/inference.hpp"
#include "mfscm/simlab.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>

namespace mfscm {

inline constexpr int kSchemaVersion = 1;

nlohmann::json to_json(const EstimationConfig& config);
nlohmann::json to_json(const FitResult& fit);
nlohmann::json to_json(const EffectSeries& effects);
nlohmann::json to_json(const CiResult& ci);
nlohmann::json to_json(const RiskExperimentResult& r);
nlohmann::json to_json(const CoverageExperimentResult& r);

/// `t,effect` rows.
std::string effects_csv(const EffectSeries& effects);
/// One sorted bootstrap statistic per row.
std::string boot_stats_csv(const CiResult& ci);
/// T1 blocks, T0 rows, coverage/length column pair per level.
std::string coverage_table_csv(const CoverageExperimentResult& r);
/// `T0,variant,ratio,se` rows for plotting.
std::string risk_plot_csv(const RiskExperimentResult& r);

/// Writes via a temporary file in the same directory and renames it into
/// place, so readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, const std::string& content);

}  // namespace mfscm
