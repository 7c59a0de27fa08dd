#pragma once

namespace mfscm {

/// Which donors and MIDAS freedom the weight problem uses.
enum class Variant {
    MfScm,         ///< full problem: all donors, dictionary MIDAS weights
    NoMidas,       ///< high-frequency donors aggregated with equal per-lag weights
    BaselineOnly,  ///< only same-frequency donors may receive weight
};

/// How latent baseline outcomes of low-frequency donors are reconstructed.
enum class ReconstructionPooling {
    PerUnit,  ///< one (alpha, beta, W) per donor
    Pooled,   ///< one shared model per (ratio, mode) group of donors
};

struct AlsOptions {
    double tol = 1e-8;  ///< relative objective decrease
    int max_iter = 200;
    bool nonneg_weights = false;  ///< add W_s >= 0 to the sum-to-one constraint
};

struct SolverOptions {
    double tol = 1e-10;  ///< KKT (gradient-mapping) residual
    int max_iter = 50000;
};

struct EstimationConfig {
    int lag_order = 1;     ///< P: covariate lags 0..P in the reconstruction model
    int basis_degree = 3;  ///< L: number of shifted-Legendre dictionary functions
    bool nonneg_midas = true;
    Variant variant = Variant::MfScm;
    ReconstructionPooling pooling = ReconstructionPooling::PerUnit;
    AlsOptions als{};
    SolverOptions solver{};
};

const char* to_string(Variant v) noexcept;
Variant parse_variant(const char* name);

}  // namespace mfscm
