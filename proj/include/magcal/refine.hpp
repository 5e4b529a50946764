#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "magcal/calibration_state.hpp"
#include "magcal/descent.hpp"
#include "magcal/init_estimate.hpp"
#include "magcal/preprocess.hpp"

namespace magcal {

enum class CovarianceRefit { kNone, kFull, kDiagonal };
enum class RotationMode { kDirect, kApproxThenDirect };

/// Refinement variant. NCDR/NCAR keep the pooled covariance fixed; FCAR/DCAR
/// refit a full or diagonal covariance. "D" optimizes rotations by descent
/// from the start, "A" uses the closed-form approximation until it stops
/// helping.
struct VariantConfig {
  CovarianceRefit covariance_refit = CovarianceRefit::kNone;
  RotationMode rotation_mode = RotationMode::kApproxThenDirect;

  static constexpr VariantConfig ncdr() { return {CovarianceRefit::kNone, RotationMode::kDirect}; }
  static constexpr VariantConfig ncar() {
    return {CovarianceRefit::kNone, RotationMode::kApproxThenDirect};
  }
  static constexpr VariantConfig fcar() {
    return {CovarianceRefit::kFull, RotationMode::kApproxThenDirect};
  }
  static constexpr VariantConfig dcar() {
    return {CovarianceRefit::kDiagonal, RotationMode::kApproxThenDirect};
  }

  friend bool operator==(const VariantConfig&, const VariantConfig&) = default;
};

/// Lower-case short name ("ncar"), or "custom" for combinations outside the
/// four named variants.
std::string variant_name(const VariantConfig& v);

/// Parses ncdr / ncar / fcar / dcar (case-insensitive); also accepts the
/// unreported combinations fcdr / dcdr.
std::optional<VariantConfig> parse_variant(std::string_view name);

struct ConvergenceConfig {
  /// Stop once the governing cost decreases by less than gamma.
  double gamma = 1e-4;
  int max_outer_iters = 500;
};

/// Negative log-likelihood over raw samples (constant terms dropped).
double cost_full(const CalibrationState& state, const RawDataset& data);

/// Mean-based cost: sum_i sum_s Delta_s[i] r^T Sigma_s^-1 r with
/// r = K_s R_i v_s + b_s - mean_s[i]. Uses the state's covariances.
double cost_simplified(const CalibrationState& state, const SummaryStats& stats);

/// Per-set rotation cost as a function of an unnormalized quaternion
/// (w, x, y, z). Writes the gradient when requested.
double set_rotation_cost(const CalibrationState& state, const SummaryStats& stats, std::size_t set,
                         const Vector4d& q, Vector4d* grad = nullptr);

enum class RotationStep { kDirect, kApprox };

std::vector<UnitQuaterniond> step_rotations(const CalibrationState& state, const SummaryStats& stats,
                                            RotationStep mode, const DescentOptions& options = {});

/// Unconstrained GLS estimate of the biases and field components.
struct BiasFieldSolution {
  double g_z = -1.0;
  Vector3d accel_bias = Vector3d::Zero();
  double h_x = 1.0;
  double h_z = 0.0;
  Vector3d mag_bias = Vector3d::Zero();
};

BiasFieldSolution solve_bias_field(const CalibrationState& state, const SummaryStats& stats);

/// Installs a bias/field solution and restores g_z = -1, h_x = 1 by rescaling
/// the gains. Reconstructed means are unchanged by the rescaling.
CalibrationState apply_bias_field(const CalibrationState& state, const BiasFieldSolution& solution);

CalibrationState step_bias_field(const CalibrationState& state, const SummaryStats& stats);

/// GLS update of the upper-triangular accelerometer gain (6 entries) and the
/// full magnetometer gain (9 entries).
CalibrationState step_gain(const CalibrationState& state, const SummaryStats& stats);

/// Maximum-likelihood residual covariance (no Bessel correction), before any
/// shape projection or jitter.
Matrix3d residual_covariance(const CalibrationState& state, const RawDataset& data, SensorId s);

struct CovarianceStepResult {
  CalibrationState state;
  bool jittered = false;
};

CovarianceStepResult step_covariance(const CalibrationState& state, const RawDataset& data,
                                     CovarianceRefit shape);

struct CalibrationOptions {
  VariantConfig variant = VariantConfig::ncar();
  ConvergenceConfig convergence{};
  InitOptions init{};
  DescentOptions rotation_descent{};
};

struct Diagnostics {
  /// Governing cost after initialization and after every accepted iteration.
  std::vector<double> costs;
  int iterations = 0;
  /// Outer iteration at which the approximate rotation step was abandoned,
  /// or -1.
  int switch_iteration = -1;
  bool converged = false;
  bool covariance_jittered = false;
  RotationFieldEstimate coupling{};
  double elapsed_seconds = 0.0;

  double final_cost() const { return costs.empty() ? 0.0 : costs.back(); }
};

struct CalibrationResult {
  CalibrationState state;
  SummaryStats stats;
  Diagnostics diagnostics;
};

/// Governing cost of the stop test: the mean-based cost when covariances are
/// fixed, the full likelihood when they are refit.
double governing_cost(const CalibrationState& state, const SummaryStats& stats,
                      const RawDataset& data, CovarianceRefit refit);

/// Summary statistics, initial estimate, then block coordinate descent
/// (rotations, bias/field, gains, covariance) until the governing cost stops
/// decreasing by gamma.
CalibrationResult calibrate(const RawDataset& data, const CalibrationOptions& options, Rng& rng);

}  // namespace magcal
