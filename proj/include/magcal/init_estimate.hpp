#pragma once

#include <span>
#include <vector>

#include "magcal/calibration_state.hpp"
#include "magcal/descent.hpp"
#include "magcal/geometry.hpp"
#include "magcal/preprocess.hpp"
#include "magcal/sensor_model.hpp"

namespace magcal {

using Vector10d = Eigen::Matrix<double, 10, 1>;

/// Quadric x^T A x + b^T x + c = 0 through a set of mean readings.
struct EllipsoidCoeffs {
  Matrix3d a = Matrix3d::Zero();
  Vector3d b = Vector3d::Zero();
  double c = 0.0;
  /// Unknowns as estimated: (A11, A22, A33, A12, A13, A23, b, c), unit norm.
  Vector10d eta = Vector10d::Zero();
  /// Scale that turns (A, b, c) into the unit-field quadric.
  double alpha = 0.0;
  double smallest_singular_value = 0.0;
};

/// Design row for one mean. Symmetric A: off-diagonal monomials appear once,
/// doubled.
Vector10d ellipsoid_row(const Vector3d& x);

/// Least-squares quadric through at least 9 means (right singular vector of
/// the smallest singular value) plus the unit-field scale.
EllipsoidCoeffs ellipsoid_fit(std::span<const Vector3d> means);

struct GainBias {
  Matrix3d gain;
  Vector3d bias;
};

/// Upper-triangular gain and bias consistent with a unit-field quadric.
GainBias recover_gain_bias(const EllipsoidCoeffs& e);

struct RotationFieldOptions {
  int restarts = 100;
  bool try_mirrored = true;
  DescentOptions descent{};
};

struct RotationFieldEstimate {
  /// Orthogonal matrix coupling the two sensor frames; det = -1 when the
  /// mirrored class won.
  Matrix3d rotation = Matrix3d::Identity();
  double h_z = 0.0;
  double cost = 0.0;
  bool mirrored = false;
  int restart = 0;
};

/// 1/2 sum_i w_i (h_z + z_a[i]^T R^T z_m[i])^2.
double rotation_hz_objective(const Matrix3d& rotation, double h_z, std::span<const Vector3d> z_a,
                             std::span<const Vector3d> z_m, std::span<const double> weights);

/// One descent run over (q, h_z) from a given start. In the mirrored class the
/// coupling is diag(1, 1, -1) R(q).
DescentResult descend_rotation_hz(std::span<const Vector3d> z_a, std::span<const Vector3d> z_m,
                                  std::span<const double> weights, const UnitQuaterniond& q0,
                                  double h0, bool mirrored, const DescentOptions& options);

/// Random-restart minimization of the coupling objective. Restart starts are
/// a uniform rotation and h_z ~ U(-1, 1), each tried in both orientation
/// classes. The lowest cost wins; ties go to the earlier restart.
RotationFieldEstimate estimate_rotation_hz(std::span<const Vector3d> z_a,
                                           std::span<const Vector3d> z_m,
                                           std::span<const double> weights,
                                           const RotationFieldOptions& options, Rng& rng);

struct NormalizedScale {
  Matrix3d accel_gain;
  Matrix3d mag_gain;
  FieldParamsd fields;
};

/// Moves from the unit-norm magnetic field to the h_x = 1 gauge.
NormalizedScale normalize_field_scale(const Matrix3d& accel_gain, const Matrix3d& mag_gain,
                                      double h_z_unit);

/// det(K^T Sigma^-1 K)^(1/3).
double uncertainty_weight(const SensorParamsd& p);

/// 4x4 matrix whose null vector is the quaternion taking v to u (x = u + v,
/// y = u - v).
Matrix4d rotation_constraint(const Vector3d& x, const Vector3d& y);

/// Closed-form rotation for one set: minimal eigenvector of the weighted sum
/// of both sensors' constraint matrices.
UnitQuaterniond approximate_rotation(const CalibrationState& state, const Vector3d& accel_mean,
                                     const Vector3d& mag_mean, double w_a, double w_m);

std::vector<UnitQuaterniond> initial_rotations(const SensorParamsd& accel, const SensorParamsd& mag,
                                               const FieldParamsd& fields,
                                               const SummaryStats& stats);

struct InitOptions {
  RotationFieldOptions coupling{};
};

struct InitialEstimate {
  CalibrationState state;
  EllipsoidCoeffs accel_fit;
  EllipsoidCoeffs mag_fit;
  RotationFieldEstimate coupling;
};

/// The full initial estimate: both ellipsoid fits, the sensor coupling, field
/// scale normalization, covariances from the pooled estimate, and per-set
/// rotations.
InitialEstimate initial_estimate(const SummaryStats& stats, const InitOptions& options, Rng& rng);

}  // namespace magcal
