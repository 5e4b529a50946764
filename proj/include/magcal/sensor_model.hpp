#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>

#include <cmath>
#include <random>
#include <string_view>

#include "magcal/error.hpp"
#include "magcal/geometry.hpp"

namespace magcal {

enum class SensorId { kAccelerometer = 0, kMagnetometer = 1 };

inline constexpr std::array<SensorId, 2> kSensors = {SensorId::kAccelerometer,
                                                     SensorId::kMagnetometer};

constexpr int index_of(SensorId s) { return static_cast<int>(s); }

constexpr std::string_view to_string(SensorId s) {
  return s == SensorId::kAccelerometer ? "accelerometer" : "magnetometer";
}

/// Linear sensor model: v = K v* + b + e, e ~ N(0, sigma).
template <typename Scalar>
struct SensorParams {
  Matrix3<Scalar> gain = Matrix3<Scalar>::Identity();
  Vector3<Scalar> bias = Vector3<Scalar>::Zero();
  Matrix3<Scalar> covariance = Matrix3<Scalar>::Identity();

  /// Noiseless reading for a nominal value already expressed in the sensor frame.
  Vector3<Scalar> mean_reading(const Vector3<Scalar>& nominal) const {
    return gain * nominal + bias;
  }
};

/// Inertial-frame fields: gravity (0, 0, g_z) and magnetic field (h_x, 0, h_z).
template <typename Scalar>
struct FieldParams {
  Scalar g_z = Scalar(-1);
  Scalar h_x = Scalar(1);
  Scalar h_z = Scalar(0);

  Vector3<Scalar> gravity() const { return {Scalar(0), Scalar(0), g_z}; }
  Vector3<Scalar> magnetic() const { return {h_x, Scalar(0), h_z}; }
};

using SensorParamsd = SensorParams<double>;
using FieldParamsd = FieldParams<double>;

template <typename Scalar>
Vector3<Scalar> field_vector(const FieldParams<Scalar>& fields, SensorId s) {
  return s == SensorId::kAccelerometer ? fields.gravity() : fields.magnetic();
}

template <typename Scalar>
bool gain_invertible(const Matrix3<Scalar>& k) {
  const Scalar n = k.norm();
  return std::isfinite(n) && std::abs(k.determinant()) > Scalar(1e-12) * n * n * n;
}

template <typename Scalar>
bool is_spd(const Matrix3<Scalar>& m) {
  if (!m.allFinite()) return false;
  Eigen::SelfAdjointEigenSolver<Matrix3<Scalar>> solver(symmetrized(m), Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(0) > Scalar(0);
}

template <typename Scalar>
void validate(const SensorParams<Scalar>& p) {
  if (!gain_invertible(p.gain)) throw Error(ErrorCode::kInvalidParams, "gain matrix is singular");
  if (!is_spd(p.covariance)) {
    throw Error(ErrorCode::kInvalidParams, "noise covariance is not positive definite");
  }
}

/// Draws correlated Gaussian noise through the lower Cholesky factor of the
/// covariance. The factor is computed once per sampler.
template <typename Scalar>
class NoiseSampler {
 public:
  explicit NoiseSampler(const Matrix3<Scalar>& covariance) {
    Eigen::LLT<Matrix3<Scalar>> llt(symmetrized(covariance));
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::kInvalidParams, "noise covariance is not positive definite");
    }
    factor_ = llt.matrixL();
  }

  template <typename Generator>
  Vector3<Scalar> operator()(Generator& rng) {
    Vector3<Scalar> z;
    for (int k = 0; k < 3; ++k) z(k) = normal_(rng);
    return factor_ * z;
  }

  const Matrix3<Scalar>& factor() const { return factor_; }

 private:
  Matrix3<Scalar> factor_;
  std::normal_distribution<Scalar> normal_{Scalar(0), Scalar(1)};
};

template <typename Scalar, typename Generator>
Vector3<Scalar> simulate_reading(const SensorParams<Scalar>& p, const Vector3<Scalar>& field_inertial,
                                 const Matrix3<Scalar>& rotation, Generator& rng) {
  NoiseSampler<Scalar> noise(p.covariance);
  return p.mean_reading(rotation * field_inertial) + noise(rng);
}

/// Nominal field estimate K^-1 (v - b).
template <typename Scalar>
Vector3<Scalar> invert_reading(const SensorParams<Scalar>& p, const Vector3<Scalar>& reading) {
  if (!gain_invertible(p.gain)) throw Error(ErrorCode::kInvalidParams, "gain matrix is singular");
  return p.gain.fullPivLu().solve(reading - p.bias);
}

}  // namespace magcal
