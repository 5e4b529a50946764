#pragma once

#include <vector>

#include "magcal/geometry.hpp"
#include "magcal/sensor_model.hpp"

namespace magcal {

/// Full parameter set: both sensors, the inertial fields, and one orientation
/// per measurement set.
///
/// Gauge after normalization: g_z = -1, h_x = 1, accelerometer gain upper
/// triangular with positive diagonal. The magnetometer gain is unrestricted so
/// it can carry the accelerometer/magnetometer misalignment, including a
/// reflection.
struct CalibrationState {
  SensorParamsd accel;
  SensorParamsd mag;
  FieldParamsd fields;
  std::vector<UnitQuaterniond> rotations;

  const SensorParamsd& sensor(SensorId s) const {
    return s == SensorId::kAccelerometer ? accel : mag;
  }
  SensorParamsd& sensor(SensorId s) { return s == SensorId::kAccelerometer ? accel : mag; }

  /// Reconstructed mean K_s R_i v_s + b_s for set i.
  Vector3d reconstructed_mean(SensorId s, std::size_t i) const {
    const SensorParamsd& p = sensor(s);
    return p.mean_reading(rotations[i].toRotationMatrix() * field_vector(fields, s));
  }
};

}  // namespace magcal
