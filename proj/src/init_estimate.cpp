#include "magcal/init_estimate.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <string>

namespace magcal {

Vector10d ellipsoid_row(const Vector3d& x) {
  Vector10d row;
  row << x(0) * x(0), x(1) * x(1), x(2) * x(2), 2 * x(0) * x(1), 2 * x(0) * x(2),
      2 * x(1) * x(2), x(0), x(1), x(2), 1.0;
  return row;
}

EllipsoidCoeffs ellipsoid_fit(std::span<const Vector3d> means) {
  if (means.size() < 9) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "ellipsoid fit needs at least 9 sets, got " + std::to_string(means.size()));
  }
  Eigen::Matrix<double, Eigen::Dynamic, 10> design(static_cast<Eigen::Index>(means.size()), 10);
  for (std::size_t i = 0; i < means.size(); ++i) {
    design.row(static_cast<Eigen::Index>(i)) = ellipsoid_row(means[i]).transpose();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  Vector10d singular = Vector10d::Zero();
  singular.head(svd.singularValues().size()) = svd.singularValues();
  if (!(singular(8) > 1e-10 * singular(0))) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "means do not determine a unique quadric (orientations too few or coplanar)");
  }

  EllipsoidCoeffs e;
  e.eta = svd.matrixV().col(9);
  canonicalize_sign(e.eta);
  e.smallest_singular_value = singular(9);
  e.a << e.eta(0), e.eta(3), e.eta(4), e.eta(3), e.eta(1), e.eta(5), e.eta(4), e.eta(5), e.eta(2);
  e.b = e.eta.segment<3>(6);
  e.c = e.eta(9);

  const Eigen::FullPivLU<Matrix3d> lu(e.a);
  if (!lu.isInvertible()) throw Error(ErrorCode::kNotAnEllipsoid, "quadric matrix is singular");
  e.alpha = 1.0 / (0.25 * e.b.dot(lu.solve(e.b)) - e.c);
  if (!std::isfinite(e.alpha) || !is_spd<double>(e.alpha * e.a)) {
    throw Error(ErrorCode::kNotAnEllipsoid,
                "fitted quadric is not an ellipsoid; the data must cover more orientations");
  }
  return e;
}

GainBias recover_gain_bias(const EllipsoidCoeffs& e) {
  const auto gain = upper_triangular_factor<double>(e.alpha * e.a);
  if (!gain) throw Error(ErrorCode::kNotAnEllipsoid, "scaled quadric matrix is not positive definite");
  GainBias out;
  out.gain = *gain;
  out.bias = -0.5 * e.a.fullPivLu().solve(e.b);
  return out;
}

namespace {

constexpr double kMirror[3] = {1.0, 1.0, -1.0};

Matrix3d class_matrix(bool mirrored) {
  return mirrored ? Vector3d(kMirror[0], kMirror[1], kMirror[2]).asDiagonal().toDenseMatrix()
                  : Matrix3d::Identity();
}

}  // namespace

double rotation_hz_objective(const Matrix3d& rotation, double h_z, std::span<const Vector3d> z_a,
                             std::span<const Vector3d> z_m, std::span<const double> weights) {
  double cost = 0.0;
  for (std::size_t i = 0; i < z_a.size(); ++i) {
    const double r = h_z + z_a[i].dot(rotation.transpose() * z_m[i]);
    cost += weights[i] * r * r;
  }
  return 0.5 * cost;
}

DescentResult descend_rotation_hz(std::span<const Vector3d> z_a, std::span<const Vector3d> z_m,
                                  std::span<const double> weights, const UnitQuaterniond& q0,
                                  double h0, bool mirrored, const DescentOptions& options) {
  // Mirrored class: coupling D R, so R^T D z_m replaces R^T z_m.
  const Matrix3d d = class_matrix(mirrored);
  std::vector<Vector3d> zm(z_m.size());
  for (std::size_t i = 0; i < z_m.size(); ++i) zm[i] = d * z_m[i];

  auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const Vector4d q = x.head<4>();
    const double h = x(4);
    const Matrix3d rot = rotation_polynomial<double>(q) / q.squaredNorm();
    double cost = 0.0;
    double dh = 0.0;
    Matrix3d g = Matrix3d::Zero();
    for (std::size_t i = 0; i < z_a.size(); ++i) {
      const double r = h + zm[i].dot(rot * z_a[i]);
      cost += weights[i] * r * r;
      if (grad) {
        dh += weights[i] * r;
        g += weights[i] * r * zm[i] * z_a[i].transpose();
      }
    }
    if (grad) {
      const auto jac = rotation_jacobian<double>(q);
      for (int k = 0; k < 4; ++k) (*grad)(k) = (g.array() * jac[k].array()).sum();
      (*grad)(4) = dh;
    }
    return 0.5 * cost;
  };
  auto project = [](Eigen::VectorXd& x) { x.head<4>().normalize(); };

  Eigen::VectorXd x0(5);
  x0 << q0.w(), q0.x(), q0.y(), q0.z(), h0;
  return gradient_descent(objective, x0, project, options);
}

RotationFieldEstimate estimate_rotation_hz(std::span<const Vector3d> z_a,
                                           std::span<const Vector3d> z_m,
                                           std::span<const double> weights,
                                           const RotationFieldOptions& options, Rng& rng) {
  if (z_a.size() != z_m.size() || z_a.size() != weights.size() || z_a.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "coupling inputs must be non-empty and equally sized");
  }
  if (options.restarts < 1) throw Error(ErrorCode::kInvalidArgument, "restarts must be >= 1");

  RotationFieldEstimate best;
  best.cost = std::numeric_limits<double>::infinity();
  std::uniform_real_distribution<double> h_start(-1.0, 1.0);
  for (int r = 0; r < options.restarts; ++r) {
    const UnitQuaterniond q0 = random_rotation<double>(rng);
    const double h0 = h_start(rng);
    for (bool mirrored : {false, true}) {
      if (mirrored && !options.try_mirrored) continue;
      const DescentResult run = descend_rotation_hz(z_a, z_m, weights, q0, h0, mirrored, options.descent);
      if (run.cost < best.cost) {
        const Vector4d q = run.x.head<4>();
        best.rotation = class_matrix(mirrored) * rotation_polynomial<double>(q) / q.squaredNorm();
        best.h_z = run.x(4);
        best.cost = run.cost;
        best.mirrored = mirrored;
        best.restart = r;
      }
    }
  }
  return best;
}

NormalizedScale normalize_field_scale(const Matrix3d& accel_gain, const Matrix3d& mag_gain,
                                      double h_z_unit) {
  if (!(std::abs(h_z_unit) < 1.0)) {
    throw Error(ErrorCode::kFieldInclinationOutOfRange,
                "estimated unit-field h_z = " + std::to_string(h_z_unit) +
                    " leaves no horizontal component");
  }
  const double h_x = std::sqrt(1.0 - h_z_unit * h_z_unit);
  NormalizedScale out;
  out.accel_gain = accel_gain;
  out.mag_gain = mag_gain * h_x;
  out.fields.g_z = -1.0;
  out.fields.h_x = 1.0;
  out.fields.h_z = h_z_unit / h_x;
  return out;
}

double uncertainty_weight(const SensorParamsd& p) {
  const Matrix3d info = p.gain.transpose() * p.covariance.ldlt().solve(p.gain);
  return std::cbrt(std::abs(info.determinant()));
}

Matrix4d rotation_constraint(const Vector3d& x, const Vector3d& y) {
  Matrix4d f;
  f << 0, -y(0), -y(1), -y(2),
       y(0), 0, -x(2), x(1),
       y(1), x(2), 0, -x(0),
       y(2), -x(1), x(0), 0;
  return f;
}

UnitQuaterniond approximate_rotation(const CalibrationState& state, const Vector3d& accel_mean,
                                     const Vector3d& mag_mean, double w_a, double w_m) {
  Matrix4d b = Matrix4d::Zero();
  const std::array<std::pair<SensorId, const Vector3d*>, 2> inputs = {
      std::pair{SensorId::kAccelerometer, &accel_mean}, std::pair{SensorId::kMagnetometer, &mag_mean}};
  for (const auto& [s, mean] : inputs) {
    const Vector3d nominal = invert_reading(state.sensor(s), *mean);
    const Vector3d inertial = field_vector(state.fields, s);
    const Matrix4d a = rotation_constraint(nominal + inertial, nominal - inertial);
    b += (s == SensorId::kAccelerometer ? w_a : w_m) * a.transpose() * a;
  }
  const Vector4d v = min_eigvec_sym4<double>(b);
  return UnitQuaterniond(v(0), v(1), v(2), v(3));
}

std::vector<UnitQuaterniond> initial_rotations(const SensorParamsd& accel, const SensorParamsd& mag,
                                               const FieldParamsd& fields,
                                               const SummaryStats& stats) {
  CalibrationState state;
  state.accel = accel;
  state.mag = mag;
  state.fields = fields;
  const double w_a = uncertainty_weight(accel);
  const double w_m = uncertainty_weight(mag);
  std::vector<UnitQuaterniond> out;
  out.reserve(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    out.push_back(approximate_rotation(state, stats.accel.means[i], stats.mag.means[i], w_a, w_m));
  }
  return out;
}

InitialEstimate initial_estimate(const SummaryStats& stats, const InitOptions& options, Rng& rng) {
  InitialEstimate out;
  out.accel_fit = ellipsoid_fit(stats.accel.means);
  out.mag_fit = ellipsoid_fit(stats.mag.means);
  const GainBias accel = recover_gain_bias(out.accel_fit);
  const GainBias mag = recover_gain_bias(out.mag_fit);

  const std::size_t n = stats.size();
  std::vector<Vector3d> z_a(n);
  std::vector<Vector3d> z_m(n);
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    z_a[i] = accel.gain.triangularView<Eigen::Upper>().solve(stats.accel.means[i] - accel.bias);
    z_m[i] = mag.gain.triangularView<Eigen::Upper>().solve(stats.mag.means[i] - mag.bias);
    weights[i] = static_cast<double>(stats.accel.counts[i] + stats.mag.counts[i]);
  }
  out.coupling = estimate_rotation_hz(z_a, z_m, weights, options.coupling, rng);

  const NormalizedScale scaled =
      normalize_field_scale(accel.gain, mag.gain * out.coupling.rotation, out.coupling.h_z);

  CalibrationState& state = out.state;
  state.accel = {scaled.accel_gain, accel.bias, stats.accel.covariance};
  state.mag = {scaled.mag_gain, mag.bias, stats.mag.covariance};
  state.fields = scaled.fields;
  state.rotations = initial_rotations(state.accel, state.mag, state.fields, stats);
  return out;
}

}  // namespace magcal
