#include <gtest/gtest.h>

#include <numbers>

#include "magcal/init_estimate.hpp"
#include "test_support.hpp"

namespace magcal {
namespace {

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kUsage;
}

std::vector<Vector3d> ellipsoid_points(const Matrix3d& k, const Vector3d& b, std::size_t n, Rng& rng) {
  std::vector<Vector3d> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(k * (random_rotation<double>(rng) * Vector3d::UnitX()) + b);
  }
  return out;
}

TEST(EllipsoidFit, UnitSphere) {
  Rng rng(1);
  const auto pts = ellipsoid_points(Matrix3d::Identity(), Vector3d::Zero(), 15, rng);
  const EllipsoidCoeffs e = ellipsoid_fit(pts);
  EXPECT_LT((e.alpha * e.a - Matrix3d::Identity()).norm(), 1e-9);
  EXPECT_LT(e.b.norm() / e.a.norm(), 1e-9);
  const GainBias gb = recover_gain_bias(e);
  EXPECT_LT((gb.gain - Matrix3d::Identity()).norm(), 1e-9);
  EXPECT_LT(gb.bias.norm(), 1e-9);
}

TEST(EllipsoidFit, ScaledSphere) {
  Rng rng(2);
  const auto pts = ellipsoid_points(2 * Matrix3d::Identity(), Vector3d::Zero(), 15, rng);
  const EllipsoidCoeffs e = ellipsoid_fit(pts);
  EXPECT_LT((e.alpha * e.a - Matrix3d::Identity() / 4).norm(), 1e-9);
  EXPECT_LT((recover_gain_bias(e).gain - 2 * Matrix3d::Identity()).norm(), 1e-9);
}

TEST(EllipsoidFit, ShiftedSphere) {
  Rng rng(3);
  const auto pts = ellipsoid_points(Matrix3d::Identity(), Vector3d(1, 0, 0), 15, rng);
  EXPECT_LT((recover_gain_bias(ellipsoid_fit(pts)).bias - Vector3d(1, 0, 0)).norm(), 1e-9);
}

TEST(EllipsoidFit, GeneralEllipsoidReproducesPoints) {
  Rng rng(4);
  const Matrix3d k = testing::random_upper_gain(rng) * random_rotation<double>(rng).toRotationMatrix();
  const Vector3d b(0.3, -0.5, 0.7);
  const auto pts = ellipsoid_points(k, b, 20, rng);
  const GainBias gb = recover_gain_bias(ellipsoid_fit(pts));
  EXPECT_LT((gb.bias - b).norm(), 1e-9);
  // Same quadric: K^-T K^-1 agrees, so every point maps to the unit sphere.
  for (const auto& p : pts) {
    EXPECT_NEAR(gb.gain.triangularView<Eigen::Upper>().solve(p - gb.bias).norm(), 1.0, 1e-9);
  }
}

TEST(EllipsoidFit, DegenerateInputs) {
  std::vector<Vector3d> few(8, Vector3d::Ones());
  EXPECT_EQ(error_of([&] { ellipsoid_fit(few); }), ErrorCode::kDegenerateGeometry);

  // Points on a circle in the z = 0 plane fit many quadrics.
  std::vector<Vector3d> planar;
  for (int k = 0; k < 15; ++k) {
    const double t = 2 * std::numbers::pi * k / 15;
    planar.emplace_back(std::cos(t), std::sin(t), 0.0);
  }
  EXPECT_EQ(error_of([&] { ellipsoid_fit(planar); }), ErrorCode::kDegenerateGeometry);

  // Hyperboloid of one sheet x^2 + y^2 - z^2 = 1.
  std::vector<Vector3d> hyper;
  Rng rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi);
  for (int k = 0; k < 20; ++k) {
    const double z = u(rng);
    const double r = std::sqrt(1 + z * z);
    const double t = angle(rng);
    hyper.emplace_back(r * std::cos(t), r * std::sin(t), z);
  }
  EXPECT_EQ(error_of([&] { recover_gain_bias(ellipsoid_fit(hyper)); }), ErrorCode::kNotAnEllipsoid);
}

TEST(RecoverGainBias, FactorsRandomSpd) {
  Rng rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix3d a;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) a(r, c) = u(rng);
    }
    EllipsoidCoeffs e;
    e.a = a * a.transpose() + 0.1 * Matrix3d::Identity();
    e.alpha = 1.0;
    const Matrix3d k = recover_gain_bias(e).gain;
    EXPECT_TRUE(k.isUpperTriangular(0.0));
    const Matrix3d kinv = k.inverse();
    EXPECT_LT((kinv.transpose() * kinv - e.a).norm(), 1e-9 * e.a.norm());
  }
}

struct CouplingData {
  std::vector<Vector3d> z_a;
  std::vector<Vector3d> z_m;
  std::vector<double> weights;
};

CouplingData coupling_data(const Matrix3d& coupling, double h_z, std::size_t n, Rng& rng) {
  const double h_x = std::sqrt(1 - h_z * h_z);
  CouplingData d;
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix3d r = random_rotation<double>(rng).toRotationMatrix();
    d.z_a.push_back(r * Vector3d(0, 0, -1));
    d.z_m.push_back(coupling * r * Vector3d(h_x, 0, h_z));
    d.weights.push_back(500.0 + static_cast<double>(i));
  }
  return d;
}

TEST(EstimateRotationHz, ZeroCostAtIdentityTruth) {
  Rng rng(7);
  const CouplingData d = coupling_data(Matrix3d::Identity(), 0.0, 15, rng);
  RotationFieldOptions options;
  options.restarts = 20;
  const RotationFieldEstimate est = estimate_rotation_hz(d.z_a, d.z_m, d.weights, options, rng);
  EXPECT_LT(est.cost, 1e-12);
}

TEST(EstimateRotationHz, NoWorseThanGroundTruth) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const Matrix3d truth = random_rotation<double>(rng).toRotationMatrix();
    const double h_z = std::uniform_real_distribution<double>(-0.9, 0.9)(rng);
    const CouplingData d = coupling_data(truth, h_z, 15, rng);
    RotationFieldOptions options;
    options.restarts = 20;
    const RotationFieldEstimate est = estimate_rotation_hz(d.z_a, d.z_m, d.weights, options, rng);
    EXPECT_LE(est.cost, rotation_hz_objective(truth, h_z, d.z_a, d.z_m, d.weights) + 1e-10);
    // (R, h_z) and (-R, -h_z) score identically; the second is the same
    // model with a negated magnetometer gain.
    const double sign = est.mirrored ? -1.0 : 1.0;
    EXPECT_LT((est.rotation - sign * truth).norm(), 1e-5);
    EXPECT_NEAR(est.h_z, sign * h_z, 1e-6);
  }
}

TEST(EstimateRotationHz, FindsMirroredCoupling) {
  Rng rng(8);
  const Matrix3d truth = Vector3d(1, -1, 1).asDiagonal() * random_rotation<double>(rng).toRotationMatrix();
  const CouplingData d = coupling_data(truth, 0.4, 15, rng);
  RotationFieldOptions options;
  options.restarts = 20;
  const RotationFieldEstimate est = estimate_rotation_hz(d.z_a, d.z_m, d.weights, options, rng);
  EXPECT_LT(est.cost, 1e-12);
  const double sign = est.mirrored ? 1.0 : -1.0;
  EXPECT_LT((est.rotation - sign * truth).norm(), 1e-5);
}

TEST(EstimateRotationHz, SingleSetIsDeterministic) {
  Rng a(9);
  Rng b(9);
  Rng data_rng(10);
  const CouplingData d = coupling_data(Matrix3d::Identity(), 0.2, 1, data_rng);
  RotationFieldOptions options;
  options.restarts = 5;
  const RotationFieldEstimate x = estimate_rotation_hz(d.z_a, d.z_m, d.weights, options, a);
  const RotationFieldEstimate y = estimate_rotation_hz(d.z_a, d.z_m, d.weights, options, b);
  EXPECT_LT(x.cost, 1e-12);
  EXPECT_EQ(x.rotation, y.rotation);
  EXPECT_EQ(x.h_z, y.h_z);
}

TEST(DescendRotationHz, CostNeverIncreases) {
  Rng rng(11);
  const CouplingData d = coupling_data(random_rotation<double>(rng).toRotationMatrix(), 0.3, 12, rng);
  DescentOptions options;
  options.record_history = true;
  for (int start = 0; start < 10; ++start) {
    const DescentResult run = descend_rotation_hz(d.z_a, d.z_m, d.weights, random_rotation<double>(rng), 0.0,
                                                  start % 2 == 1, options);
    ASSERT_GE(run.history.size(), 1u);
    for (std::size_t k = 1; k < run.history.size(); ++k) EXPECT_LE(run.history[k], run.history[k - 1]);
  }
}

TEST(NormalizeFieldScale, Examples) {
  const Matrix3d ka = 2 * Matrix3d::Identity();
  const Matrix3d km = 3 * Matrix3d::Identity();
  const NormalizedScale equator = normalize_field_scale(ka, km, 0.0);
  EXPECT_EQ(equator.mag_gain, km);
  EXPECT_EQ(equator.accel_gain, ka);
  EXPECT_EQ(equator.fields.h_x, 1.0);
  EXPECT_EQ(equator.fields.h_z, 0.0);

  const NormalizedScale tilted = normalize_field_scale(ka, km, 0.6);
  EXPECT_NEAR(tilted.fields.h_z, 0.75, 1e-15);
  EXPECT_TRUE(tilted.mag_gain.isApprox(0.8 * km, 1e-15));
  EXPECT_EQ(tilted.fields.g_z, -1.0);

  EXPECT_EQ(error_of([&] { normalize_field_scale(ka, km, 1.0); }), ErrorCode::kFieldInclinationOutOfRange);
}

TEST(RotationConstraint, NullVectorIsTheRotation) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const UnitQuaterniond q = random_rotation<double>(rng);
    const Vector3d v = Vector3d::Random();
    const Vector3d u = q * v;
    const Vector4d qv(q.w(), q.x(), q.y(), q.z());
    EXPECT_LT((rotation_constraint(u + v, u - v) * qv).norm(), 1e-12);
  }
}

struct NoiselessSetup {
  testing::Instance inst;
  CalibrationState state;
};

NoiselessSetup noiseless(std::uint64_t seed, std::size_t sets) {
  Rng rng(seed);
  NoiselessSetup s;
  s.inst.truth = testing::isotropic_scenario(rng, 1e-24);
  s.inst.data = gen_dataset(s.inst.truth, sets, {5, 8}, rng);
  s.inst.stats = summarize(s.inst.data.data);
  s.state = testing::truth_state(s.inst.truth, s.inst.data.rotations);
  return s;
}

TEST(InitialRotations, IdentityRecovered) {
  NoiselessSetup s = noiseless(13, 3);
  // Force every set to the identity orientation.
  for (std::size_t i = 0; i < 3; ++i) {
    s.inst.stats.accel.means[i] = s.inst.truth.accel.mean_reading(s.inst.truth.fields.gravity());
    s.inst.stats.mag.means[i] = s.inst.truth.mag.mean_reading(s.inst.truth.fields.magnetic());
  }
  const auto rots = initial_rotations(s.state.accel, s.state.mag, s.state.fields, s.inst.stats);
  for (const auto& q : rots) EXPECT_LT((q.toRotationMatrix() - Matrix3d::Identity()).norm(), 1e-9);
}

TEST(InitialRotations, ExactRecoveryOnNoiselessData) {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    const NoiselessSetup s = noiseless(seed, 15);
    const auto rots = initial_rotations(s.state.accel, s.state.mag, s.state.fields, s.inst.stats);
    for (std::size_t i = 0; i < rots.size(); ++i) {
      EXPECT_LT((rots[i].toRotationMatrix() - s.inst.data.rotations[i].toRotationMatrix()).norm(), 1e-8);
    }
  }
}

TEST(InitialEstimate, NoiselessDataIsReproduced) {
  for (std::uint64_t seed = 40; seed < 45; ++seed) {
    const NoiselessSetup s = noiseless(seed, 15);
    Rng rng(seed);
    InitOptions options;
    options.coupling.restarts = 30;
    const InitialEstimate init = initial_estimate(s.inst.stats, options, rng);
    const CalibrationState& est = init.state;
    EXPECT_EQ(est.fields.g_z, -1.0);
    EXPECT_EQ(est.fields.h_x, 1.0);
    EXPECT_TRUE(est.accel.gain.isUpperTriangular(0.0));
    for (SensorId sensor : kSensors) {
      for (std::size_t i = 0; i < s.inst.stats.size(); ++i) {
        EXPECT_LT((est.reconstructed_mean(sensor, i) - s.inst.stats.sensor(sensor).means[i]).norm(), 1e-7)
            << "seed " << seed << " set " << i;
      }
    }
  }
}

}  // namespace
}  // namespace magcal
