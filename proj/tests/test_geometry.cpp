#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "magcal/geometry.hpp"

namespace magcal {
namespace {

TEST(QuatToMatrix, IdentityAndHalfTurn) {
  EXPECT_TRUE(quat_to_matrix(UnitQuaterniond(1, 0, 0, 0)).isApprox(Matrix3d::Identity(), 1e-15));
  const Matrix3d half_turn = quat_to_matrix(UnitQuaterniond(0, 1, 0, 0));
  EXPECT_TRUE(half_turn.isApprox(Vector3d(1, -1, -1).asDiagonal().toDenseMatrix(), 1e-15));
}

TEST(QuatToMatrix, ZeroNormRejected) {
  try {
    quat_to_matrix(UnitQuaterniond(0, 0, 0, 0));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(QuatToMatrix, RandomRotationsAreProper) {
  Rng rng(11);
  for (int k = 0; k < 1000; ++k) {
    const Matrix3d r = quat_to_matrix(random_rotation<double>(rng));
    EXPECT_LT((r.transpose() * r - Matrix3d::Identity()).norm(), 1e-13);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-13);
  }
}

TEST(RandomRotation, UnitNormAndDeterministic) {
  Rng a(5);
  Rng b(5);
  for (int k = 0; k < 100; ++k) {
    const UnitQuaterniond qa = random_rotation<double>(a);
    const UnitQuaterniond qb = random_rotation<double>(b);
    EXPECT_NEAR(qa.norm(), 1.0, 1e-15);
    EXPECT_EQ(qa.coeffs(), qb.coeffs());
  }
}

// The rotation angle of a uniform rotation has density (1 - cos t) / pi on
// [0, pi], so its CDF is (t - sin t) / pi.
TEST(RandomRotation, AngleDistributionMatchesUniformSO3) {
  constexpr int kSamples = 100000;
  Rng rng(2024);
  std::vector<double> angles(kSamples);
  for (double& t : angles) {
    const UnitQuaterniond q = random_rotation<double>(rng);
    t = 2.0 * std::acos(std::min(1.0, std::abs(q.w())));
  }
  std::sort(angles.begin(), angles.end());
  double ks = 0.0;
  for (int i = 0; i < kSamples; ++i) {
    const double cdf = (angles[i] - std::sin(angles[i])) / std::numbers::pi;
    ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / kSamples),
                   std::abs(cdf - static_cast<double>(i + 1) / kSamples)});
  }
  EXPECT_LT(ks, 0.01);
}

TEST(MinEigvec, DiagonalCases) {
  const Vector4d v = min_eigvec_sym4<double>(Vector4d(3, 2, 1, 0).asDiagonal().toDenseMatrix());
  EXPECT_TRUE(v.isApprox(Vector4d(0, 0, 0, 1), 1e-15));

  const Matrix4d b = 5.0 * Matrix4d::Identity();
  const Vector4d w = min_eigvec_sym4<double>(b);
  EXPECT_NEAR(w.norm(), 1.0, 1e-15);
  EXPECT_LT((b * w - 5.0 * w).norm(), 1e-14);
  EXPECT_EQ(w, min_eigvec_sym4<double>(b));
}

// Coefficients of det(t I - B) via Faddeev-LeVerrier, highest power first.
std::array<double, 5> characteristic_polynomial(const Matrix4d& b) {
  std::array<double, 5> c{};
  c[0] = 1.0;
  Matrix4d m = Matrix4d::Zero();
  for (int k = 1; k <= 4; ++k) {
    m = b * m + c[k - 1] * Matrix4d::Identity();
    c[k] = -(b * m).trace() / k;
  }
  return c;
}

// Smallest root of a real-rooted quartic: Newton from below every root
// increases monotonically to it.
double smallest_root(const std::array<double, 5>& c, double below) {
  double t = below;
  for (int it = 0; it < 200; ++it) {
    double p = 0.0;
    double dp = 0.0;
    for (double coeff : c) {
      dp = dp * t + p;
      p = p * t + coeff;
    }
    const double next = t - p / dp;
    if (!(next > t)) break;
    t = next;
  }
  return t;
}

TEST(MinEigvec, MatchesCharacteristicPolynomialRoot) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix4d b;
    for (int r = 0; r < 4; ++r) {
      for (int c = r; c < 4; ++c) b(r, c) = b(c, r) = u(rng);
    }
    // Gershgorin lower bound on the spectrum.
    double lower = 0.0;
    for (int r = 0; r < 4; ++r) {
      lower = std::min(lower, b(r, r) - (b.row(r).cwiseAbs().sum() - std::abs(b(r, r))));
    }
    const double lambda = smallest_root(characteristic_polynomial(b), lower - 1.0);
    const Vector4d v = min_eigvec_sym4(b);
    EXPECT_NEAR(v.norm(), 1.0, 1e-14);
    EXPECT_LT((b * v - lambda * v).norm(), 1e-9) << "trial " << trial;
  }
}

TEST(UpperTriangularFactor, FactorsRandomSpd) {
  Rng rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix3d a;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) a(r, c) = u(rng);
    }
    const Matrix3d m = a * a.transpose() + 0.1 * Matrix3d::Identity();
    const auto k = upper_triangular_factor(m);
    ASSERT_TRUE(k.has_value());
    EXPECT_EQ((*k)(1, 0), 0.0);
    EXPECT_EQ((*k)(2, 0), 0.0);
    EXPECT_EQ((*k)(2, 1), 0.0);
    EXPECT_GT(k->diagonal().minCoeff(), 0.0);
    const Matrix3d kinv = k->inverse();
    EXPECT_LT((kinv.transpose() * kinv - m).norm(), 1e-9 * m.norm());
  }
  EXPECT_FALSE(upper_triangular_factor<double>(Vector3d(1, -1, 1).asDiagonal()).has_value());
}

TEST(RotationJacobian, MatchesFiniteDifferences) {
  Rng rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector4d q(n(rng), n(rng), n(rng), n(rng));
    const auto rot = [](const Vector4d& x) { return Matrix3d(rotation_polynomial<double>(x) / x.squaredNorm()); };
    const auto jac = rotation_jacobian<double>(q);
    for (int k = 0; k < 4; ++k) {
      const double h = 1e-6;
      const Vector4d e = Vector4d::Unit(k) * h;
      const Matrix3d fd = (rot(q + e) - rot(q - e)) / (2 * h);
      EXPECT_LT((fd - jac[k]).norm(), 1e-6 * (1.0 + jac[k].norm()));
    }
    EXPECT_TRUE(rot(q).isApprox(UnitQuaterniond(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix(), 1e-13));
  }
}

}  // namespace
}  // namespace magcal
