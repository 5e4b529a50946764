#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include "magcal/error.hpp"

namespace magcal {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vector4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;

/// Unit quaternion, scalar-first (w, x, y, z), Hamilton product, acting as
/// v' = R v. Eigen's quaternion already follows this convention.
template <typename Scalar>
using UnitQuaternion = Eigen::Quaternion<Scalar>;

using Vector3d = Vector3<double>;
using Vector4d = Vector4<double>;
using Matrix3d = Matrix3<double>;
using Matrix4d = Matrix4<double>;
using UnitQuaterniond = UnitQuaternion<double>;

/// Seeded generator used everywhere randomness is needed.
using Rng = std::mt19937_64;

template <typename Derived>
auto symmetrized(const Eigen::MatrixBase<Derived>& m) {
  return (0.5 * (m + m.transpose())).eval();
}

template <typename Scalar>
Matrix3<Scalar> quat_to_matrix(const UnitQuaternion<Scalar>& q) {
  const Scalar n = q.norm();
  if (!(n > Scalar(0)) || !std::isfinite(n)) {
    throw Error(ErrorCode::kInvalidArgument, "quaternion has zero or non-finite norm");
  }
  return q.normalized().toRotationMatrix();
}

/// Uniform sample on SO(3) (Shoemake's subgroup algorithm, as popularized by
/// Kuffner for motion planning).
template <typename Scalar = double, typename Generator>
UnitQuaternion<Scalar> random_rotation(Generator& rng) {
  std::uniform_real_distribution<Scalar> unit(Scalar(0), Scalar(1));
  const Scalar u1 = unit(rng);
  const Scalar u2 = unit(rng);
  const Scalar u3 = unit(rng);
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  const Scalar a = std::sqrt(Scalar(1) - u1);
  const Scalar b = std::sqrt(u1);
  UnitQuaternion<Scalar> q(b * std::cos(two_pi * u3), a * std::sin(two_pi * u2),
                           a * std::cos(two_pi * u2), b * std::sin(two_pi * u3));
  q.normalize();
  return q;
}

/// Flips the sign of v so its first non-negligible component is positive.
template <typename Derived>
void canonicalize_sign(Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar scale = v.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > Scalar(1e-12) * scale) {
      if (v(i) < Scalar(0)) v = -v;
      return;
    }
  }
}

/// Unit eigenvector of the smallest eigenvalue of a symmetric 4x4 matrix,
/// sign-canonicalized.
template <typename Scalar>
Vector4<Scalar> min_eigvec_sym4(const Matrix4<Scalar>& b) {
  Eigen::SelfAdjointEigenSolver<Matrix4<Scalar>> solver(symmetrized(b));
  Vector4<Scalar> v = solver.eigenvectors().col(0).normalized();
  canonicalize_sign(v);
  return v;
}

/// Upper-triangular K with positive diagonal such that K^-T K^-1 = m. Returns
/// nullopt when m is not positive definite.
template <typename Scalar>
std::optional<Matrix3<Scalar>> upper_triangular_factor(const Matrix3<Scalar>& m) {
  Eigen::LLT<Matrix3<Scalar>> llt(symmetrized(m));
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Matrix3<Scalar> lower = llt.matrixL();
  if ((lower.diagonal().array() <= Scalar(0)).any()) return std::nullopt;
  // K = L^-T is upper triangular and K K^T = (L L^T)^-1.
  Matrix3<Scalar> k = lower.transpose().template triangularView<Eigen::Upper>().solve(
      Matrix3<Scalar>::Identity());
  return k;
}

/// Homogeneous rotation polynomial: equals |q|^2 R(q/|q|).
template <typename Scalar>
Matrix3<Scalar> rotation_polynomial(const Vector4<Scalar>& q) {
  const Scalar w = q(0);
  const Vector3<Scalar> v = q.template tail<3>();
  Matrix3<Scalar> cross;
  cross << 0, -v(2), v(1), v(2), 0, -v(0), -v(1), v(0), 0;
  return (w * w - v.squaredNorm()) * Matrix3<Scalar>::Identity() + 2 * v * v.transpose() +
         2 * w * cross;
}

/// Partial derivatives of R(q/|q|) with respect to the four raw components of
/// q (w, x, y, z).
template <typename Scalar>
std::array<Matrix3<Scalar>, 4> rotation_jacobian(const Vector4<Scalar>& q) {
  const Scalar n = q.squaredNorm();
  const Scalar w = q(0);
  const Vector3<Scalar> v = q.template tail<3>();
  const Matrix3<Scalar> rh = rotation_polynomial<Scalar>(q);
  const auto skew = [](const Vector3<Scalar>& a) {
    Matrix3<Scalar> s;
    s << 0, -a(2), a(1), a(2), 0, -a(0), -a(1), a(0), 0;
    return s;
  };

  std::array<Matrix3<Scalar>, 4> d;
  d[0] = 2 * w * Matrix3<Scalar>::Identity() + 2 * skew(v);
  for (int k = 0; k < 3; ++k) {
    const Vector3<Scalar> e = Vector3<Scalar>::Unit(k);
    d[k + 1] = -2 * v(k) * Matrix3<Scalar>::Identity() + 2 * (e * v.transpose() + v * e.transpose()) +
               2 * w * skew(e);
  }
  for (int k = 0; k < 4; ++k) {
    d[k] = d[k] / n - rh * (2 * q(k) / (n * n));
  }
  return d;
}

}  // namespace magcal
