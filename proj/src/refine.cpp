#include "magcal/refine.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>

namespace magcal {

std::string variant_name(const VariantConfig& v) {
  std::string name;
  switch (v.covariance_refit) {
    case CovarianceRefit::kNone: name = "nc"; break;
    case CovarianceRefit::kFull: name = "fc"; break;
    case CovarianceRefit::kDiagonal: name = "dc"; break;
  }
  name += v.rotation_mode == RotationMode::kDirect ? "dr" : "ar";
  return name;
}

std::optional<VariantConfig> parse_variant(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower.size() != 4 || lower[1] != 'c' || lower[3] != 'r') return std::nullopt;
  VariantConfig v;
  switch (lower[0]) {
    case 'n': v.covariance_refit = CovarianceRefit::kNone; break;
    case 'f': v.covariance_refit = CovarianceRefit::kFull; break;
    case 'd': v.covariance_refit = CovarianceRefit::kDiagonal; break;
    default: return std::nullopt;
  }
  switch (lower[2]) {
    case 'd': v.rotation_mode = RotationMode::kDirect; break;
    case 'a': v.rotation_mode = RotationMode::kApproxThenDirect; break;
    default: return std::nullopt;
  }
  return v;
}

namespace {

Eigen::LLT<Matrix3d> checked_llt(const Matrix3d& covariance, SensorId s) {
  Eigen::LLT<Matrix3d> llt(symmetrized(covariance));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kInvalidState,
                std::string(to_string(s)) + " covariance is not positive definite");
  }
  return llt;
}

Matrix3d checked_inverse(const Matrix3d& covariance, SensorId s) {
  return symmetrized(checked_llt(covariance, s).solve(Matrix3d::Identity()));
}

/// Solves a symmetric normal system, refusing near-singular ones.
Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& normal, const Eigen::VectorXd& rhs,
                                       const char* what) {
  const Eigen::MatrixXd sym = symmetrized(normal);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  const Eigen::VectorXd& ev = solver.eigenvalues();
  if (!(ev(0) > 1e-12 * ev(ev.size() - 1))) {
    throw Error(ErrorCode::kDegenerateGeometry,
                std::string(what) + " normal equations are singular; orientations are not diverse enough");
  }
  const Eigen::MatrixXd& v = solver.eigenvectors();
  return v * (v.transpose() * rhs).cwiseQuotient(ev);
}

}  // namespace

double cost_full(const CalibrationState& state, const RawDataset& data) {
  double cost = 0.0;
  for (SensorId s : kSensors) {
    const auto llt = checked_llt(state.sensor(s).covariance, s);
    const Matrix3d lower = llt.matrixL();
    const double log_det = 2.0 * lower.diagonal().array().log().sum();
    const auto& sets = data.sets(s);
    for (std::size_t i = 0; i < sets.size(); ++i) {
      const Vector3d mean = state.reconstructed_mean(s, i);
      for (const auto& v : sets[i]) {
        const Vector3d r = lower.triangularView<Eigen::Lower>().solve(mean - v);
        cost += log_det + r.squaredNorm();
      }
    }
  }
  return cost;
}

double cost_simplified(const CalibrationState& state, const SummaryStats& stats) {
  double cost = 0.0;
  for (SensorId s : kSensors) {
    const Matrix3d info = checked_inverse(state.sensor(s).covariance, s);
    const SensorSummary& summary = stats.sensor(s);
    for (std::size_t i = 0; i < stats.size(); ++i) {
      const Vector3d r = state.reconstructed_mean(s, i) - summary.means[i];
      cost += summary.counts[i] * r.dot(info * r);
    }
  }
  return cost;
}

namespace {

struct SensorTerms {
  Matrix3d gain;
  Vector3d bias;
  Vector3d field;
  Matrix3d info;
};

std::array<SensorTerms, 2> sensor_terms(const CalibrationState& state) {
  std::array<SensorTerms, 2> terms;
  for (SensorId s : kSensors) {
    const SensorParamsd& p = state.sensor(s);
    terms[index_of(s)] = {p.gain, p.bias, field_vector(state.fields, s), checked_inverse(p.covariance, s)};
  }
  return terms;
}

double rotation_cost_impl(const std::array<SensorTerms, 2>& terms, const SummaryStats& stats,
                          std::size_t set, const Vector4d& q, Vector4d* grad) {
  const Matrix3d rot = rotation_polynomial<double>(q) / q.squaredNorm();
  double cost = 0.0;
  Matrix3d dr = Matrix3d::Zero();
  for (SensorId s : kSensors) {
    const SensorTerms& t = terms[index_of(s)];
    const SensorSummary& summary = stats.sensor(s);
    const double count = summary.counts[set];
    const Vector3d r = t.gain * (rot * t.field) + t.bias - summary.means[set];
    const Vector3d weighted = t.info * r;
    cost += count * r.dot(weighted);
    if (grad) dr += 2.0 * count * (t.gain.transpose() * weighted) * t.field.transpose();
  }
  if (grad) {
    const auto jac = rotation_jacobian<double>(q);
    for (int k = 0; k < 4; ++k) (*grad)(k) = (dr.array() * jac[k].array()).sum();
  }
  return cost;
}

}  // namespace

double set_rotation_cost(const CalibrationState& state, const SummaryStats& stats, std::size_t set,
                         const Vector4d& q, Vector4d* grad) {
  return rotation_cost_impl(sensor_terms(state), stats, set, q, grad);
}

std::vector<UnitQuaterniond> step_rotations(const CalibrationState& state, const SummaryStats& stats,
                                            RotationStep mode, const DescentOptions& options) {
  std::vector<UnitQuaterniond> out(stats.size());
  if (mode == RotationStep::kApprox) {
    const double w_a = uncertainty_weight(state.accel);
    const double w_m = uncertainty_weight(state.mag);
    for (std::size_t i = 0; i < stats.size(); ++i) {
      out[i] = approximate_rotation(state, stats.accel.means[i], stats.mag.means[i], w_a, w_m);
    }
    return out;
  }

  const auto terms = sensor_terms(state);
  for (std::size_t i = 0; i < stats.size(); ++i) {
    auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
      Vector4d g;
      const double c = rotation_cost_impl(terms, stats, i, x.head<4>(), grad ? &g : nullptr);
      if (grad) *grad = g;
      return c;
    };
    auto project = [](Eigen::VectorXd& x) { x.normalize(); };
    const UnitQuaterniond& q0 = state.rotations[i];
    Eigen::VectorXd x0(4);
    x0 << q0.w(), q0.x(), q0.y(), q0.z();
    const DescentResult run = gradient_descent(objective, x0, project, options);
    out[i] = UnitQuaterniond(run.x(0), run.x(1), run.x(2), run.x(3));
  }
  return out;
}

BiasFieldSolution solve_bias_field(const CalibrationState& state, const SummaryStats& stats) {
  const std::size_t n = stats.size();
  BiasFieldSolution out;

  {
    // Regressors [K_a R_i e_z | I], unknowns (g_z, b_a).
    const Matrix3d info = checked_inverse(state.accel.covariance, SensorId::kAccelerometer);
    Eigen::Matrix4d normal = Eigen::Matrix4d::Zero();
    Eigen::Vector4d rhs = Eigen::Vector4d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Matrix<double, 3, 4> x;
      x.col(0) = state.accel.gain * (state.rotations[i].toRotationMatrix() * Vector3d::UnitZ());
      x.rightCols<3>() = Matrix3d::Identity();
      const Matrix3d w = stats.accel.counts[i] * info;
      normal += x.transpose() * w * x;
      rhs += x.transpose() * w * stats.accel.means[i];
    }
    const Eigen::VectorXd beta = solve_normal_equations(normal, rhs, "accelerometer bias/field");
    out.g_z = beta(0);
    out.accel_bias = beta.tail<3>();
  }
  {
    // Regressors [K_m R_i e_x | K_m R_i e_z | I], unknowns (h_x, h_z, b_m).
    const Matrix3d info = checked_inverse(state.mag.covariance, SensorId::kMagnetometer);
    Eigen::Matrix<double, 5, 5> normal = Eigen::Matrix<double, 5, 5>::Zero();
    Eigen::Matrix<double, 5, 1> rhs = Eigen::Matrix<double, 5, 1>::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const Matrix3d kr = state.mag.gain * state.rotations[i].toRotationMatrix();
      Eigen::Matrix<double, 3, 5> x;
      x.col(0) = kr.col(0);
      x.col(1) = kr.col(2);
      x.rightCols<3>() = Matrix3d::Identity();
      const Matrix3d w = stats.mag.counts[i] * info;
      normal += x.transpose() * w * x;
      rhs += x.transpose() * w * stats.mag.means[i];
    }
    const Eigen::VectorXd beta = solve_normal_equations(normal, rhs, "magnetometer bias/field");
    out.h_x = beta(0);
    out.h_z = beta(1);
    out.mag_bias = beta.tail<3>();
  }
  return out;
}

CalibrationState apply_bias_field(const CalibrationState& state, const BiasFieldSolution& solution) {
  CalibrationState out = state;
  out.accel.bias = solution.accel_bias;
  out.mag.bias = solution.mag_bias;
  // K_a (0,0,g_z) = (-K_a g_z)(0,0,-1) and K_m (h_x,0,h_z) = (K_m h_x)(1,0,h_z/h_x).
  out.accel.gain = -state.accel.gain * solution.g_z;
  out.mag.gain = state.mag.gain * solution.h_x;
  out.fields.g_z = -1.0;
  out.fields.h_x = 1.0;
  out.fields.h_z = solution.h_z / solution.h_x;
  return out;
}

CalibrationState step_bias_field(const CalibrationState& state, const SummaryStats& stats) {
  return apply_bias_field(state, solve_bias_field(state, stats));
}

CalibrationState step_gain(const CalibrationState& state, const SummaryStats& stats) {
  const std::size_t n = stats.size();
  CalibrationState out = state;

  {
    const Matrix3d info = checked_inverse(state.accel.covariance, SensorId::kAccelerometer);
    Eigen::Matrix<double, 6, 6> normal = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const Vector3d g = state.rotations[i].toRotationMatrix() * state.fields.gravity();
      Eigen::Matrix<double, 3, 6> design = Eigen::Matrix<double, 3, 6>::Zero();
      design.block<1, 3>(0, 0) = g.transpose();
      design.block<1, 2>(1, 3) = g.tail<2>().transpose();
      design(2, 5) = g(2);
      const Matrix3d w = stats.accel.counts[i] * info;
      normal += design.transpose() * w * design;
      rhs += design.transpose() * w * (stats.accel.means[i] - state.accel.bias);
    }
    const Eigen::VectorXd k = solve_normal_equations(normal, rhs, "accelerometer gain");
    out.accel.gain << k(0), k(1), k(2), 0.0, k(3), k(4), 0.0, 0.0, k(5);
  }
  {
    const Matrix3d info = checked_inverse(state.mag.covariance, SensorId::kMagnetometer);
    Eigen::Matrix<double, 9, 9> normal = Eigen::Matrix<double, 9, 9>::Zero();
    Eigen::Matrix<double, 9, 1> rhs = Eigen::Matrix<double, 9, 1>::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const Vector3d h = state.rotations[i].toRotationMatrix() * state.fields.magnetic();
      Eigen::Matrix<double, 3, 9> design = Eigen::Matrix<double, 3, 9>::Zero();
      for (int row = 0; row < 3; ++row) design.block<1, 3>(row, 3 * row) = h.transpose();
      const Matrix3d w = stats.mag.counts[i] * info;
      normal += design.transpose() * w * design;
      rhs += design.transpose() * w * (stats.mag.means[i] - state.mag.bias);
    }
    const Eigen::VectorXd k = solve_normal_equations(normal, rhs, "magnetometer gain");
    out.mag.gain << k(0), k(1), k(2), k(3), k(4), k(5), k(6), k(7), k(8);
  }
  return out;
}

Matrix3d residual_covariance(const CalibrationState& state, const RawDataset& data, SensorId s) {
  const auto& sets = data.sets(s);
  Matrix3d scatter = Matrix3d::Zero();
  long total = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const Vector3d mean = state.reconstructed_mean(s, i);
    for (const auto& v : sets[i]) {
      const Vector3d r = v - mean;
      scatter += r * r.transpose();
    }
    total += static_cast<long>(sets[i].size());
  }
  if (total == 0) throw Error(ErrorCode::kInsufficientData, "no samples for covariance refit");
  return symmetrized(scatter / static_cast<double>(total));
}

CovarianceStepResult step_covariance(const CalibrationState& state, const RawDataset& data,
                                     CovarianceRefit shape) {
  CovarianceStepResult out{state, false};
  if (shape == CovarianceRefit::kNone) return out;
  for (SensorId s : kSensors) {
    Matrix3d cov = residual_covariance(state, data, s);
    if (shape == CovarianceRefit::kDiagonal) {
      const Vector3d variances = cov.diagonal();
      cov = variances.asDiagonal();
    }
    const RegularizedCovariance reg = regularize_covariance(cov);
    out.state.sensor(s).covariance = reg.matrix;
    out.jittered = out.jittered || reg.jittered;
  }
  return out;
}

double governing_cost(const CalibrationState& state, const SummaryStats& stats,
                      const RawDataset& data, CovarianceRefit refit) {
  return refit == CovarianceRefit::kNone ? cost_simplified(state, stats) : cost_full(state, data);
}

CalibrationResult calibrate(const RawDataset& data, const CalibrationOptions& options, Rng& rng) {
  const auto start = std::chrono::steady_clock::now();
  if (!(options.convergence.gamma > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "gamma must be positive");
  }

  CalibrationResult result;
  result.stats = summarize(data);
  const SummaryStats& stats = result.stats;
  InitialEstimate init = initial_estimate(stats, options.init, rng);
  Diagnostics& diag = result.diagnostics;
  diag.coupling = init.coupling;
  diag.covariance_jittered = stats.accel.jittered || stats.mag.jittered;

  const CovarianceRefit refit = options.variant.covariance_refit;
  CalibrationState state = std::move(init.state);
  if (refit == CovarianceRefit::kDiagonal) {
    // Start inside the diagonal family so the first refit is a descent step.
    for (SensorId s : kSensors) {
      const Vector3d variances = state.sensor(s).covariance.diagonal();
      state.sensor(s).covariance = variances.asDiagonal();
    }
  }
  double previous = governing_cost(state, stats, data, refit);
  diag.costs.push_back(previous);
  bool approximate = options.variant.rotation_mode == RotationMode::kApproxThenDirect;

  for (int k = 1; k <= options.convergence.max_outer_iters; ++k) {
    CalibrationState candidate = state;
    candidate.rotations = step_rotations(candidate, stats,
                                         approximate ? RotationStep::kApprox : RotationStep::kDirect,
                                         options.rotation_descent);
    candidate = step_bias_field(candidate, stats);
    candidate = step_gain(candidate, stats);
    bool jittered = false;
    if (refit != CovarianceRefit::kNone) {
      CovarianceStepResult cov = step_covariance(candidate, data, refit);
      candidate = std::move(cov.state);
      jittered = cov.jittered;
    }
    const double current = governing_cost(candidate, stats, data, refit);
    diag.iterations = k;

    if (approximate && current > previous) {
      // The approximation stopped paying off: discard this iteration and use
      // descent from here on.
      approximate = false;
      diag.switch_iteration = k;
      continue;
    }

    if (current > previous) {
      // Exact block steps cannot raise the cost; an increase is round-off at
      // the optimum. Keep the better state.
      diag.converged = true;
      break;
    }

    state = std::move(candidate);
    diag.covariance_jittered = diag.covariance_jittered || jittered;
    diag.costs.push_back(current);
    if (previous - current < options.convergence.gamma) {
      diag.converged = true;
      break;
    }
    previous = current;
  }

  result.state = std::move(state);
  diag.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace magcal
