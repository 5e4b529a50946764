#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "magcal/calibration_state.hpp"
#include "magcal/preprocess.hpp"
#include "magcal/refine.hpp"

namespace magcal {

/// Ground truth of one simulated sensor pair. The magnetometer gain already
/// includes the extra rotation and mirroring: K_m' = M R' K_m.
struct ScenarioTruth {
  SensorParamsd accel;
  SensorParamsd mag;
  FieldParamsd fields;
  Matrix3d mirror = Matrix3d::Identity();
  Matrix3d extra_rotation = Matrix3d::Identity();
};

/// Covariance alpha * S with S_ii ~ U(0.5, 2), S_ij = S_ji ~ U(-0.2, 0.2),
/// alpha = 10^e, e ~ U(-4, -2). Resampled until positive definite.
Matrix3d sample_covariance(Rng& rng);

ScenarioTruth gen_scenario(Rng& rng);

struct CountRange {
  int min = 400;
  int max = 600;
};

struct SimulatedDataset {
  RawDataset data;
  std::vector<UnitQuaterniond> rotations;
  /// Samples per set, shared by both sensors.
  std::vector<int> counts;
};

/// N static sets at uniformly random orientations; both sensors take the same
/// number of samples per set.
SimulatedDataset gen_dataset(const ScenarioTruth& truth, std::size_t sets, CountRange counts, Rng& rng);

struct ReconstructionError {
  double accel = 0.0;
  double mag = 0.0;
};

/// Count-weighted RMS Mahalanobis distance (under the true covariance) between
/// true and reconstructed set means, in standard deviations.
ReconstructionError reconstruction_error(const ScenarioTruth& truth,
                                         std::span<const UnitQuaterniond> true_rotations,
                                         const CalibrationState& estimate,
                                         std::span<const int> counts);

/// Rotations for new sets under fixed sensor parameters: closed-form
/// approximation, then direct descent.
std::vector<UnitQuaterniond> fit_rotations(const CalibrationState& params, const SummaryStats& stats,
                                           const DescentOptions& options = {});

struct TestFit {
  std::vector<UnitQuaterniond> rotations;
  ReconstructionError error;
};

TestFit fit_test_rotations(const CalibrationState& params, const ScenarioTruth& truth,
                           const SimulatedDataset& test, const DescentOptions& options = {});

enum class SweepKind { kNone, kGamma, kSets };

struct MonteCarloConfig {
  int runs = 100;
  std::size_t sets = 15;
  CountRange counts{};
  double gamma = 1e-4;
  std::vector<VariantConfig> variants = {VariantConfig::ncdr(), VariantConfig::ncar(),
                                         VariantConfig::fcar(), VariantConfig::dcar()};
  std::uint64_t seed = 1;
  bool test_split = true;
  SweepKind sweep = SweepKind::kNone;
  /// Gamma values or set counts, depending on the sweep kind.
  std::vector<double> sweep_values;
  int restarts = 100;
  int max_outer_iters = 500;
  /// Worker threads; 0 means hardware concurrency. Results do not depend on it.
  int threads = 1;
};

struct RunReport {
  int run = 0;
  std::uint64_t seed = 0;
  std::string variant;
  double gamma = 0.0;
  std::size_t sets = 0;
  ReconstructionError train{};
  ReconstructionError test{};
  bool has_test = false;
  double time_s = 0.0;
  int iterations = 0;
  int switch_iteration = -1;
  double final_cost = 0.0;
  bool failed = false;
  std::string failure;
};

/// Seed of run `run` in a campaign, independent of scheduling.
std::uint64_t run_seed(std::uint64_t campaign_seed, int run);

/// Reports ordered by (run, variant, sweep value).
std::vector<RunReport> run_monte_carlo(const MonteCarloConfig& config);

}  // namespace magcal
