#include "magcal/simulator.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

namespace magcal {

Matrix3d sample_covariance(Rng& rng) {
  std::uniform_real_distribution<double> diag(0.5, 2.0);
  std::uniform_real_distribution<double> off(-0.2, 0.2);
  std::uniform_real_distribution<double> exponent(-4.0, -2.0);
  for (;;) {
    Matrix3d s;
    for (int i = 0; i < 3; ++i) s(i, i) = diag(rng);
    for (int i = 0; i < 3; ++i) {
      for (int j = i + 1; j < 3; ++j) s(i, j) = s(j, i) = off(rng);
    }
    const Matrix3d cov = std::pow(10.0, exponent(rng)) * s;
    if (Eigen::LLT<Matrix3d>(cov).info() == Eigen::Success) return cov;
  }
}

namespace {

SensorParamsd sample_sensor(Rng& rng) {
  std::uniform_real_distribution<double> bias(-1.0, 1.0);
  std::uniform_real_distribution<double> perturb(-0.1, 0.1);
  SensorParamsd p;
  for (int k = 0; k < 3; ++k) p.bias(k) = bias(rng);
  p.gain = Matrix3d::Identity();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.gain(r, c) += perturb(rng);
  }
  p.covariance = sample_covariance(rng);
  return p;
}

}  // namespace

ScenarioTruth gen_scenario(Rng& rng) {
  ScenarioTruth truth;
  truth.fields.g_z = std::uniform_real_distribution<double>(-1.5, -0.5)(rng);
  truth.fields.h_x = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
  truth.fields.h_z = std::uniform_real_distribution<double>(-1.5, 1.5)(rng);
  truth.accel = sample_sensor(rng);
  truth.mag = sample_sensor(rng);
  truth.extra_rotation = random_rotation<double>(rng).toRotationMatrix();
  std::bernoulli_distribution flip(0.5);
  for (int k = 0; k < 3; ++k) truth.mirror(k, k) = flip(rng) ? -1.0 : 1.0;
  truth.mag.gain = truth.mirror * truth.extra_rotation * truth.mag.gain;
  return truth;
}

SimulatedDataset gen_dataset(const ScenarioTruth& truth, std::size_t sets, CountRange counts, Rng& rng) {
  if (counts.min < 1 || counts.max < counts.min) {
    throw Error(ErrorCode::kInvalidArgument, "invalid sample-count range");
  }
  SimulatedDataset out;
  NoiseSampler<double> accel_noise(truth.accel.covariance);
  NoiseSampler<double> mag_noise(truth.mag.covariance);
  std::uniform_int_distribution<int> count(counts.min, counts.max);
  for (std::size_t i = 0; i < sets; ++i) {
    const int delta = count(rng);
    const UnitQuaterniond q = random_rotation<double>(rng);
    const Matrix3d rot = q.toRotationMatrix();
    const Vector3d accel_mean = truth.accel.mean_reading(rot * truth.fields.gravity());
    const Vector3d mag_mean = truth.mag.mean_reading(rot * truth.fields.magnetic());
    SampleSet accel(static_cast<std::size_t>(delta));
    SampleSet mag(static_cast<std::size_t>(delta));
    for (auto& v : accel) v = accel_mean + accel_noise(rng);
    for (auto& v : mag) v = mag_mean + mag_noise(rng);
    out.data.accel.push_back(std::move(accel));
    out.data.mag.push_back(std::move(mag));
    out.rotations.push_back(q);
    out.counts.push_back(delta);
  }
  return out;
}

ReconstructionError reconstruction_error(const ScenarioTruth& truth,
                                         std::span<const UnitQuaterniond> true_rotations,
                                         const CalibrationState& estimate,
                                         std::span<const int> counts) {
  ReconstructionError out;
  for (SensorId s : kSensors) {
    const SensorParamsd& p = s == SensorId::kAccelerometer ? truth.accel : truth.mag;
    const Eigen::LLT<Matrix3d> llt(p.covariance);
    const Vector3d field = field_vector(truth.fields, s);
    double weighted = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const Vector3d mu = p.mean_reading(true_rotations[i].toRotationMatrix() * field);
      const Vector3d diff = mu - estimate.reconstructed_mean(s, i);
      weighted += counts[i] * diff.dot(llt.solve(diff));
      total += counts[i];
    }
    (s == SensorId::kAccelerometer ? out.accel : out.mag) = std::sqrt(weighted / total);
  }
  return out;
}

std::vector<UnitQuaterniond> fit_rotations(const CalibrationState& params, const SummaryStats& stats,
                                           const DescentOptions& options) {
  CalibrationState state = params;
  state.rotations = step_rotations(state, stats, RotationStep::kApprox);
  return step_rotations(state, stats, RotationStep::kDirect, options);
}

TestFit fit_test_rotations(const CalibrationState& params, const ScenarioTruth& truth,
                           const SimulatedDataset& test, const DescentOptions& options) {
  const SummaryStats stats = summarize(test.data);
  TestFit out;
  out.rotations = fit_rotations(params, stats, options);
  CalibrationState state = params;
  state.rotations = out.rotations;
  out.error = reconstruction_error(truth, test.rotations, state, test.counts);
  return out;
}

std::uint64_t run_seed(std::uint64_t campaign_seed, int run) {
  std::seed_seq seq{static_cast<std::uint32_t>(campaign_seed),
                    static_cast<std::uint32_t>(campaign_seed >> 32), static_cast<std::uint32_t>(run)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

namespace {

struct CalibrationJob {
  VariantConfig variant;
  double gamma;
  std::size_t sets;
};

std::vector<RunReport> simulate_run(const MonteCarloConfig& config, int run) {
  const std::uint64_t seed = run_seed(config.seed, run);
  // Independent streams: scenario/data, and the calibration restarts.
  Rng data_rng(seed);
  const std::uint64_t calibration_seed = run_seed(seed, 1);

  const ScenarioTruth truth = gen_scenario(data_rng);
  std::size_t max_sets = config.sets;
  if (config.sweep == SweepKind::kSets) {
    for (double v : config.sweep_values) max_sets = std::max(max_sets, static_cast<std::size_t>(v));
  }
  const SimulatedDataset train = gen_dataset(truth, max_sets, config.counts, data_rng);
  SimulatedDataset test;
  if (config.test_split) test = gen_dataset(truth, max_sets, config.counts, data_rng);

  std::vector<CalibrationJob> jobs;
  for (const VariantConfig& v : config.variants) {
    switch (config.sweep) {
      case SweepKind::kNone: jobs.push_back({v, config.gamma, config.sets}); break;
      case SweepKind::kGamma:
        for (double g : config.sweep_values) jobs.push_back({v, g, config.sets});
        break;
      case SweepKind::kSets:
        for (double n : config.sweep_values) {
          jobs.push_back({v, config.gamma, static_cast<std::size_t>(n)});
        }
        break;
    }
  }

  const auto prefix = [](const SimulatedDataset& d, std::size_t n) {
    SimulatedDataset out;
    out.data = first_sets(d.data, n);
    out.rotations.assign(d.rotations.begin(), d.rotations.begin() + static_cast<std::ptrdiff_t>(n));
    out.counts.assign(d.counts.begin(), d.counts.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
  };

  std::vector<RunReport> reports;
  for (const CalibrationJob& job : jobs) {
    RunReport report;
    report.run = run;
    report.seed = seed;
    report.variant = variant_name(job.variant);
    report.gamma = job.gamma;
    report.sets = job.sets;
    report.has_test = config.test_split;
    try {
      const SimulatedDataset train_n = prefix(train, job.sets);
      CalibrationOptions options;
      options.variant = job.variant;
      options.convergence.gamma = job.gamma;
      options.convergence.max_outer_iters = config.max_outer_iters;
      options.init.coupling.restarts = config.restarts;
      Rng calibration_rng(calibration_seed);
      const CalibrationResult result = calibrate(train_n.data, options, calibration_rng);
      report.time_s = result.diagnostics.elapsed_seconds;
      report.iterations = result.diagnostics.iterations;
      report.switch_iteration = result.diagnostics.switch_iteration;
      report.final_cost = result.diagnostics.final_cost();
      report.train = reconstruction_error(truth, train_n.rotations, result.state, train_n.counts);
      if (config.test_split) {
        report.test = fit_test_rotations(result.state, truth, prefix(test, job.sets)).error;
      }
    } catch (const std::exception& e) {
      constexpr double nan = std::numeric_limits<double>::quiet_NaN();
      report.failed = true;
      report.failure = e.what();
      report.train = {nan, nan};
      report.test = {nan, nan};
    }
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace

std::vector<RunReport> run_monte_carlo(const MonteCarloConfig& config) {
  if (config.runs < 0) throw Error(ErrorCode::kInvalidArgument, "runs must be non-negative");
  if (config.variants.empty()) throw Error(ErrorCode::kInvalidArgument, "no variants requested");
  if (config.sweep != SweepKind::kNone && config.sweep_values.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "sweep requested without values");
  }

  std::vector<std::vector<RunReport>> per_run(static_cast<std::size_t>(config.runs));
  int threads = config.threads > 0 ? config.threads
                                   : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::max(1, std::min(threads, config.runs));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int run = next++; run < config.runs; run = next++) {
      per_run[static_cast<std::size_t>(run)] = simulate_run(config, run);
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::vector<RunReport> reports;
  for (auto& r : per_run) {
    for (auto& report : r) reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace magcal
