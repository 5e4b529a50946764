#include "magcal/cli.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <CLI11.hpp>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <thread>

#include "magcal/io.hpp"
#include "magcal/refine.hpp"
#include "magcal/simulator.hpp"

namespace magcal {
namespace {

namespace fs = std::filesystem;

constexpr std::size_t kMinSets = 9;

[[noreturn]] void usage(const std::string& message) { throw Error(ErrorCode::kUsage, message); }

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  return out;
}

std::vector<double> parse_list(std::string_view text, std::string_view what) {
  std::vector<double> values;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = std::min(text.find(',', start), text.size());
    const std::string item(text.substr(start, comma - start));
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || end != item.c_str() + item.size()) {
      usage(fmt::format("--sweep: cannot parse '{}' as a {}", item, what));
    }
    values.push_back(v);
    start = comma + 1;
  }
  return values;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MAGCAL_THREADS"); env != nullptr && *env != '\0') {
    int value = 0;
    const std::string_view text(env);
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || value < 1) {
      usage(fmt::format("MAGCAL_THREADS must be a positive integer, got '{}'", text));
    }
    return value;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

struct SimulateFlags {
  int runs = 100;
  std::size_t sets = 15;
  double gamma = 1e-4;
  std::vector<std::string> variants = {"ncdr", "ncar", "fcar", "dcar"};
  std::uint64_t seed = 1;
  std::string sweep;
  int delta_min = 400;
  int delta_max = 600;
  int restarts = 100;
  int max_iters = 500;
  bool no_test = false;
  int threads = 0;
  std::string out_dir = ".";
};

int cmd_simulate(const SimulateFlags& f, std::ostream& out) {
  MonteCarloConfig config;
  if (f.runs < 1) usage("--runs must be at least 1");
  if (f.sets < kMinSets) usage(fmt::format("--sets must be at least {}", kMinSets));
  if (!(f.gamma > 0.0)) usage("--gamma must be positive");
  if (f.delta_min < 1 || f.delta_max < f.delta_min) usage("need 1 <= --delta-min <= --delta-max");
  if (f.restarts < 1) usage("--restarts must be at least 1");
  if (f.max_iters < 1) usage("--max-iters must be at least 1");
  config.runs = f.runs;
  config.sets = f.sets;
  config.gamma = f.gamma;
  config.seed = f.seed;
  config.counts = {f.delta_min, f.delta_max};
  config.restarts = f.restarts;
  config.max_outer_iters = f.max_iters;
  config.test_split = !f.no_test;
  config.threads = resolve_threads(f.threads);
  config.variants.clear();
  for (const std::string& name : f.variants) {
    const auto v = parse_variant(name);
    if (!v) usage(fmt::format("unknown variant '{}' (expected ncdr, ncar, fcar, dcar)", name));
    config.variants.push_back(*v);
  }
  if (!f.sweep.empty()) {
    const auto eq = f.sweep.find('=');
    if (eq == std::string::npos) usage("--sweep expects gamma=v1,v2,... or sets=n1,n2,...");
    const std::string kind = f.sweep.substr(0, eq);
    const std::string_view values = std::string_view(f.sweep).substr(eq + 1);
    if (kind == "gamma") {
      config.sweep = SweepKind::kGamma;
      config.sweep_values = parse_list(values, "gamma value");
      for (double g : config.sweep_values) {
        if (!(g > 0.0)) usage("--sweep gamma values must be positive");
      }
    } else if (kind == "sets") {
      config.sweep = SweepKind::kSets;
      config.sweep_values = parse_list(values, "set count");
      for (double n : config.sweep_values) {
        if (n != std::floor(n) || n < static_cast<double>(kMinSets)) {
          usage(fmt::format("--sweep sets values must be integers >= {}", kMinSets));
        }
      }
    } else {
      usage(fmt::format("unknown sweep '{}' (expected gamma or sets)", kind));
    }
  }

  const std::vector<RunReport> reports = run_monte_carlo(config);
  const fs::path dir(f.out_dir);
  {
    auto file = open_output(dir / "report.csv");
    write_report_csv(file, reports);
  }
  {
    auto file = open_output(dir / "summary.csv");
    write_summary_csv(file, reports);
  }
  {
    auto file = open_output(dir / "timing.csv");
    write_timing_csv(file, reports);
  }
  int failures = 0;
  for (const RunReport& r : reports) failures += r.failed ? 1 : 0;
  fmt::print(out, "{} calibrations ({} failed); reports written to {}\n", reports.size(), failures,
             dir.string());
  return kExitOk;
}

struct CalibrateFlags {
  std::string input;
  std::string variant = "ncar";
  double gamma = 1e-4;
  int window = kDefaultSegmentWindow;
  double tol = kDefaultSegmentTolerance;
  std::uint64_t seed = 1;
  int restarts = 100;
  int max_iters = 500;
  std::string output;
  std::string residuals;
  std::string sets;
};

fs::path sibling(const fs::path& output, std::string_view suffix) {
  fs::path p = output;
  p.replace_extension();
  p += suffix;
  return p;
}

int cmd_calibrate(const CalibrateFlags& f, std::ostream& out) {
  const auto variant = parse_variant(f.variant);
  if (!variant) usage(fmt::format("unknown variant '{}'", f.variant));
  if (!(f.gamma > 0.0)) usage("--gamma must be positive");
  if (f.window < 1) usage("--window must be at least 1");
  if (!(f.tol > 0.0)) usage("--tol must be positive");
  if (f.restarts < 1) usage("--restarts must be at least 1");
  if (f.max_iters < 1) usage("--max-iters must be at least 1");

  const SensorLog log = read_sensor_log(f.input);
  const Segmentation seg = [&] {
    try {
      return log.set_ids ? group_by_set_id(log.readings, *log.set_ids)
                         : segment_by_norm(log.readings, f.window, f.tol);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyDataset) throw;
      return Segmentation{};
    }
  }();
  if (seg.data.size() < kMinSets) {
    throw Error(ErrorCode::kInsufficientOrientations,
                fmt::format("found {} static sets, need at least {}. Hold the device still in more "
                            "distinct orientations, or adjust --window (now {}) / --tol (now {}), "
                            "or label sets with a set_id column",
                            seg.data.size(), kMinSets, f.window, f.tol));
  }

  CalibrationOptions options;
  options.variant = *variant;
  options.convergence.gamma = f.gamma;
  options.convergence.max_outer_iters = f.max_iters;
  options.init.coupling.restarts = f.restarts;
  Rng rng(f.seed);
  const CalibrationResult result = calibrate(seg.data, options, rng);
  const CalibrationState& state = result.state;

  CalibrationFile file;
  file.state = state;
  file.provenance = {file_digest(f.input),           f.seed, variant_name(*variant), f.gamma,
                     result.diagnostics.iterations, result.diagnostics.final_cost()};
  const fs::path output(f.output);
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  write_calibration(output, file);

  // Per-sample residuals against the reconstructed set mean.
  {
    auto table = open_output(f.residuals.empty() ? sibling(output, ".residuals.csv") : fs::path(f.residuals));
    table << "sample,set,sensor,x,y,z,mean_x,mean_y,mean_z\n";
    for (std::size_t i = 0; i < seg.ranges.size(); ++i) {
      for (SensorId s : kSensors) {
        const Vector3d mean = state.reconstructed_mean(s, i);
        const SampleSet& samples = seg.data.sets(s)[i];
        for (std::size_t k = 0; k < samples.size(); ++k) {
          const Vector3d& v = samples[k];
          fmt::print(table, "{},{},{},{},{},{},{},{},{}\n", seg.ranges[i].first + k, i, to_string(s),
                     format_real(v(0)), format_real(v(1)), format_real(v(2)), format_real(mean(0)),
                     format_real(mean(1)), format_real(mean(2)));
        }
      }
    }
  }

  // Per-set mean residuals, in estimated per-sample standard deviations.
  {
    auto table = open_output(f.sets.empty() ? sibling(output, ".sets.csv") : fs::path(f.sets));
    table << "set,begin,end,count,accel_residual_sigma,mag_residual_sigma\n";
    const Eigen::LLT<Matrix3d> accel_llt(state.accel.covariance);
    const Eigen::LLT<Matrix3d> mag_llt(state.mag.covariance);
    for (std::size_t i = 0; i < seg.ranges.size(); ++i) {
      const Vector3d ra = result.stats.accel.means[i] - state.reconstructed_mean(SensorId::kAccelerometer, i);
      const Vector3d rm = result.stats.mag.means[i] - state.reconstructed_mean(SensorId::kMagnetometer, i);
      fmt::print(table, "{},{},{},{},{},{}\n", i, seg.ranges[i].first, seg.ranges[i].second,
                 seg.ranges[i].second - seg.ranges[i].first,
                 format_real(std::sqrt(ra.dot(accel_llt.solve(ra)))),
                 format_real(std::sqrt(rm.dot(mag_llt.solve(rm)))));
    }
  }

  fmt::print(out, "{} sets, {} iterations, final cost {}; calibration written to {}\n", seg.data.size(),
             result.diagnostics.iterations, format_real(result.diagnostics.final_cost()), output.string());
  return kExitOk;
}

struct ApplyFlags {
  std::string calibration;
  std::string input;
  std::string output;
};

int cmd_apply(const ApplyFlags& f, std::ostream& out) {
  const CalibrationFile cal = read_calibration(f.calibration);
  validate(cal.state.accel);
  validate(cal.state.mag);
  SensorLog log = read_sensor_log(f.input);
  for (ReadingPair& r : log.readings) {
    r.accel = invert_reading(cal.state.accel, r.accel);
    r.mag = invert_reading(cal.state.mag, r.mag);
  }
  auto file = open_output(f.output);
  write_sensor_log(file, log);
  fmt::print(out, "{} rows corrected; written to {}\n", log.readings.size(), f.output);
  return kExitOk;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app("Joint magnetometer and accelerometer calibration", "magcal");
  app.require_subcommand(1);

  SimulateFlags sim;
  CLI::App* simulate = app.add_subcommand("simulate", "Run a Monte Carlo campaign on simulated sensors");
  simulate->add_option("--runs", sim.runs, "Monte Carlo runs")->capture_default_str();
  simulate->add_option("--sets", sim.sets, "Static sets per dataset (N)")->capture_default_str();
  simulate->add_option("--gamma", sim.gamma, "Stop threshold on the cost decrease")->capture_default_str();
  simulate->add_option("--variants", sim.variants, "Variants: ncdr, ncar, fcar, dcar")
      ->delimiter(',')
      ->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Campaign seed")->capture_default_str();
  simulate->add_option("--sweep", sim.sweep, "gamma=v1,v2,... or sets=n1,n2,...");
  simulate->add_option("--delta-min", sim.delta_min, "Minimum samples per set")->capture_default_str();
  simulate->add_option("--delta-max", sim.delta_max, "Maximum samples per set")->capture_default_str();
  simulate->add_option("--restarts", sim.restarts, "Restarts of the rotation/inclination search")
      ->capture_default_str();
  simulate->add_option("--max-iters", sim.max_iters, "Outer iteration cap")->capture_default_str();
  simulate->add_flag("--no-test", sim.no_test, "Skip the held-out test datasets");
  simulate->add_option("--threads", sim.threads, "Worker threads (0: MAGCAL_THREADS or all cores)")
      ->capture_default_str();
  simulate->add_option("--out", sim.out_dir, "Output directory")->capture_default_str();

  CalibrateFlags cal;
  CLI::App* calibrate_cmd = app.add_subcommand("calibrate", "Calibrate from a CSV sensor log");
  calibrate_cmd->add_option("--input", cal.input, "Sensor log CSV")->required();
  calibrate_cmd->add_option("--output", cal.output, "Calibration file to write")->required();
  calibrate_cmd->add_option("--variant", cal.variant, "ncdr, ncar, fcar, dcar")->capture_default_str();
  calibrate_cmd->add_option("--gamma", cal.gamma, "Stop threshold")->capture_default_str();
  calibrate_cmd->add_option("--window", cal.window, "Segmentation window (samples)")->capture_default_str();
  calibrate_cmd->add_option("--tol", cal.tol, "Segmentation relative norm tolerance")->capture_default_str();
  calibrate_cmd->add_option("--seed", cal.seed, "Seed of the initialization restarts")->capture_default_str();
  calibrate_cmd->add_option("--restarts", cal.restarts, "Restarts")->capture_default_str();
  calibrate_cmd->add_option("--max-iters", cal.max_iters, "Outer iteration cap")->capture_default_str();
  calibrate_cmd->add_option("--residuals", cal.residuals, "Per-sample residual table (default <output>.residuals.csv)");
  calibrate_cmd->add_option("--sets", cal.sets, "Per-set residual table (default <output>.sets.csv)");

  ApplyFlags apply;
  CLI::App* apply_cmd = app.add_subcommand("apply", "Correct raw readings with a calibration");
  apply_cmd->add_option("--calibration", apply.calibration, "Calibration file")->required();
  apply_cmd->add_option("--input", apply.input, "Sensor log CSV")->required();
  apply_cmd->add_option("--output", apply.output, "Corrected CSV")->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim, out);
    if (*calibrate_cmd) return cmd_calibrate(cal, out);
    return cmd_apply(apply, out);
  } catch (const Error& e) {
    fmt::print(err, "magcal: {}\n", e.what());
    return e.code() == ErrorCode::kUsage ? kExitUsage : kExitDataError;
  } catch (const std::exception& e) {
    fmt::print(err, "magcal: error: {}\n", e.what());
    return kExitDataError;
  }
}

}  // namespace magcal
