#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "magcal/calibration_state.hpp"
#include "magcal/preprocess.hpp"
#include "magcal/simulator.hpp"

namespace magcal {

/// Formats a double with 17 significant digits (lossless round trip).
std::string format_real(double value);

// ---------------------------------------------------------------------------
// Sensor logs: CSV with header timestamp,ax,ay,az,mx,my,mz[,set_id].

struct SensorLog {
  /// Timestamps as written in the input (integer ticks or decimal seconds).
  std::vector<std::string> timestamps;
  std::vector<ReadingPair> readings;
  /// Present only when the input has a set_id column.
  std::optional<std::vector<long>> set_ids;
};

SensorLog parse_sensor_log(std::istream& in);
SensorLog read_sensor_log(const std::filesystem::path& path);
void write_sensor_log(std::ostream& out, const SensorLog& log);

// ---------------------------------------------------------------------------
// Calibration file: versioned JSON document.

inline constexpr std::string_view kCalibrationSchema = "magcal-calibration";
inline constexpr int kCalibrationVersion = 1;

struct Provenance {
  std::string input_digest;
  std::uint64_t seed = 0;
  std::string variant;
  double gamma = 0.0;
  int iterations = 0;
  double final_cost = 0.0;
};

struct CalibrationFile {
  CalibrationState state;
  Provenance provenance;
};

std::string serialize_calibration(const CalibrationFile& file);
CalibrationFile parse_calibration(const std::string& text);
void write_calibration(const std::filesystem::path& path, const CalibrationFile& file);
CalibrationFile read_calibration(const std::filesystem::path& path);

/// "sha256:<hex>" of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Monte Carlo report tables.

/// One row per run x variant x sweep value. Deterministic for a given
/// campaign configuration; wall-clock timings live in the timing table.
void write_report_csv(std::ostream& out, const std::vector<RunReport>& reports);
void write_timing_csv(std::ostream& out, const std::vector<RunReport>& reports);
/// Quantiles of every delta column per (variant, gamma, sets) group.
void write_summary_csv(std::ostream& out, const std::vector<RunReport>& reports);

/// Linear-interpolation quantile of unsorted values (p in [0, 1]).
double quantile(std::vector<double> values, double p);

}  // namespace magcal
