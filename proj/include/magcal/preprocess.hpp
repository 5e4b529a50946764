#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "magcal/geometry.hpp"
#include "magcal/sensor_model.hpp"

namespace magcal {

/// Readings taken at one quasi-static orientation.
using SampleSet = std::vector<Vector3d>;

/// Per-sensor lists of measurement sets. Set i of the accelerometer and set i
/// of the magnetometer share the same orientation; their sample counts may
/// differ.
struct RawDataset {
  std::vector<SampleSet> accel;
  std::vector<SampleSet> mag;

  std::size_t size() const { return accel.size(); }

  const std::vector<SampleSet>& sets(SensorId s) const {
    return s == SensorId::kAccelerometer ? accel : mag;
  }
  std::vector<SampleSet>& sets(SensorId s) { return s == SensorId::kAccelerometer ? accel : mag; }
};

/// Throws kInvalidInput unless both sensors have the same N >= 1 sets and no
/// set is empty.
void validate(const RawDataset& data);

/// The first n sets of a dataset (nested-subset construction).
RawDataset first_sets(const RawDataset& data, std::size_t n);

struct SetMeans {
  std::vector<Vector3d> means;
  std::vector<int> counts;
};

SetMeans sample_means(const std::vector<SampleSet>& sets);

/// Pooled within-set covariance with N degrees of freedom removed.
Matrix3d pooled_covariance(const std::vector<SampleSet>& sets, const SetMeans& means);

struct RegularizedCovariance {
  Matrix3d matrix;
  bool jittered = false;
};

/// Adds a small diagonal jitter when the covariance is numerically singular:
/// smallest eigenvalue < 1e-12 trace gets 1e-10 trace / 3 on the diagonal
/// (with an absolute floor for an all-zero matrix).
RegularizedCovariance regularize_covariance(const Matrix3d& covariance);

struct SensorSummary {
  std::vector<Vector3d> means;
  std::vector<int> counts;
  Matrix3d covariance = Matrix3d::Identity();
  bool jittered = false;

  long total_count() const;
};

struct SummaryStats {
  SensorSummary accel;
  SensorSummary mag;

  std::size_t size() const { return accel.means.size(); }
  const SensorSummary& sensor(SensorId s) const {
    return s == SensorId::kAccelerometer ? accel : mag;
  }
  SensorSummary& sensor(SensorId s) { return s == SensorId::kAccelerometer ? accel : mag; }
};

/// Means, counts, and regularized pooled covariance for both sensors.
SummaryStats summarize(const RawDataset& data);

struct ReadingPair {
  Vector3d accel;
  Vector3d mag;
};

struct Segmentation {
  RawDataset data;
  /// Half-open [begin, end) sample ranges of the emitted sets in the stream.
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
};

inline constexpr int kDefaultSegmentWindow = 50;
inline constexpr double kDefaultSegmentTolerance = 0.02;

/// Splits a time-ordered stream into quasi-static sets. A sample extends the
/// current slice while, for both sensors, its norm stays within a relative
/// tolerance of the median norm over the trailing window of the slice.
/// Slices shorter than the window are dropped.
Segmentation segment_by_norm(std::span<const ReadingPair> stream, int window = kDefaultSegmentWindow,
                             double tol = kDefaultSegmentTolerance);

/// Groups a stream by explicit set identifiers (non-decreasing).
Segmentation group_by_set_id(std::span<const ReadingPair> stream, std::span<const long> set_ids);

}  // namespace magcal
