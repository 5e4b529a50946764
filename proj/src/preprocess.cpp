#include "magcal/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace magcal {

void validate(const RawDataset& data) {
  if (data.accel.empty()) throw Error(ErrorCode::kInvalidInput, "dataset has no sets");
  if (data.accel.size() != data.mag.size()) {
    throw Error(ErrorCode::kInvalidInput, "accelerometer and magnetometer set counts differ");
  }
  for (SensorId s : kSensors) {
    const auto& sets = data.sets(s);
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (sets[i].empty()) {
        throw Error(ErrorCode::kInvalidInput,
                    std::string(to_string(s)) + " set " + std::to_string(i) + " is empty");
      }
    }
  }
}

RawDataset first_sets(const RawDataset& data, std::size_t n) {
  if (n > data.size()) throw Error(ErrorCode::kInvalidArgument, "not enough sets for prefix");
  RawDataset out;
  out.accel.assign(data.accel.begin(), data.accel.begin() + static_cast<std::ptrdiff_t>(n));
  out.mag.assign(data.mag.begin(), data.mag.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

SetMeans sample_means(const std::vector<SampleSet>& sets) {
  SetMeans out;
  out.means.reserve(sets.size());
  out.counts.reserve(sets.size());
  for (const auto& set : sets) {
    if (set.empty()) throw Error(ErrorCode::kInvalidInput, "cannot average an empty set");
    Vector3d sum = Vector3d::Zero();
    for (const auto& v : set) sum += v;
    out.means.push_back(sum / static_cast<double>(set.size()));
    out.counts.push_back(static_cast<int>(set.size()));
  }
  return out;
}

Matrix3d pooled_covariance(const std::vector<SampleSet>& sets, const SetMeans& means) {
  long total = 0;
  Matrix3d scatter = Matrix3d::Zero();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (const auto& v : sets[i]) {
      const Vector3d r = v - means.means[i];
      scatter += r * r.transpose();
    }
    total += static_cast<long>(sets[i].size());
  }
  const long dof = total - static_cast<long>(sets.size());
  if (dof <= 0) {
    throw Error(ErrorCode::kInsufficientData,
                "need more samples than sets to estimate a covariance (got " +
                    std::to_string(total) + " samples in " + std::to_string(sets.size()) +
                    " sets)");
  }
  return symmetrized(scatter / static_cast<double>(dof));
}

RegularizedCovariance regularize_covariance(const Matrix3d& covariance) {
  const Matrix3d sym = symmetrized(covariance);
  const double trace = sym.trace();
  Eigen::SelfAdjointEigenSolver<Matrix3d> solver(sym, Eigen::EigenvaluesOnly);
  if (solver.eigenvalues()(0) >= 1e-12 * trace && trace > 0.0) return {sym, false};
  // 1e-24 floor: a zero scatter matrix still needs an invertible result.
  const double jitter = std::max(1e-10 * trace / 3.0, 1e-24);
  return {sym + jitter * Matrix3d::Identity(), true};
}

long SensorSummary::total_count() const {
  long total = 0;
  for (int c : counts) total += c;
  return total;
}

SummaryStats summarize(const RawDataset& data) {
  validate(data);
  SummaryStats stats;
  for (SensorId s : kSensors) {
    const auto& sets = data.sets(s);
    SetMeans m = sample_means(sets);
    const RegularizedCovariance cov = regularize_covariance(pooled_covariance(sets, m));
    SensorSummary& out = stats.sensor(s);
    out.means = std::move(m.means);
    out.counts = std::move(m.counts);
    out.covariance = cov.matrix;
    out.jittered = cov.jittered;
  }
  return stats;
}

namespace {

double trailing_median(const std::vector<double>& norms, std::size_t begin, std::size_t end,
                       std::vector<double>& scratch) {
  scratch.assign(norms.begin() + static_cast<std::ptrdiff_t>(begin),
                 norms.begin() + static_cast<std::ptrdiff_t>(end));
  const std::size_t mid = scratch.size() / 2;
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(mid), scratch.end());
  const double upper = scratch[mid];
  if (scratch.size() % 2 == 1) return upper;
  const double lower =
      *std::max_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

bool within(double value, double median, double tol) {
  return std::abs(value - median) <= tol * std::abs(median);
}

}  // namespace

Segmentation segment_by_norm(std::span<const ReadingPair> stream, int window, double tol) {
  if (window < 2) throw Error(ErrorCode::kInvalidArgument, "segmentation window must be >= 2");
  if (!(tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "segmentation tolerance must be > 0");

  std::vector<double> accel_norm(stream.size());
  std::vector<double> mag_norm(stream.size());
  for (std::size_t k = 0; k < stream.size(); ++k) {
    accel_norm[k] = stream[k].accel.norm();
    mag_norm[k] = stream[k].mag.norm();
  }

  const auto w = static_cast<std::size_t>(window);
  std::vector<std::pair<std::size_t, std::size_t>> slices;
  std::vector<double> scratch;
  std::size_t start = 0;
  for (std::size_t k = 1; k <= stream.size(); ++k) {
    bool breaks = k == stream.size();
    if (!breaks) {
      const std::size_t from = std::max(start, k >= w ? k - w : 0);
      breaks = !within(accel_norm[k], trailing_median(accel_norm, from, k, scratch), tol) ||
               !within(mag_norm[k], trailing_median(mag_norm, from, k, scratch), tol);
    }
    if (breaks) {
      if (k - start >= w) slices.emplace_back(start, k);
      start = k;
    }
  }

  if (slices.empty()) {
    throw Error(ErrorCode::kEmptyDataset, "no quasi-static slice of at least " +
                                              std::to_string(window) + " samples found");
  }

  Segmentation out;
  out.ranges = slices;
  for (const auto& [begin, end] : slices) {
    SampleSet accel;
    SampleSet mag;
    accel.reserve(end - begin);
    mag.reserve(end - begin);
    for (std::size_t k = begin; k < end; ++k) {
      accel.push_back(stream[k].accel);
      mag.push_back(stream[k].mag);
    }
    out.data.accel.push_back(std::move(accel));
    out.data.mag.push_back(std::move(mag));
  }
  return out;
}

Segmentation group_by_set_id(std::span<const ReadingPair> stream, std::span<const long> set_ids) {
  if (stream.size() != set_ids.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one set id is required per reading");
  }
  Segmentation out;
  std::size_t start = 0;
  for (std::size_t k = 1; k <= stream.size(); ++k) {
    if (k < stream.size()) {
      if (set_ids[k] < set_ids[k - 1]) {
        throw Error(ErrorCode::kInvalidInput,
                    "set_id decreases at row " + std::to_string(k + 1));
      }
      if (set_ids[k] == set_ids[k - 1]) continue;
    }
    out.ranges.emplace_back(start, k);
    start = k;
  }
  for (const auto& [begin, end] : out.ranges) {
    SampleSet accel;
    SampleSet mag;
    for (std::size_t k = begin; k < end; ++k) {
      accel.push_back(stream[k].accel);
      mag.push_back(stream[k].mag);
    }
    out.data.accel.push_back(std::move(accel));
    out.data.mag.push_back(std::move(mag));
  }
  if (out.data.size() == 0) throw Error(ErrorCode::kEmptyDataset, "stream is empty");
  return out;
}

}  // namespace magcal
