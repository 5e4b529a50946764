#include <gtest/gtest.h>

#include <random>

#include "magcal/preprocess.hpp"

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

TEST(SampleMeans, Examples) {
  const SetMeans m = sample_means({{Vector3d(1, 2, 3), Vector3d(3, 2, 1)}, {Vector3d(4, 5, 6)}});
  EXPECT_EQ(m.means[0], Vector3d(2, 2, 2));
  EXPECT_EQ(m.means[1], Vector3d(4, 5, 6));
  EXPECT_EQ(m.counts, (std::vector<int>{2, 1}));
  EXPECT_EQ(error_of([] { sample_means({{}}); }), ErrorCode::kInvalidInput);
}

TEST(SampleMeans, StatisticalAccuracy) {
  Rng rng(4);
  std::normal_distribution<double> n(0.0, 0.5);
  const Vector3d mu(1, -2, 0.5);
  SampleSet set(500);
  for (auto& v : set) v = mu + Vector3d(n(rng), n(rng), n(rng));
  const SetMeans m = sample_means({set});
  for (int c = 0; c < 3; ++c) EXPECT_LT(std::abs(m.means[0](c) - mu(c)), 4 * 0.5 / std::sqrt(500.0));
}

TEST(PooledCovariance, HandEvaluatedExample) {
  const std::vector<SampleSet> sets = {{Vector3d(2, 0, 0), Vector3d(4, 0, 0)},
                                       {Vector3d(0, 2, 0), Vector3d(0, 4, 0)}};
  const Matrix3d cov = pooled_covariance(sets, sample_means(sets));
  EXPECT_TRUE(cov.isApprox(Vector3d(1, 1, 0).asDiagonal().toDenseMatrix(), 1e-15));
}

TEST(PooledCovariance, ZeroScatterAndInsufficientData) {
  const std::vector<SampleSet> same = {{Vector3d(1, 2, 3), Vector3d(1, 2, 3)}, {Vector3d::Ones(), Vector3d::Ones()}};
  EXPECT_EQ(pooled_covariance(same, sample_means(same)), Matrix3d::Zero());
  const std::vector<SampleSet> singles = {{Vector3d(1, 2, 3)}, {Vector3d::Ones()}};
  EXPECT_EQ(error_of([&] { pooled_covariance(singles, sample_means(singles)); }), ErrorCode::kInsufficientData);
}

TEST(PooledCovariance, ConsistentForKnownCovariance) {
  Rng rng(12);
  Matrix3d sigma;
  sigma << 2.0, 0.3, -0.2, 0.3, 1.0, 0.1, -0.2, 0.1, 0.5;
  const Matrix3d l = sigma.llt().matrixL();
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<SampleSet> sets(10, SampleSet(10000));
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const Vector3d mu = Vector3d::Constant(static_cast<double>(i));
    for (auto& v : sets[i]) v = mu + l * Vector3d(n(rng), n(rng), n(rng));
  }
  const Matrix3d cov = pooled_covariance(sets, sample_means(sets));
  EXPECT_LT((cov - sigma).norm() / sigma.norm(), 0.05);
}

// Sum_j (m - v_j)^T P (m - v_j) = n (m - mean)^T P (m - mean) + Sum_j (v_j - mean)^T P (v_j - mean).
TEST(Decomposition, SampleScatterSplitsAroundMean) {
  Rng rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix3d a;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) a(r, c) = u(rng);
    }
    const Matrix3d p = a * a.transpose() + 0.05 * Matrix3d::Identity();
    SampleSet set(37);
    for (auto& v : set) v = Vector3d(u(rng), u(rng), u(rng));
    const Vector3d m(u(rng), u(rng), u(rng));
    const Vector3d mean = sample_means({set}).means[0];
    double lhs = 0.0;
    double scatter = 0.0;
    for (const auto& v : set) {
      lhs += (m - v).dot(p * (m - v));
      scatter += (v - mean).dot(p * (v - mean));
    }
    const double rhs = static_cast<double>(set.size()) * (m - mean).dot(p * (m - mean)) + scatter;
    EXPECT_LT(std::abs(lhs - rhs), 1e-8 * std::abs(lhs));
  }
}

TEST(RegularizeCovariance, JittersOnlySingularMatrices) {
  const Matrix3d good = Vector3d(1, 2, 3).asDiagonal();
  EXPECT_FALSE(regularize_covariance(good).jittered);
  EXPECT_EQ(regularize_covariance(good).matrix, good);

  const RegularizedCovariance flat = regularize_covariance(Vector3d(1, 1, 0).asDiagonal());
  EXPECT_TRUE(flat.jittered);
  EXPECT_NEAR(flat.matrix(2, 2), 1e-10 * 2.0 / 3.0, 1e-24);

  const RegularizedCovariance zero = regularize_covariance(Matrix3d::Zero());
  EXPECT_TRUE(zero.jittered);
  EXPECT_GT(zero.matrix(0, 0), 0.0);
}

TEST(Summarize, MatchesComponents) {
  RawDataset d;
  d.accel = {{Vector3d(2, 0, 0), Vector3d(4, 0, 0)}, {Vector3d(0, 2, 0), Vector3d(0, 4, 0)}};
  d.mag = {{Vector3d(1, 1, 1), Vector3d(1, 1, 3)}, {Vector3d(0, 0, 0), Vector3d(0, 0, 2), Vector3d(0, 0, 4)}};
  const SummaryStats s = summarize(d);
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.accel.means[1], Vector3d(0, 3, 0));
  EXPECT_EQ(s.mag.counts, (std::vector<int>{2, 3}));
  EXPECT_EQ(s.mag.total_count(), 5);
  EXPECT_TRUE(s.accel.jittered);
}

TEST(Validate, RejectsMismatchedSets) {
  RawDataset d;
  d.accel = {{Vector3d::Ones()}};
  EXPECT_EQ(error_of([&] { validate(d); }), ErrorCode::kInvalidInput);
}

std::vector<ReadingPair> constant_stream(std::size_t n, double norm) {
  return std::vector<ReadingPair>(n, ReadingPair{Vector3d(0, 0, norm), Vector3d(norm, 0, 0)});
}

TEST(SegmentByNorm, StaticStreamIsOneSet) {
  const auto stream = constant_stream(1000, 1.0);
  const Segmentation seg = segment_by_norm(stream, 50, 0.02);
  ASSERT_EQ(seg.data.size(), 1u);
  EXPECT_EQ(seg.data.accel[0].size(), 1000u);
  EXPECT_EQ(seg.ranges[0], (std::pair<std::size_t, std::size_t>{0, 1000}));
}

TEST(SegmentByNorm, RampBetweenPlateausIsDiscarded) {
  std::vector<ReadingPair> stream = constant_stream(400, 1.0);
  for (int k = 0; k < 100; ++k) {
    const double norm = 1.05 + 0.9 * k / 99.0;
    stream.push_back({Vector3d(0, 0, norm), Vector3d(norm, 0, 0)});
  }
  const auto tail = constant_stream(400, 2.0);
  stream.insert(stream.end(), tail.begin(), tail.end());

  const Segmentation seg = segment_by_norm(stream, 50, 0.02);
  ASSERT_EQ(seg.data.size(), 2u);
  EXPECT_EQ(seg.ranges[0], (std::pair<std::size_t, std::size_t>{0, 400}));
  EXPECT_EQ(seg.ranges[1], (std::pair<std::size_t, std::size_t>{500, 900}));
}

TEST(SegmentByNorm, NoiseOnlyYieldsNothing) {
  Rng rng(6);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<ReadingPair> stream(2000);
  for (auto& p : stream) p = {Vector3d(0, 0, u(rng)), Vector3d(u(rng), 0, 0)};
  EXPECT_EQ(error_of([&] { segment_by_norm(stream, 50, 0.02); }), ErrorCode::kEmptyDataset);
}

TEST(SegmentByNorm, EitherSensorBreaksASlice) {
  std::vector<ReadingPair> stream = constant_stream(200, 1.0);
  // Magnetometer jumps while the accelerometer stays put.
  for (std::size_t k = 100; k < 200; ++k) stream[k].mag *= 1.5;
  const Segmentation seg = segment_by_norm(stream, 50, 0.02);
  ASSERT_EQ(seg.data.size(), 2u);
  EXPECT_EQ(seg.ranges[1].first, 100u);
}

TEST(GroupBySetId, OneSetPerDistinctId) {
  const auto stream = constant_stream(6, 1.0);
  const std::vector<long> ids = {3, 3, 7, 7, 7, 9};
  const Segmentation seg = group_by_set_id(stream, ids);
  ASSERT_EQ(seg.data.size(), 3u);
  EXPECT_EQ(seg.data.mag[1].size(), 3u);
  const std::vector<long> bad = {1, 2, 1, 3, 3, 3};
  EXPECT_EQ(error_of([&] { group_by_set_id(stream, bad); }), ErrorCode::kInvalidInput);
}

}  // namespace
}  // namespace magcal
