#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "vmr/registration.hpp"

namespace vmr {
namespace {

PointCloud cloud_of(std::vector<Vec3> pts, Frame f = Frame::LocalLevel) {
  PointCloud c(f);
  c.points = std::move(pts);
  return c;
}

double rot_deg(const Mat3& a, const Mat3& b) { return rotation_angle_between(a, b) * kRadToDeg; }

Pose yaw_pose(double yaw_deg, const Vec3& t) { return {to_rotation({yaw_deg * kDegToRad, 0, 0}), t}; }

TEST(ToLocalFrame, IdentityChangesTagOnly) {
  const auto body = cloud_of({{1, 2, 3}, {-1, 0, 0.5}}, Frame::Body);
  const auto out = to_local_frame(body, Pose::identity());
  EXPECT_EQ(out.frame, Frame::LocalLevel);
  EXPECT_EQ(out.points, body.points);
}

TEST(ToLocalFrame, Yaw90) {
  const auto out = to_local_frame(cloud_of({{1, 0, 0}}, Frame::Body), yaw_pose(90, Vec3(10, 0, 0)));
  EXPECT_LT((out.points[0] - Vec3(10, 1, 0)).norm(), 1e-12);
}

TEST(ToLocalFrame, InverseRestoresBody) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Pose prior = oracle::random_pose(rng);
    std::vector<Vec3> pts;
    for (int k = 0; k < 20; ++k) pts.push_back(oracle::random_vec(rng, 20.0));
    const auto local = to_local_frame(cloud_of(pts, Frame::Body), prior);
    const auto back = transform_cloud(local, prior.inverse(), Frame::Body);
    for (std::size_t k = 0; k < pts.size(); ++k) EXPECT_LT((back.points[k] - pts[k]).norm(), 1e-9);
  }
  EXPECT_THROW(to_local_frame(cloud_of({{0, 0, 0}}), Pose::identity()), FrameMismatch);
}

TEST(ApplyCorrection, Examples) {
  std::mt19937_64 rng(2);
  const Pose prior = oracle::random_pose(rng);
  EXPECT_LT((apply_correction(prior, Pose::identity()).matrix() - prior.matrix()).cwiseAbs().maxCoeff(), 1e-15);
  const Pose shifted = apply_correction(Pose::identity(), Pose(Mat3::Identity(), Vec3(1, 0, 0)));
  EXPECT_EQ(shifted.translation, Vec3(1, 0, 0));
  for (int i = 0; i < 100; ++i) {
    const Pose a = oracle::random_pose(rng), b = oracle::random_pose(rng);
    EXPECT_LT((apply_correction(a, b).matrix() - b.matrix() * a.matrix()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(EstimateCovariances, PlanarScatterNormalIsZ) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) pts.emplace_back(i * 0.1, j * 0.1, 0.0);
  const auto out = estimate_covariances(cloud_of(pts), 8, 1e-3);
  ASSERT_TRUE(out.has_covariances());
  for (std::size_t i = 0; i < out.size(); ++i) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(out.covariances[i]);
    EXPECT_NEAR(std::abs(es.eigenvectors().col(0).z()), 1.0, 1e-6);
  }
}

TEST(EstimateCovariances, EigenvaluesAreRegularized) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.emplace_back(n(rng), n(rng), n(rng));
  const double eps = 1e-3;
  const auto out = estimate_covariances(cloud_of(pts), 20, eps);
  for (const auto& c : out.covariances) {
    EXPECT_LT((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Mat3> es(c);
    EXPECT_NEAR(es.eigenvalues()(0), eps, 1e-12);
    EXPECT_NEAR(es.eigenvalues()(1), 1.0, 1e-12);
    EXPECT_NEAR(es.eigenvalues()(2), 1.0, 1e-12);
  }
  // the normal is the smallest-variance direction of the k-NN scatter (independent eigen oracle)
  const KdTree tree(pts);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto nn = oracle::brute_knn(pts, i, 19);
    Vec3 mean = pts[i];
    for (const auto& [d, j] : nn) mean += pts[j];
    mean /= 20.0;
    Mat3 s = (pts[i] - mean) * (pts[i] - mean).transpose();
    for (const auto& [d, j] : nn) s += (pts[j] - mean) * (pts[j] - mean).transpose();
    const Eigen::JacobiSVD<Mat3> svd(s, Eigen::ComputeFullU);
    const Vec3 normal = svd.matrixU().col(2);
    EXPECT_NEAR(normal.dot(out.covariances[i] * normal), eps, 1e-9);
  }
}

TEST(EstimateCovariances, LineModelKeepsZAndNormalSmall) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 40; ++i) pts.emplace_back(i * 0.1, 0.5 * i * 0.1, 0.0);
  const auto out = estimate_covariances(cloud_of(pts), 6, 1e-3, CovarianceModel::Line);
  const Vec3 tangent = Vec3(1, 0.5, 0).normalized();
  const Vec3 normal = Vec3(-0.5, 1, 0).normalized();
  for (const auto& c : out.covariances) {
    EXPECT_NEAR(tangent.dot(c * tangent), 1.0, 1e-9);
    EXPECT_NEAR(normal.dot(c * normal), 1e-3, 1e-9);
    EXPECT_NEAR(c(2, 2), 1e-3, 1e-12);
  }
}

TEST(EstimateCovariances, TooFewPoints) {
  EXPECT_THROW(estimate_covariances(cloud_of({{0, 0, 0}, {1, 0, 0}}), 2, 1e-3), TooFewPoints);
}

TEST(Flatten2d, Examples) {
  auto one = flatten_2d(cloud_of({{1, 2, 3}}), 0.2);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_LT((one.points[0] - Vec3(1, 2, 0)).norm(), 1e-12);

  std::vector<Vec3> pillar;
  for (int i = 0; i < 50; ++i) pillar.emplace_back(1, 1, 0.05 * i);
  const auto line = flatten_2d(cloud_of(pillar), 0.2);
  ASSERT_EQ(line.size(), 1u);
  EXPECT_LT((line.points[0] - Vec3(1, 1, 0)).norm(), 1e-12);

  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    std::vector<Vec3> pts, flat;
    for (int i = 0; i < 300; ++i) {
      pts.push_back(oracle::random_vec(rng, 3.0));
      flat.emplace_back(pts.back().x(), pts.back().y(), 0.0);
    }
    const auto out = flatten_2d(cloud_of(pts), 0.3);
    for (const auto& p : out.points) EXPECT_EQ(p.z(), 0.0);
    EXPECT_LT(oracle::max_multiset_distance(out.points, oracle::brute_voxel(flat, 0.3)), 1e-9);
  }
}

// ---------------------------------------------------------------------------
// GICP on the synthetic garage

class GarageScene : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    harness::WorldSpec spec;
    spec.density = 25.0;
    auto [w, map] = harness::build_world(spec);
    world_ = new harness::SyntheticWorld(std::move(w));
    PointCloud below(Frame::LocalLevel);
    for (const auto& p : map.cloud.points)
      if (p.z() < 2.2) below.points.push_back(p);
    target_ = new GicpTarget(voxel_downsample(below, 0.1), 20, 1e-3);
    indoor_cfg_ = new IndoorRegistrationConfig();
    indoor_ = new IndoorTargets(IndoorTargets::prepare(split_indoor(map.cloud, indoor_cfg_->split), *indoor_cfg_));
  }
  static void TearDownTestSuite() {
    delete world_;
    delete target_;
    delete indoor_;
    delete indoor_cfg_;
  }

  static PointCloud view(std::uint64_t seed, const Vec2& at = Vec2(20.0, 12.0)) {
    return fixture::local_view(*world_, at, 12.0, 2.2, 25.0, seed);
  }

  static inline harness::SyntheticWorld* world_ = nullptr;
  static inline GicpTarget* target_ = nullptr;
  static inline IndoorTargets* indoor_ = nullptr;
  static inline IndoorRegistrationConfig* indoor_cfg_ = nullptr;
};

TEST_F(GarageScene, IdenticalCloudsGiveIdentity) {
  const auto& tgt = target_->cloud();
  PointCloud src(Frame::LocalLevel);
  src.points = tgt.points;
  const auto r = gicp(src, *target_, Pose::identity(), GicpConfig{});
  EXPECT_LT(r.delta.translation.norm(), 1e-6);
  EXPECT_LT(log_so3(r.delta.rotation).norm(), 1e-6);
  EXPECT_DOUBLE_EQ(r.fitness, 1.0);
  EXPECT_TRUE(r.converged);
}

TEST_F(GarageScene, RecoversKnownPerturbation) {
  const Pose pert = yaw_pose(3.0, Vec3(0.5, 0.3, 0.0));
  const auto src = transform_cloud(view(2), pert, Frame::LocalLevel);
  const auto r = gicp(src, *target_, Pose::identity(), GicpConfig{});
  const Pose residual = r.delta * pert;
  EXPECT_LT(residual.translation.norm(), 0.02);
  EXPECT_LT(rot_deg(residual.rotation, Mat3::Identity()), 0.1);
  EXPECT_GT(r.fitness, 0.9);
}

TEST_F(GarageScene, FarSourceIsDegenerate) {
  const auto src = transform_cloud(view(3), Pose(Mat3::Identity(), Vec3(0, 0, 50)), Frame::LocalLevel);
  EXPECT_THROW(gicp(src, *target_, Pose::identity(), GicpConfig{}), Degenerate);
}

TEST_F(GarageScene, ObjectiveNonIncreasingPerStep) {
  const Pose pert = yaw_pose(-6.0, Vec3(-0.8, 0.6, 0.2));
  const auto r = gicp(transform_cloud(view(4), pert, Frame::LocalLevel), *target_, Pose::identity(), GicpConfig{});
  ASSERT_FALSE(r.objective_trace.empty());
  for (const auto& [before, after] : r.objective_trace) EXPECT_LE(after, before);
}

TEST_F(GarageScene, GaugeConsistency) {
  std::mt19937_64 rng(5);
  const auto base = view(5);
  const Pose init = yaw_pose(2.0, Vec3(0.3, -0.2, 0.05));
  const auto r1 = gicp(base, *target_, init, GicpConfig{});
  for (int t = 0; t < 3; ++t) {
    const Pose g = oracle::random_pose(rng, kPi, 30.0);
    const auto moved = transform_cloud(base, g, Frame::LocalLevel);
    const auto r2 = gicp(moved, *target_, init * g.inverse(), GicpConfig{});
    const Pose final1 = r1.delta * init;
    const Pose final2 = r2.delta * init * g.inverse() * g;
    EXPECT_LT((final1.matrix() - final2.matrix()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST_F(GarageScene, IndoorAlignedIsIdentity) {
  const auto r = register_indoor(view(6), *indoor_, *indoor_cfg_);
  EXPECT_LT(r.combined.delta.translation.norm(), 0.02);
  EXPECT_LT(rot_deg(r.combined.delta.rotation, Mat3::Identity()), 0.1);
}

TEST_F(GarageScene, IndoorVerticalOffset) {
  const auto src = transform_cloud(view(7), Pose(Mat3::Identity(), Vec3(0, 0, 0.3)), Frame::LocalLevel);
  const auto r = register_indoor(src, *indoor_, *indoor_cfg_);
  EXPECT_NEAR(r.delta_vertical.translation.z(), -0.3, 0.02);
  EXPECT_LT(r.delta_horizontal.translation.norm(), 0.02);
  EXPECT_LT(rot_deg(r.delta_horizontal.rotation, Mat3::Identity()), 0.1);
}

TEST_F(GarageScene, IndoorHorizontalOffset) {
  const Pose pert = yaw_pose(2.0, Vec3(0.5, -0.4, 0.0));
  const auto r = register_indoor(transform_cloud(view(8), pert, Frame::LocalLevel), *indoor_, *indoor_cfg_);
  const auto got = decompose(r.delta_horizontal);
  const auto want = decompose(pert.inverse());
  EXPECT_NEAR(got.translation.x(), want.translation.x(), 0.05);
  EXPECT_NEAR(got.translation.y(), want.translation.y(), 0.05);
  EXPECT_NEAR(got.euler.yaw * kRadToDeg, want.euler.yaw * kRadToDeg, 0.2);
}

TEST_F(GarageScene, IndoorStagesAreStructurallySeparated) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> a(-3.0, 3.0), t(-0.5, 0.5);
  for (int i = 0; i < 5; ++i) {
    const Pose pert(to_rotation({a(rng) * kDegToRad, a(rng) * kDegToRad * 0.3, a(rng) * kDegToRad * 0.3}),
                    Vec3(t(rng), t(rng), t(rng) * 0.4));
    const auto r = register_indoor(transform_cloud(view(10 + i), pert, Frame::LocalLevel), *indoor_, *indoor_cfg_);
    const auto v = decompose(r.delta_vertical);
    const auto h = decompose(r.delta_horizontal);
    EXPECT_EQ(v.euler.yaw, 0.0);
    EXPECT_EQ(v.translation.x(), 0.0);
    EXPECT_EQ(v.translation.y(), 0.0);
    EXPECT_EQ(h.euler.pitch, 0.0);
    EXPECT_EQ(h.euler.roll, 0.0);
    EXPECT_EQ(h.translation.z(), 0.0);
    EXPECT_LE(r.combined.fitness, std::min(r.ground_stage.fitness, r.planar_stage.fitness));
  }
}

int failing_stage(const PointCloud& cloud, const IndoorTargets& map, const IndoorRegistrationConfig& cfg) {
  try {
    register_indoor(cloud, map, cfg);
  } catch (const StageFailed& e) {
    return e.stage();
  }
  return 0;
}

TEST_F(GarageScene, IndoorStageFailures) {
  PointCloud wall(Frame::LocalLevel), floor(Frame::LocalLevel);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j) floor.points.emplace_back(15 + 0.2 * i, 8 + 0.2 * j, 0.0);
  // end wall only, floor cut away
  wall = fixture::local_view(*world_, Vec2(0.0, 12.0), 5.0, 2.2, 25.0, 21);
  wall.points.erase(std::remove_if(wall.points.begin(), wall.points.end(), [](const Vec3& p) { return p.z() < 0.3; }),
                    wall.points.end());
  EXPECT_EQ(failing_stage(wall, *indoor_, *indoor_cfg_), 1);
  EXPECT_EQ(failing_stage(floor, *indoor_, *indoor_cfg_), 2);
}

TEST(SplitGround, FloorOnlyRender) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j) pts.emplace_back(i * 0.3, j * 0.3 - 4.5, 0.01 * ((i + j) % 3));
  const auto [ground, surround] = split_ground(cloud_of(pts), GroundSplitConfig{});
  EXPECT_EQ(ground.size(), pts.size());
  EXPECT_TRUE(surround.empty());
}

// ---------------------------------------------------------------------------
// Aggregation

PointCloud body_patch(double tag) {
  return cloud_of({{1.0 + tag, 0, 0}, {2, 1.0 + tag, 0.5}, {3, -1, 0.2 + tag}}, Frame::Body);
}

TEST(AggregationBuffer, BelowDMinIgnored) {
  AggregationBuffer buf(1.0, 3.0, 0.01);
  EXPECT_FALSE(buf.push(body_patch(0), Pose::identity(), Vec3::Zero()));
  EXPECT_FALSE(buf.push(body_patch(0.1), Pose::identity(), Vec3(0.5, 0, 0)));
  EXPECT_TRUE(buf.clouds().empty());
  EXPECT_EQ(buf.distance_accumulated(), 0.0);
}

TEST(AggregationBuffer, ScriptedSequence) {
  AggregationBuffer buf(1.0, 3.0, 0.01);
  std::vector<PointCloud> expected;
  std::optional<PointCloud> merged;
  for (int k = 0; k <= 3; ++k) {
    const Vec3 pos(k, 0, 0);
    const Pose pose = yaw_pose(10.0 * k, pos);
    merged = buf.push(body_patch(0.1 * k), pose, pos);
    if (k > 0) expected.push_back(to_local_frame(body_patch(0.1 * k), pose));
    if (k < 3) {
      EXPECT_FALSE(merged);
      EXPECT_EQ(buf.clouds().size(), static_cast<std::size_t>(k));
    }
  }
  ASSERT_TRUE(merged);
  EXPECT_EQ(merged->frame, Frame::LocalLevel);
  PointCloud unioned(Frame::LocalLevel);
  for (const auto& c : expected) append_cloud(unioned, c);
  EXPECT_EQ(expected.size(), 3u);
  EXPECT_EQ(merged->points, voxel_downsample(unioned, 0.01).points);
  EXPECT_TRUE(buf.clouds().empty());
  EXPECT_EQ(buf.distance_accumulated(), 0.0);
}

TEST(AggregationBuffer, RejectsBadThresholds) {
  EXPECT_THROW(AggregationBuffer(3.0, 1.0, 0.1), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Outdoor

class StreetScene : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    harness::WorldSpec spec;
    spec.preset = "street";
    spec.density = 4.0;
    spec.street_length = 120.0;
    auto [w, map] = harness::build_world(spec);
    world_ = new harness::SyntheticWorld(std::move(w));
    store_ = new MapStore(MapStore::from_cloud(map.cloud, 50.0));
  }
  static void TearDownTestSuite() {
    delete world_;
    delete store_;
  }
  static inline harness::SyntheticWorld* world_ = nullptr;
  static inline MapStore* store_ = nullptr;
};

TEST_F(StreetScene, AlignedMergeGivesIdentity) {
  const auto merged = fixture::local_view(*world_, Vec2(60, 0), 30.0, 12.0, 4.0, 11, 0.3);
  const auto r = register_outdoor(merged, *store_, Vec2(60, 0), OutdoorRegistrationConfig{});
  EXPECT_LT(r.delta.translation.norm(), 0.02);
  EXPECT_LT(rot_deg(r.delta.rotation, Mat3::Identity()), 0.1);
}

TEST_F(StreetScene, RecoversOffset) {
  const Pose pert = yaw_pose(2.0, Vec3(1.0, -0.8, 0.2));
  // rotate about the merge centre so the yaw does not dominate the offset
  const Pose about = Pose(Mat3::Identity(), Vec3(60, 0, 0)) * pert * Pose(Mat3::Identity(), Vec3(-60, 0, 0));
  const auto merged = transform_cloud(fixture::local_view(*world_, Vec2(60, 0), 30.0, 12.0, 4.0, 12, 0.3), about,
                                      Frame::LocalLevel);
  const auto r = register_outdoor(merged, *store_, Vec2(61, -0.8), OutdoorRegistrationConfig{});
  const Pose residual = r.delta * about;
  EXPECT_LT(residual.translation.norm(), 0.05);
  EXPECT_LT(rot_deg(residual.rotation, Mat3::Identity()), 0.2);
}

TEST_F(StreetScene, PriorOutsideMap) {
  const auto merged = fixture::local_view(*world_, Vec2(60, 0), 30.0, 12.0, 4.0, 13, 0.3);
  EXPECT_THROW(register_outdoor(merged, *store_, Vec2(60, 300), OutdoorRegistrationConfig{}), EmptyRoi);
}

}  // namespace
}  // namespace vmr
