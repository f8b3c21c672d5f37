#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <chrono>
#include <cmath>

#include "rvf/geometry.hpp"
#include "rvf/rng.hpp"

using namespace rvf;

namespace {

// Independent oracle built on Eigen so both routes never share code.
Eigen::Matrix3d eigen_ypr(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

struct OracleRig {
  Eigen::Matrix3d r2w_rot, w2c_rot;
  Eigen::Vector3d r2w_t, w2c_t;
  CameraIntrinsics k;
};

ProjectionResult oracle_project(const RadarDetection& det, const OracleRig& rig) {
  const double cp = std::cos(det.phi);
  const Eigen::Vector3d radar(det.rho * std::cos(det.theta) * cp,
                              det.rho * std::sin(det.theta) * cp, det.rho * std::sin(det.phi));
  const Eigen::Vector3d world = rig.r2w_rot * radar + rig.r2w_t;
  const Eigen::Vector3d cam = rig.w2c_rot * world + rig.w2c_t;
  ProjectionResult res;
  res.z_c = cam.z();
  if (std::abs(cam.z()) < 1e-12) return res;
  res.x_p = (rig.k.f / rig.k.dx) * (cam.x() / cam.z()) + rig.k.x_p0;
  res.y_p = (rig.k.f / rig.k.dy) * (cam.y() / cam.z()) + rig.k.y_p0;
  res.in_frame = cam.z() > 0 && res.x_p >= 0 && res.x_p < rig.k.width && res.y_p >= 0 &&
                 res.y_p < rig.k.height;
  return res;
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace

TEST(PolarToCartesian, AxisAlignedCases) {
  Vec3 p = polar_to_cartesian({10.0, 0.0, 0.0, 0.0});
  EXPECT_NEAR(p.x, 10.0, 1e-12);
  EXPECT_NEAR(p.y, 0.0, 1e-12);
  EXPECT_NEAR(p.z, 0.0, 1e-12);

  p = polar_to_cartesian({5.0, kPi / 2.0, 0.0, 0.0});
  EXPECT_NEAR(p.x, 0.0, 1e-12);
  EXPECT_NEAR(p.y, 5.0, 1e-12);
  EXPECT_NEAR(p.z, 0.0, 1e-12);
}

TEST(PolarToCartesian, SixtyThirtyDegreeCase) {
  const Vec3 p = polar_to_cartesian({2.0, deg_to_rad(60.0), deg_to_rad(30.0), 0.0});
  EXPECT_NEAR(p.x, 0.866025, 1e-6);
  EXPECT_NEAR(p.y, 1.5, 1e-6);
  EXPECT_NEAR(p.z, 1.0, 1e-6);
}

TEST(PolarToCartesian, PreservesNorm) {
  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    RadarDetection det;
    det.rho = rng.uniform(0.1, 200.0);
    det.theta = rng.uniform(-kPi + 1e-6, kPi);
    det.phi = rng.uniform(-kPi / 2, kPi / 2);
    EXPECT_NEAR(polar_to_cartesian(det).norm(), det.rho, det.rho * 1e-12);
  }
}

TEST(WorldFromRadar, IdentityAndTranslation) {
  SensorRig rig;
  Vec3 p = world_from_radar({1, 2, 3}, rig);
  EXPECT_NEAR(p.x, 1, 1e-15);
  EXPECT_NEAR(p.y, 2, 1e-15);
  EXPECT_NEAR(p.z, 3, 1e-15);

  rig.radar_to_world.translation = {0, 0, 5};
  p = world_from_radar({1, 2, 3}, rig);
  EXPECT_NEAR(p.z, 8, 1e-15);
}

TEST(WorldFromRadar, NinetyDegreeYaw) {
  SensorRig rig;
  rig.radar_to_world.rotation = ypr_to_rotation(kPi / 2, 0, 0);
  const Vec3 p = world_from_radar({1, 0, 0}, rig);
  EXPECT_NEAR(p.x, 0, 1e-12);
  EXPECT_NEAR(p.y, 1, 1e-12);
  EXPECT_NEAR(p.z, 0, 1e-12);
}

TEST(CameraFromWorld, TranslationAndComposedYaw) {
  SensorRig rig;
  rig.world_to_camera.translation = {-1, 0, 0};
  Vec3 p = camera_from_world({1, 2, 3}, rig);
  EXPECT_NEAR(p.x, 0, 1e-15);
  EXPECT_NEAR(p.y, 2, 1e-15);
  EXPECT_NEAR(p.z, 3, 1e-15);

  rig.world_to_camera.rotation = ypr_to_rotation(kPi, 0, 0);
  rig.world_to_camera.translation = {0, 0, 10};
  p = camera_from_world({1, 0, 0}, rig);
  EXPECT_NEAR(p.x, -1, 1e-12);
  EXPECT_NEAR(p.y, 0, 1e-12);
  EXPECT_NEAR(p.z, 10, 1e-12);
}

TEST(PixelFromCamera, OpticalAxisHitsPrincipalPoint) {
  CameraIntrinsics k{0.004, 4e-6, 4e-6, 540, 540, 1080, 1080};
  for (double z : {0.5, 2.0, 100.0}) {
    const ProjectionResult r = pixel_from_camera({0, 0, z}, k);
    EXPECT_TRUE(r.in_frame);
    EXPECT_NEAR(r.x_p, 540, 1e-12);
    EXPECT_NEAR(r.y_p, 540, 1e-12);
    EXPECT_NEAR(r.z_c, z, 1e-15);
  }
}

TEST(PixelFromCamera, PinholeFormulaCase) {
  // f/dx = f/dy = 1000 px, principal point (540, 540).
  CameraIntrinsics k{0.01, 1e-5, 1e-5, 540, 540, 1080, 1080};
  const ProjectionResult r = pixel_from_camera({0.1, 0, 10}, k);
  EXPECT_NEAR(r.x_p, 550, 1e-9);
  EXPECT_NEAR(r.y_p, 540, 1e-9);
  EXPECT_TRUE(r.in_frame);
}

TEST(PixelFromCamera, BehindCameraAndNearZeroDepth) {
  CameraIntrinsics k{0.01, 1e-5, 1e-5, 540, 540, 1080, 1080};
  EXPECT_FALSE(pixel_from_camera({0, 0, -1}, k).in_frame);
  const ProjectionResult r = pixel_from_camera({1, 1, 1e-13}, k);
  EXPECT_FALSE(r.in_frame);
  EXPECT_EQ(r.x_p, 0.0);
  EXPECT_EQ(r.y_p, 0.0);
}

TEST(ProjectRadarToPixel, BoresightToPrincipalPoint) {
  // Radar boresight (+X) aligned with camera +Z through the axis swap.
  SensorRig rig;
  rig.world_to_camera.rotation.m = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  rig.intrinsics = {0.004, 4e-6, 4e-6, 540, 540, 1080, 1080};
  const ProjectionResult r = project_radar_to_pixel({10, 0, 0, 0}, rig);
  EXPECT_TRUE(r.in_frame);
  EXPECT_NEAR(r.x_p, 540, 1e-9);
  EXPECT_NEAR(r.y_p, 540, 1e-9);
  EXPECT_NEAR(r.z_c, 10, 1e-12);
}

TEST(ProjectRadarToPixel, MatchesStepwiseCompositionBitwise) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    SensorRig rig;
    rig.radar_to_world.rotation =
        ypr_to_rotation(rng.uniform(-kPi, kPi), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    rig.radar_to_world.translation = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    rig.world_to_camera.rotation =
        ypr_to_rotation(rng.uniform(-kPi, kPi), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    rig.world_to_camera.translation = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    rig.intrinsics = {0.004, 4e-6, 4e-6, 540, 540, 1080, 1080};
    RadarDetection det{rng.uniform(0.5, 100), rng.uniform(-kPi + 1e-6, kPi),
                       rng.uniform(-kPi / 2, kPi / 2), 0};

    const ProjectionResult full = project_radar_to_pixel(det, rig);
    const ProjectionResult step = pixel_from_camera(
        camera_from_world(world_from_radar(polar_to_cartesian(det), rig), rig), rig.intrinsics);
    EXPECT_EQ(full.x_p, step.x_p);
    EXPECT_EQ(full.y_p, step.y_p);
    EXPECT_EQ(full.z_c, step.z_c);
    EXPECT_EQ(full.in_frame, step.in_frame);
  }
}

// Acceptance criterion: 1000 randomized pairs against the Eigen oracle at
// 1e-9 relative, in under a second.
TEST(ProjectRadarToPixel, ThousandPairOracleSuite) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(12345);
  int compared = 0;
  for (int i = 0; i < 1000; ++i) {
    const double yaw_r = rng.uniform(-kPi, kPi), pitch_r = rng.uniform(-1.0, 1.0),
                 roll_r = rng.uniform(-1.0, 1.0);
    const double yaw_c = rng.uniform(-kPi, kPi), pitch_c = rng.uniform(-1.0, 1.0),
                 roll_c = rng.uniform(-1.0, 1.0);

    SensorRig rig;
    rig.radar_to_world.rotation = ypr_to_rotation(yaw_r, pitch_r, roll_r);
    rig.radar_to_world.translation = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    rig.world_to_camera.rotation = ypr_to_rotation(yaw_c, pitch_c, roll_c);
    rig.world_to_camera.translation = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    rig.intrinsics = {rng.uniform(0.002, 0.02), rng.uniform(1e-6, 1e-5), rng.uniform(1e-6, 1e-5),
                      rng.uniform(100, 900), rng.uniform(100, 900), 1080, 1080};

    OracleRig oracle;
    oracle.r2w_rot = eigen_ypr(yaw_r, pitch_r, roll_r);
    oracle.r2w_t << rig.radar_to_world.translation.x, rig.radar_to_world.translation.y,
        rig.radar_to_world.translation.z;
    oracle.w2c_rot = eigen_ypr(yaw_c, pitch_c, roll_c);
    oracle.w2c_t << rig.world_to_camera.translation.x, rig.world_to_camera.translation.y,
        rig.world_to_camera.translation.z;
    oracle.k = rig.intrinsics;

    RadarDetection det{rng.uniform(0.5, 150), rng.uniform(-kPi + 1e-6, kPi),
                       rng.uniform(-kPi / 2, kPi / 2), rng.uniform(-30, 30)};
    const ProjectionResult got = project_radar_to_pixel(det, rig);
    const ProjectionResult want = oracle_project(det, oracle);

    ASSERT_EQ(got.in_frame, want.in_frame);
    EXPECT_LT(rel_diff(got.z_c, want.z_c), 1e-9);
    if (std::abs(want.z_c) >= 1e-12) {
      EXPECT_LT(rel_diff(got.x_p, want.x_p), 1e-9);
      EXPECT_LT(rel_diff(got.y_p, want.y_p), 1e-9);
      ++compared;
    }
  }
  EXPECT_GT(compared, 900);

  // On-axis points must hit the principal point regardless of rig pose.
  for (int i = 0; i < 50; ++i) {
    SensorRig rig;
    rig.world_to_camera.rotation.m = {0, -1, 0, 0, 0, -1, 1, 0, 0};
    rig.intrinsics = {0.004, 4e-6, 4e-6, rng.uniform(100, 900), rng.uniform(100, 900), 1080, 1080};
    const ProjectionResult r = project_radar_to_pixel({rng.uniform(1, 100), 0, 0, 0}, rig);
    EXPECT_LT(rel_diff(r.x_p, rig.intrinsics.x_p0), 1e-9);
    EXPECT_LT(rel_diff(r.y_p, rig.intrinsics.y_p0), 1e-9);
  }

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 1.0);
}

TEST(Geometry, PixelRoundTripRecoversCameraPoint) {
  CameraIntrinsics k{0.008, 5e-6, 6e-6, 512, 384, 1024, 768};
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p{rng.uniform(-3, 3), rng.uniform(-2, 2), rng.uniform(0.5, 80)};
    const ProjectionResult r = pixel_from_camera(p, k);
    // Invert using the true depth.
    const double x = (r.x_p - k.x_p0) / k.fx_px() * r.z_c;
    const double y = (r.y_p - k.y_p0) / k.fy_px() * r.z_c;
    EXPECT_LT(rel_diff(x, p.x), 1e-9);
    EXPECT_LT(rel_diff(y, p.y), 1e-9);
  }
}

TEST(Geometry, CompositionAssociativity) {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    RigidTransform a{ypr_to_rotation(rng.uniform(-kPi, kPi), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                     {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)}};
    RigidTransform b{ypr_to_rotation(rng.uniform(-kPi, kPi), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                     {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)}};
    const Vec3 p{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const Vec3 composed = a.compose(b).apply(p);
    const Vec3 stepwise = a.apply(b.apply(p));
    EXPECT_NEAR(composed.x, stepwise.x, 1e-12);
    EXPECT_NEAR(composed.y, stepwise.y, 1e-12);
    EXPECT_NEAR(composed.z, stepwise.z, 1e-12);
  }
}

TEST(Geometry, RigidTransformValidityAndInverse) {
  RigidTransform t{ypr_to_rotation(0.3, -0.2, 1.1), {1, -2, 3}};
  EXPECT_TRUE(t.is_valid());

  RigidTransform scaled = t;
  for (auto& v : scaled.rotation.m) v *= 1.5;
  EXPECT_FALSE(scaled.is_valid());

  const Vec3 p{4, 5, 6};
  const Vec3 back = t.inverse().apply(t.apply(p));
  EXPECT_NEAR(back.x, p.x, 1e-12);
  EXPECT_NEAR(back.y, p.y, 1e-12);
  EXPECT_NEAR(back.z, p.z, 1e-12);
}

TEST(Geometry, PixelInvariantUnderHomogeneousScale) {
  // Scaling the camera-frame point by k > 0 moves depth but not the pixel.
  CameraIntrinsics k{0.004, 4e-6, 4e-6, 540, 540, 1080, 1080};
  const Vec3 p{0.4, -0.2, 7.0};
  const ProjectionResult a = pixel_from_camera(p, k);
  const ProjectionResult b = pixel_from_camera(p * 3.7, k);
  EXPECT_NEAR(a.x_p, b.x_p, 1e-9);
  EXPECT_NEAR(a.y_p, b.y_p, 1e-9);
}
