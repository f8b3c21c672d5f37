#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rvf {

inline constexpr double kPi = 3.14159265358979323846264338327950288;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return n > 0.0 ? Vec3{x / n, y / n, z / n} : Vec3{};
  }
};

/// Row-major 3x3 matrix. Kept dependency-free on purpose: the test oracles
/// recompute the same chains with Eigen, so the two routes stay independent.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }

  static Mat3 rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {{1, 0, 0, 0, c, -s, 0, s, c}};
  }
  static Mat3 rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {{c, 0, s, 0, 1, 0, -s, 0, c}};
  }
  static Mat3 rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {{c, -s, 0, s, c, 0, 0, 0, 1}};
  }

  double at(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }
  double& at(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += at(i, k) * o.at(k, j);
        r.at(i, j) = s;
      }
    return r;
  }

  Mat3 transposed() const {
    return {{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

/// Yaw-pitch-roll (Z-Y-X order) to rotation matrix, angles in radians.
inline Mat3 ypr_to_rotation(double yaw, double pitch, double roll) {
  return Mat3::rot_z(yaw) * Mat3::rot_y(pitch) * Mat3::rot_x(roll);
}

struct RigidTransform {
  Mat3 rotation = Mat3::identity();
  Vec3 translation{};

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  /// this ∘ inner: first apply `inner`, then this transform.
  RigidTransform compose(const RigidTransform& inner) const {
    return {rotation * inner.rotation, rotation * inner.translation + translation};
  }

  RigidTransform inverse() const {
    const Mat3 rt = rotation.transposed();
    const Vec3 t = rt * translation;
    return {rt, {-t.x, -t.y, -t.z}};
  }

  /// Orthonormal with det +1 within tol.
  bool is_valid(double tol = 1e-9) const {
    const Mat3 should_be_i = rotation.transposed() * rotation;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double want = (i == j) ? 1.0 : 0.0;
        if (std::abs(should_be_i.at(i, j) - want) > tol) return false;
      }
    return std::abs(rotation.det() - 1.0) <= tol;
  }
};

/// One mmw radar return in polar form (range, azimuth, elevation, radial
/// velocity). Positive velocity = receding along the radar boresight.
struct RadarDetection {
  double rho = 0.0;    ///< range [m]
  double theta = 0.0;  ///< azimuth [rad], in (-pi, pi]
  double phi = 0.0;    ///< elevation [rad], in [-pi/2, pi/2]
  double v = 0.0;      ///< radial velocity [m/s]

  bool is_valid() const {
    return rho >= 0.0 && theta > -kPi && theta <= kPi && phi >= -kPi / 2 && phi <= kPi / 2;
  }
};

struct CameraIntrinsics {
  double f = 0.0;     ///< focal length [m]
  double dx = 0.0;    ///< pixel pitch [m/px]
  double dy = 0.0;
  double x_p0 = 0.0;  ///< principal point [px]
  double y_p0 = 0.0;
  int width = 0;      ///< image size [px]
  int height = 0;

  double fx_px() const { return f / dx; }
  double fy_px() const { return f / dy; }

  bool is_valid() const {
    return f > 0.0 && dx > 0.0 && dy > 0.0 && x_p0 >= 0.0 && x_p0 < width && y_p0 >= 0.0 &&
           y_p0 < height;
  }
};

/// Full sensor arrangement: radar->world and world->camera rigid transforms
/// plus the camera intrinsics.
struct SensorRig {
  RigidTransform radar_to_world;
  RigidTransform world_to_camera;
  CameraIntrinsics intrinsics;
};

struct ProjectionResult {
  double x_p = 0.0;
  double y_p = 0.0;
  double z_c = 0.0;  ///< camera-frame depth [m]
  bool in_frame = false;
};

/// Polar radar coordinates to Cartesian radar-frame coordinates:
/// (rho cos(theta) cos(phi), rho sin(theta) cos(phi), rho sin(phi)).
inline Vec3 polar_to_cartesian(const RadarDetection& det) {
  const double cp = std::cos(det.phi);
  return {det.rho * std::cos(det.theta) * cp, det.rho * std::sin(det.theta) * cp,
          det.rho * std::sin(det.phi)};
}

inline Vec3 world_from_radar(const Vec3& p, const SensorRig& rig) {
  return rig.radar_to_world.apply(p);
}

inline Vec3 camera_from_world(const Vec3& p, const SensorRig& rig) {
  return rig.world_to_camera.apply(p);
}

/// Pinhole projection of a camera-frame point. Near-zero depth
/// (|z_c| < 1e-12) skips the division and reports in_frame=false with the
/// pixel coordinates left at the 0 sentinel.
inline ProjectionResult pixel_from_camera(const Vec3& p_c, const CameraIntrinsics& k) {
  ProjectionResult r;
  r.z_c = p_c.z;
  if (std::abs(p_c.z) < 1e-12) return r;
  r.x_p = k.fx_px() * (p_c.x / p_c.z) + k.x_p0;
  r.y_p = k.fy_px() * (p_c.y / p_c.z) + k.y_p0;
  r.in_frame = p_c.z > 0.0 && r.x_p >= 0.0 && r.x_p < k.width && r.y_p >= 0.0 && r.y_p < k.height;
  return r;
}

/// Full chain: polar -> radar Cartesian -> world -> camera -> pixel.
inline ProjectionResult project_radar_to_pixel(const RadarDetection& det, const SensorRig& rig) {
  return pixel_from_camera(camera_from_world(world_from_radar(polar_to_cartesian(det), rig), rig),
                           rig.intrinsics);
}

}  // namespace rvf
