#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rvf/geometry.hpp"
#include "rvf/image.hpp"
#include "rvf/radar_imaging.hpp"
#include "rvf/rng.hpp"

namespace rvf {

struct Vehicle {
  int id = 0;
  Vec3 center;           // world frame, meters
  Vec3 extent;           // length (along heading), width, height, meters
  double heading = 0.0;  // radians about world +Z, 0 = world +X
  double speed = 0.0;    // m/s, nonnegative
  RgbTriple color{128, 128, 128};

  bool is_valid() const {
    return extent.x > 0 && extent.y > 0 && extent.z > 0 && speed >= 0;
  }
  Vec3 velocity() const { return {speed * std::cos(heading), speed * std::sin(heading), 0.0}; }
};

struct Scene {
  std::vector<Vehicle> vehicles;
  SensorRig rig;
  double time = 0.0;
  std::uint64_t rng_seed = 0;
};

struct RadarNoiseModel {
  double sigma_rho = 0.0;    // meters
  double sigma_theta = 0.0;  // radians, applied to both azimuth and elevation
  double sigma_v = 0.0;      // m/s
  double dropout_p = 0.0;
  double ghost_rate = 0.0;  // expected false points per frame
  int points_per_vehicle = 1;

  bool is_valid() const {
    return sigma_rho >= 0 && sigma_theta >= 0 && sigma_v >= 0 && dropout_p >= 0 &&
           dropout_p <= 1 && ghost_rate >= 0 && points_per_vehicle >= 1;
  }
};

/// Constant-velocity advance. Pure: same scene and dt always give the same
/// result, and two half steps equal one full step.
inline Scene step_scene(const Scene& scene, double dt) {
  if (dt <= 0) throw std::invalid_argument("step_scene: dt must be positive");
  Scene out = scene;
  out.time += dt;
  for (auto& v : out.vehicles) {
    v.center.x += v.speed * dt * std::cos(v.heading);
    v.center.y += v.speed * dt * std::sin(v.heading);
  }
  return out;
}

struct VehicleBox {
  int vehicle_id = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // pixel coords, clipped to frame
};

namespace detail {

/// The 8 cuboid corners in world coordinates.
inline std::vector<Vec3> cuboid_corners(const Vehicle& v) {
  const double ch = std::cos(v.heading), sh = std::sin(v.heading);
  const Vec3 ax_l{ch, sh, 0.0};   // along heading
  const Vec3 ax_w{-sh, ch, 0.0};  // left
  const Vec3 ax_h{0.0, 0.0, 1.0};
  std::vector<Vec3> out;
  out.reserve(8);
  for (int sl : {-1, 1})
    for (int sw : {-1, 1})
      for (int sz : {-1, 1})
        out.push_back(v.center + ax_l * (0.5 * sl * v.extent.x) +
                      ax_w * (0.5 * sw * v.extent.y) + ax_h * (0.5 * sz * v.extent.z));
  return out;
}

}  // namespace detail

struct VisionRender {
  Image8 image;
  std::vector<VehicleBox> boxes;
};

/// Flat-shaded render: every vehicle whose cuboid reaches in front of the
/// camera becomes a filled rectangle (the axis-aligned hull of its projected
/// corners), drawn far-to-near so closer vehicles overwrite farther ones.
/// Boxes are reported for every drawn vehicle, occluded or not.
inline VisionRender render_vision(const Scene& scene) {
  const CameraIntrinsics& k = scene.rig.intrinsics;
  if (!scene.rig.intrinsics.is_valid() || !scene.rig.world_to_camera.is_valid() ||
      !scene.rig.radar_to_world.is_valid())
    throw std::invalid_argument("render_vision: invalid sensor rig");

  VisionRender out;
  out.image = Image8(k.width, k.height);
  out.image.fill(96, 96, 96);

  struct Drawable {
    double depth;  // camera-frame z of vehicle center
    std::size_t order;
    VehicleBox box;
    RgbTriple color;
  };
  std::vector<Drawable> drawables;

  for (std::size_t vi = 0; vi < scene.vehicles.size(); ++vi) {
    const Vehicle& v = scene.vehicles[vi];
    double x1 = 1e300, y1 = 1e300, x2 = -1e300, y2 = -1e300;
    bool any_in_front = false;
    for (const Vec3& corner : detail::cuboid_corners(v)) {
      const Vec3 pc = camera_from_world(corner, scene.rig);
      if (pc.z <= 1e-9) continue;
      any_in_front = true;
      const ProjectionResult pr = pixel_from_camera(pc, k);
      x1 = std::min(x1, pr.x_p);
      y1 = std::min(y1, pr.y_p);
      x2 = std::max(x2, pr.x_p);
      y2 = std::max(y2, pr.y_p);
    }
    if (!any_in_front) continue;
    x1 = std::max(x1, 0.0);
    y1 = std::max(y1, 0.0);
    x2 = std::min(x2, static_cast<double>(k.width));
    y2 = std::min(y2, static_cast<double>(k.height));
    if (x1 >= x2 || y1 >= y2) continue;
    const Vec3 center_cam = camera_from_world(v.center, scene.rig);
    drawables.push_back({center_cam.z, vi, {v.id, x1, y1, x2, y2}, v.color});
  }

  std::sort(drawables.begin(), drawables.end(), [](const Drawable& a, const Drawable& b) {
    if (a.depth != b.depth) return a.depth > b.depth;  // far first
    return a.order < b.order;
  });

  for (const Drawable& d : drawables) {
    const int px0 = std::max(0, static_cast<int>(std::floor(d.box.x1 + 0.5)));
    const int py0 = std::max(0, static_cast<int>(std::floor(d.box.y1 + 0.5)));
    const int px1 = std::min(k.width - 1, static_cast<int>(std::floor(d.box.x2 - 0.5)));
    const int py1 = std::min(k.height - 1, static_cast<int>(std::floor(d.box.y2 - 0.5)));
    for (int y = py0; y <= py1; ++y)
      for (int x = px0; x <= px1; ++x) {
        std::uint8_t* px = out.image.at(x, y);
        px[0] = d.color.r;
        px[1] = d.color.g;
        px[2] = d.color.b;
      }
    out.boxes.push_back(d.box);
  }
  // Report in vehicle order regardless of paint order.
  std::sort(out.boxes.begin(), out.boxes.end(),
            [](const VehicleBox& a, const VehicleBox& b) { return a.vehicle_id < b.vehicle_id; });
  return out;
}

/// Radar measurement of a scene. Points are sampled on the vertical cuboid
/// face most oriented toward the radar, converted to polar coordinates in the
/// radar frame, and perturbed. Doppler velocity is the radial component of
/// the vehicle velocity (negative when approaching). Reproducible: the draw
/// stream depends only on (scene.rng_seed, scene.time).
inline RadarFrame sample_radar(const Scene& scene, const RadarNoiseModel& noise) {
  if (!noise.is_valid()) throw std::invalid_argument("sample_radar: invalid noise model");
  Rng rng = Rng::substream(scene.rng_seed, {0x7261646172ULL, bits_of(scene.time)});
  const RigidTransform world_to_radar = scene.rig.radar_to_world.inverse();
  const Vec3 radar_pos = scene.rig.radar_to_world.translation;

  RadarFrame frame;
  frame.timestamp = scene.time;
  for (const Vehicle& v : scene.vehicles) {
    const double ch = std::cos(v.heading), sh = std::sin(v.heading);
    const Vec3 ax_l{ch, sh, 0.0};
    const Vec3 ax_w{-sh, ch, 0.0};
    const Vec3 ax_h{0.0, 0.0, 1.0};
    const Vec3 to_radar = radar_pos - v.center;

    // Pick the vertical face whose outward normal points most toward the radar.
    struct Face {
      Vec3 normal, tangent;
      double half_n, half_t;
    };
    const Face faces[4] = {
        {ax_l, ax_w, 0.5 * v.extent.x, 0.5 * v.extent.y},
        {ax_l * -1.0, ax_w, 0.5 * v.extent.x, 0.5 * v.extent.y},
        {ax_w, ax_l, 0.5 * v.extent.y, 0.5 * v.extent.x},
        {ax_w * -1.0, ax_l, 0.5 * v.extent.y, 0.5 * v.extent.x},
    };
    const Face* best = &faces[0];
    double best_dot = -1e300;
    for (const Face& f : faces) {
      const double d = f.normal.dot(to_radar);
      if (d > best_dot) {
        best_dot = d;
        best = &f;
      }
    }

    const Vec3 vel = v.velocity();
    for (int i = 0; i < noise.points_per_vehicle; ++i) {
      const double ut = rng.uniform(-1.0, 1.0);
      const double uh = rng.uniform(-1.0, 1.0);
      const Vec3 p = v.center + best->normal * best->half_n + best->tangent * (ut * best->half_t) +
                     ax_h * (uh * 0.5 * v.extent.z);
      const Vec3 q = world_to_radar.apply(p);
      const double rho = q.norm();
      double theta = std::atan2(q.y, q.x);
      double phi = rho > 1e-12 ? std::asin(std::clamp(q.z / rho, -1.0, 1.0)) : 0.0;
      const Vec3 u = (p - radar_pos).normalized();
      const double doppler = vel.dot(u);

      RadarDetection det;
      det.rho = rho + rng.normal(0.0, noise.sigma_rho);
      det.theta = theta + rng.normal(0.0, noise.sigma_theta);
      det.phi = phi + rng.normal(0.0, noise.sigma_theta);
      det.v = doppler + rng.normal(0.0, noise.sigma_v);
      const bool dropped = rng.uniform() < noise.dropout_p;
      if (!dropped && det.rho > 0) frame.detections.push_back(det);
    }
  }

  const int n_ghosts = noise.ghost_rate > 0 ? rng.poisson(noise.ghost_rate) : 0;
  for (int i = 0; i < n_ghosts; ++i) {
    RadarDetection det;
    det.rho = rng.uniform(1.0, 120.0);
    det.theta = rng.uniform(deg_to_rad(-60.0), deg_to_rad(60.0));
    det.phi = rng.uniform(deg_to_rad(-5.0), deg_to_rad(5.0));
    det.v = rng.uniform(-20.0, 20.0);
    frame.detections.push_back(det);
  }
  return frame;
}

}  // namespace rvf
