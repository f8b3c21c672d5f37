#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rvf/detection.hpp"
#include "rvf/geometry.hpp"
#include "rvf/image.hpp"
#include "rvf/radar_imaging.hpp"
#include "rvf/rng.hpp"
#include "rvf/scene.hpp"
#include "rvf/serialize.hpp"
#include "rvf/tensor.hpp"

namespace rvf {

// ---------------------------------------------------------------------------
// simulation config
// ---------------------------------------------------------------------------

struct VehicleRanges {
  int count_min = 1, count_max = 4;
  double speed_min = 0.0, speed_max = 15.0;
  double x_min = 8.0, x_max = 45.0;  // spawn region, world meters
  double y_min = -12.0, y_max = 12.0;
  double length_min = 4.2, length_max = 5.0;
  double width_min = 1.8, width_max = 2.2;
  double height_min = 1.4, height_max = 1.8;
};

enum class SensorMode { kSync, kAsync };

/// Everything the simulator needs: rig, spawn ranges, noise, sensor timing.
struct SimConfig {
  RigSpec rig;
  VehicleRanges vehicles;
  RadarNoiseModel noise{0.15, deg_to_rad(0.3), 0.2, 0.1, 1.0, 6};
  SensorMode sensor_mode = SensorMode::kSync;
  double camera_hz = 20.0;
  double radar_hz = 13.0;
  int splat_radius = 2;
  std::uint64_t seed = 1;
};

/// A rig looking down world +X: camera 2 m up, radar 0.5 m up, square image
/// with a 53 degree horizontal field of view (focal length = image width).
inline RigSpec default_rig_spec(int image_size) {
  if (image_size <= 0) throw std::invalid_argument("default_rig_spec: image_size must be > 0");
  RigSpec spec;
  spec.radar_pose.position = {0.0, 0.0, 0.5};
  spec.radar_pose.ypr_deg = {0.0, 0.0, 0.0};
  spec.camera_pose.position = {0.0, 0.0, 2.0};
  spec.camera_pose.ypr_deg = {0.0, 0.0, 0.0};
  spec.intrinsics.f = 0.004;
  spec.intrinsics.dx = 0.004 / image_size;
  spec.intrinsics.dy = 0.004 / image_size;
  spec.intrinsics.x_p0 = image_size / 2.0;
  spec.intrinsics.y_p0 = image_size / 2.0;
  spec.intrinsics.width = image_size;
  spec.intrinsics.height = image_size;
  return spec;
}

inline SimConfig default_sim_config(int image_size = 1080) {
  SimConfig cfg;
  cfg.rig = default_rig_spec(image_size);
  return cfg;
}

/// Parse a simulation config. Every field is optional: "image_size" shapes
/// the default rig, an explicit "rig" object overrides it entirely.
inline SimConfig sim_config_from_json(const Json& j) {
  const int image_size = j.value("image_size", 1080);
  SimConfig cfg = default_sim_config(image_size);
  if (j.contains("rig")) cfg.rig = rig_spec_from_json(j.at("rig"));
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("sensor_mode")) {
    const std::string m = j.at("sensor_mode").get<std::string>();
    if (m == "sync")
      cfg.sensor_mode = SensorMode::kSync;
    else if (m == "async")
      cfg.sensor_mode = SensorMode::kAsync;
    else
      throw std::runtime_error("sim config: sensor_mode must be \"sync\" or \"async\", got " + m);
  }
  cfg.camera_hz = j.value("camera_hz", cfg.camera_hz);
  cfg.radar_hz = j.value("radar_hz", cfg.radar_hz);
  cfg.splat_radius = j.value("splat_radius", cfg.splat_radius);
  if (j.contains("vehicles")) {
    const Json& v = j.at("vehicles");
    VehicleRanges& r = cfg.vehicles;
    r.count_min = v.value("count_min", r.count_min);
    r.count_max = v.value("count_max", r.count_max);
    r.speed_min = v.value("speed_min", r.speed_min);
    r.speed_max = v.value("speed_max", r.speed_max);
    r.x_min = v.value("x_min", r.x_min);
    r.x_max = v.value("x_max", r.x_max);
    r.y_min = v.value("y_min", r.y_min);
    r.y_max = v.value("y_max", r.y_max);
    r.length_min = v.value("length_min", r.length_min);
    r.length_max = v.value("length_max", r.length_max);
    r.width_min = v.value("width_min", r.width_min);
    r.width_max = v.value("width_max", r.width_max);
    r.height_min = v.value("height_min", r.height_min);
    r.height_max = v.value("height_max", r.height_max);
  }
  if (j.contains("noise")) {
    const Json& n = j.at("noise");
    cfg.noise.sigma_rho = n.value("sigma_rho", cfg.noise.sigma_rho);
    if (n.contains("sigma_theta_deg"))
      cfg.noise.sigma_theta = deg_to_rad(n.at("sigma_theta_deg").get<double>());
    cfg.noise.sigma_v = n.value("sigma_v", cfg.noise.sigma_v);
    cfg.noise.dropout_p = n.value("dropout_p", cfg.noise.dropout_p);
    cfg.noise.ghost_rate = n.value("ghost_rate", cfg.noise.ghost_rate);
    cfg.noise.points_per_vehicle = n.value("points_per_vehicle", cfg.noise.points_per_vehicle);
  }
  if (cfg.vehicles.count_min < 0 || cfg.vehicles.count_max < cfg.vehicles.count_min)
    throw std::runtime_error("sim config: invalid vehicle count range");
  if (!cfg.noise.is_valid()) throw std::runtime_error("sim config: invalid noise model");
  if (cfg.camera_hz <= 0 || cfg.radar_hz <= 0)
    throw std::runtime_error("sim config: sensor rates must be positive");
  if (cfg.splat_radius < 0) throw std::runtime_error("sim config: splat_radius must be >= 0");
  return cfg;
}

inline Json sim_config_to_json(const SimConfig& cfg) {
  Json j;
  j["seed"] = cfg.seed;
  j["sensor_mode"] = cfg.sensor_mode == SensorMode::kSync ? "sync" : "async";
  j["camera_hz"] = cfg.camera_hz;
  j["radar_hz"] = cfg.radar_hz;
  j["splat_radius"] = cfg.splat_radius;
  const VehicleRanges& r = cfg.vehicles;
  j["vehicles"] = {{"count_min", r.count_min},   {"count_max", r.count_max},
                   {"speed_min", r.speed_min},   {"speed_max", r.speed_max},
                   {"x_min", r.x_min},           {"x_max", r.x_max},
                   {"y_min", r.y_min},           {"y_max", r.y_max},
                   {"length_min", r.length_min}, {"length_max", r.length_max},
                   {"width_min", r.width_min},   {"width_max", r.width_max},
                   {"height_min", r.height_min}, {"height_max", r.height_max}};
  j["noise"] = {{"sigma_rho", cfg.noise.sigma_rho},
                {"sigma_theta_deg", rad_to_deg(cfg.noise.sigma_theta)},
                {"sigma_v", cfg.noise.sigma_v},
                {"dropout_p", cfg.noise.dropout_p},
                {"ghost_rate", cfg.noise.ghost_rate},
                {"points_per_vehicle", cfg.noise.points_per_vehicle}};
  j["rig"] = rig_spec_to_json(cfg.rig);
  return j;
}

// ---------------------------------------------------------------------------
// frame generation
// ---------------------------------------------------------------------------

struct FrameData {
  Scene scene;            // world state at the camera timestamp
  VisionRender vision;    // image + GT boxes
  RadarFrame radar;       // time-aligned onto the camera timestamp
  double camera_time = 0; // seconds
};

namespace detail {

constexpr std::uint64_t kFrameStream = 0x6672616d65ULL;  // "frame"
constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;  // "split"

/// Random scene at a given time. Worlds are independent per frame, which
/// keeps generation embarrassingly parallel.
inline Scene random_scene(const SimConfig& cfg, const SensorRig& rig, std::uint64_t frame_index,
                          double time) {
  Rng rng = Rng::substream(cfg.seed, {kFrameStream, frame_index});
  Scene scene;
  scene.rig = rig;
  scene.time = time;
  scene.rng_seed = cfg.seed;
  const VehicleRanges& r = cfg.vehicles;
  const int n = static_cast<int>(rng.uniform_int(r.count_min, r.count_max));
  for (int i = 0; i < n; ++i) {
    Vehicle v;
    v.id = i;
    v.center.x = rng.uniform(r.x_min, r.x_max);
    v.center.y = rng.uniform(r.y_min, r.y_max);
    v.extent.x = rng.uniform(r.length_min, r.length_max);
    v.extent.y = rng.uniform(r.width_min, r.width_max);
    v.extent.z = rng.uniform(r.height_min, r.height_max);
    v.center.z = v.extent.z / 2.0;  // resting on the ground plane
    v.heading = rng.uniform(0.0, 2.0 * 3.141592653589793238462643);
    v.speed = rng.uniform(r.speed_min, r.speed_max);
    v.color = {static_cast<std::uint8_t>(rng.uniform_int(30, 230)),
               static_cast<std::uint8_t>(rng.uniform_int(30, 230)),
               static_cast<std::uint8_t>(rng.uniform_int(30, 230))};
    scene.vehicles.push_back(v);
  }
  return scene;
}

}  // namespace detail

/// One synchronized sensor pair. In sync mode the radar is sampled exactly at
/// the camera timestamp; in async mode the two radar frames bracketing it are
/// sampled and interpolated by time_align.
inline FrameData generate_frame(const SimConfig& cfg, std::uint64_t frame_index) {
  const SensorRig rig = build_rig(cfg.rig);
  const double t_cam = static_cast<double>(frame_index) / cfg.camera_hz;

  FrameData out;
  out.camera_time = t_cam;
  if (cfg.sensor_mode == SensorMode::kSync) {
    out.scene = detail::random_scene(cfg, rig, frame_index, t_cam);
    const RadarFrame raw = sample_radar(out.scene, cfg.noise);
    out.radar = time_align({raw}, {t_cam})[0];
  } else {
    const double radar_dt = 1.0 / cfg.radar_hz;
    const double t_lo = std::floor(t_cam * cfg.radar_hz) * radar_dt;
    Scene at_lo = detail::random_scene(cfg, rig, frame_index, t_lo);
    const RadarFrame frame_lo = sample_radar(at_lo, cfg.noise);
    const Scene at_hi = step_scene(at_lo, radar_dt);
    const RadarFrame frame_hi = sample_radar(at_hi, cfg.noise);
    out.scene = t_cam > t_lo ? step_scene(at_lo, t_cam - t_lo) : std::move(at_lo);
    out.radar = time_align({frame_lo, frame_hi}, {t_cam})[0];
  }
  out.vision = render_vision(out.scene);
  return out;
}

// ---------------------------------------------------------------------------
// dataset emission
// ---------------------------------------------------------------------------

/// Largest-remainder partition of n into the 5.5 : 2.5 : 2 split.
inline std::array<int, 3> split_counts(int n) {
  const std::array<double, 3> weights = {5.5, 2.5, 2.0};
  const double total = weights[0] + weights[1] + weights[2];
  std::array<int, 3> counts{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double quota = n * weights[static_cast<std::size_t>(i)] / total;
    counts[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(quota));
    frac[static_cast<std::size_t>(i)] = quota - std::floor(quota);
    assigned += counts[static_cast<std::size_t>(i)];
  }
  for (int left = n - assigned; left > 0; --left) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[static_cast<std::size_t>(i)] > frac[static_cast<std::size_t>(best)]) best = i;
    ++counts[static_cast<std::size_t>(best)];
    frac[static_cast<std::size_t>(best)] = -1.0;
  }
  return counts;
}

inline const std::array<std::string, 3>& split_names() {
  static const std::array<std::string, 3> names = {"train", "val", "test"};
  return names;
}

struct DatasetManifest {
  std::uint64_t seed = 0;
  int n_frames = 0;
  std::array<int, 3> counts{};  // train, val, test
  int image_size = 0;
  int splat_radius = 0;
  std::string sensor_mode;
};

inline std::string frame_basename(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06llu", static_cast<unsigned long long>(index));
  return buf;
}

/// Generate n_frames sensor pairs and write the full dataset tree:
///   out_dir/{train,val,test}/{vision,radar_png,radar_raw}/frame_NNNNNN.*
/// plus annotations_{split}.json, rig.json, and manifest.json at the root.
/// Frames are independent, so `workers` threads may fan out over them; the
/// output is byte-identical regardless of worker count.
inline DatasetManifest emit_dataset(const SimConfig& cfg, int n_frames, const std::string& out_dir,
                                    int workers = 1) {
  namespace fs = std::filesystem;
  if (n_frames < 10) throw std::invalid_argument("emit_dataset: need at least 10 frames");
  if (cfg.rig.intrinsics.width != cfg.rig.intrinsics.height)
    throw std::invalid_argument("emit_dataset: only square images are supported");
  workers = std::clamp(workers, 1, n_frames);

  std::error_code ec;
  for (const std::string& split : split_names())
    for (const char* sub : {"vision", "radar_png", "radar_raw"}) {
      fs::create_directories(fs::path(out_dir) / split / sub, ec);
      if (ec)
        throw std::runtime_error("emit_dataset: cannot create " +
                                 (fs::path(out_dir) / split / sub).string() + ": " + ec.message());
    }

  // Seeded shuffle assigns each frame to a split.
  const std::array<int, 3> counts = split_counts(n_frames);
  std::vector<int> order(static_cast<std::size_t>(n_frames));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = Rng::substream(cfg.seed, {detail::kSplitStream});
  split_rng.shuffle(order);
  std::vector<int> split_of(static_cast<std::size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i) {
    const int rank = i;
    const int split = rank < counts[0] ? 0 : (rank < counts[0] + counts[1] ? 1 : 2);
    split_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = split;
  }

  const SensorRig rig = build_rig(cfg.rig);

  // Per-frame generation and file writes; annotation assembly stays ordered.
  std::vector<std::vector<VehicleBox>> frame_boxes(static_cast<std::size_t>(n_frames));
  auto emit_range = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      const FrameData frame = generate_frame(cfg, static_cast<std::uint64_t>(i));
      const int split = split_of[static_cast<std::size_t>(i)];
      const fs::path split_dir =
          fs::path(out_dir) / split_names()[static_cast<std::size_t>(split)];
      const std::string base = frame_basename(static_cast<std::uint64_t>(i));

      write_png((split_dir / "vision" / (base + ".png")).string(), frame.vision.image);
      save_json_file((split_dir / "radar_raw" / (base + ".json")).string(),
                     radar_frame_to_json(frame.radar));
      const Image8 radar_img = render_radar_frame(frame.radar, rig, cfg.rig.intrinsics.width,
                                                  cfg.rig.intrinsics.height, cfg.splat_radius);
      write_png((split_dir / "radar_png" / (base + ".png")).string(), radar_img);
      frame_boxes[static_cast<std::size_t>(i)] = frame.vision.boxes;
    }
  };
  if (workers == 1) {
    emit_range(0, n_frames);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mu;
    const int chunk = (n_frames + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * chunk;
      const int end = std::min(n_frames, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, begin, end] {
        try {
          emit_range(begin, end);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  std::array<AnnotationSet, 3> anns;
  for (auto& a : anns) a.categories.emplace_back(1, "vehicle");
  int next_ann_id = 1;
  for (int i = 0; i < n_frames; ++i) {
    const int split = split_of[static_cast<std::size_t>(i)];
    AnnotationSet& ann = anns[static_cast<std::size_t>(split)];
    ann.images.push_back({i, frame_basename(static_cast<std::uint64_t>(i)) + ".png",
                          cfg.rig.intrinsics.width, cfg.rig.intrinsics.height});
    for (const VehicleBox& box : frame_boxes[static_cast<std::size_t>(i)]) {
      AnnotationRecord rec;
      rec.id = next_ann_id++;
      rec.image_id = i;
      rec.bbox[0] = box.x1;
      rec.bbox[1] = box.y1;
      rec.bbox[2] = box.x2 - box.x1;
      rec.bbox[3] = box.y2 - box.y1;
      rec.category_id = 1;
      rec.area = rec.bbox[2] * rec.bbox[3];
      ann.annotations.push_back(rec);
    }
  }

  for (int s = 0; s < 3; ++s)
    save_json_file((fs::path(out_dir) /
                    ("annotations_" + split_names()[static_cast<std::size_t>(s)] + ".json"))
                       .string(),
                   annotation_set_to_json(anns[static_cast<std::size_t>(s)]));
  save_json_file((fs::path(out_dir) / "rig.json").string(), rig_spec_to_json(cfg.rig));

  DatasetManifest manifest;
  manifest.seed = cfg.seed;
  manifest.n_frames = n_frames;
  manifest.counts = counts;
  manifest.image_size = cfg.rig.intrinsics.width;
  manifest.splat_radius = cfg.splat_radius;
  manifest.sensor_mode = cfg.sensor_mode == SensorMode::kSync ? "sync" : "async";
  Json mj;
  mj["seed"] = manifest.seed;
  mj["n_frames"] = manifest.n_frames;
  mj["counts"] = {{"train", counts[0]}, {"val", counts[1]}, {"test", counts[2]}};
  mj["image_size"] = manifest.image_size;
  mj["splat_radius"] = manifest.splat_radius;
  mj["sensor_mode"] = manifest.sensor_mode;
  save_json_file((fs::path(out_dir) / "manifest.json").string(), mj);
  return manifest;
}

// ---------------------------------------------------------------------------
// dataset loading
// ---------------------------------------------------------------------------

struct LoadedSample {
  int image_id = 0;
  std::string file_name;
  Image8 vision;
  Image8 radar;
  std::vector<GtBox> gts;
};

struct LoadedDataset {
  std::vector<LoadedSample> samples;  // sorted by image id
  AnnotationSet annotations;
  int image_size = 0;
};

/// Load one split. The vision PNG is required; the radar image comes from
/// radar_png, or is re-rendered from radar_raw (using rig.json and the
/// manifest splat radius) when the PNG is absent.
inline LoadedDataset load_dataset(const std::string& dir, const std::string& split) {
  namespace fs = std::filesystem;
  if (std::find(split_names().begin(), split_names().end(), split) == split_names().end())
    throw std::invalid_argument("load_dataset: unknown split " + split);

  const fs::path root(dir);
  LoadedDataset out;
  out.annotations =
      annotation_set_from_json(load_json_file((root / ("annotations_" + split + ".json")).string()));

  // Optional re-render inputs, loaded lazily on first miss.
  bool have_rig = false;
  SensorRig rig;
  int splat_radius = 0;

  std::vector<const AnnotationImage*> images;
  for (const auto& im : out.annotations.images) images.push_back(&im);
  std::sort(images.begin(), images.end(),
            [](const AnnotationImage* a, const AnnotationImage* b) { return a->id < b->id; });

  for (const AnnotationImage* im : images) {
    LoadedSample sample;
    sample.image_id = im->id;
    sample.file_name = im->file_name;

    const fs::path vision_path = root / split / "vision" / im->file_name;
    if (!fs::exists(vision_path))
      throw std::runtime_error("load_dataset: missing vision image for frame " +
                               std::to_string(im->id) + ": " + vision_path.string());
    sample.vision = read_png(vision_path.string());
    if (sample.vision.width != im->width || sample.vision.height != im->height)
      throw std::runtime_error("load_dataset: vision image size mismatch for frame " +
                               std::to_string(im->id));

    const fs::path radar_png_path = root / split / "radar_png" / im->file_name;
    const std::string raw_name =
        im->file_name.substr(0, im->file_name.find_last_of('.')) + ".json";
    const fs::path radar_raw_path = root / split / "radar_raw" / raw_name;
    if (fs::exists(radar_png_path)) {
      sample.radar = read_png(radar_png_path.string());
    } else if (fs::exists(radar_raw_path)) {
      if (!have_rig) {
        rig = build_rig(load_rig_spec((root / "rig.json").string()));
        const Json manifest = load_json_file((root / "manifest.json").string());
        splat_radius = manifest.value("splat_radius", 0);
        have_rig = true;
      }
      const RadarFrame frame = radar_frame_from_json(load_json_file(radar_raw_path.string()));
      sample.radar = render_radar_frame(frame, rig, im->width, im->height, splat_radius);
    } else {
      throw std::runtime_error("load_dataset: frame " + std::to_string(im->id) +
                               " has neither radar_png nor radar_raw (" +
                               radar_png_path.string() + ")");
    }
    if (sample.radar.width != im->width || sample.radar.height != im->height)
      throw std::runtime_error("load_dataset: radar image size mismatch for frame " +
                               std::to_string(im->id));

    out.samples.push_back(std::move(sample));
  }

  for (const AnnotationRecord& rec : out.annotations.annotations) {
    auto it = std::lower_bound(out.samples.begin(), out.samples.end(), rec.image_id,
                               [](const LoadedSample& s, int id) { return s.image_id < id; });
    if (it == out.samples.end() || it->image_id != rec.image_id)
      throw std::runtime_error("load_dataset: annotation " + std::to_string(rec.id) +
                               " references missing frame " + std::to_string(rec.image_id));
    GtBox box;
    box.x1 = rec.bbox[0];
    box.y1 = rec.bbox[1];
    box.x2 = rec.bbox[0] + rec.bbox[2];
    box.y2 = rec.bbox[1] + rec.bbox[3];
    box.class_id = rec.category_id - 1;
    it->gts.push_back(box);
  }

  out.image_size = out.samples.empty() ? 0 : out.samples.front().vision.width;
  return out;
}

// ---------------------------------------------------------------------------
// image -> tensor
// ---------------------------------------------------------------------------

/// (1, 3, H, W) tensor with channel planes R, G, B scaled to [0, 1].
template <typename S = double>
inline TensorT<S> image_to_tensor(const Image8& img) {
  if (img.width <= 0 || img.height <= 0)
    throw std::invalid_argument("image_to_tensor: empty image");
  TensorT<S> t = TensorT<S>::zeros({1, 3, img.height, img.width});
  auto& v = t.raw_value();
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t* px = img.at(x, y);
      const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
      v[i] = static_cast<S>(px[0] / 255.0);
      v[plane + i] = static_cast<S>(px[1] / 255.0);
      v[2 * plane + i] = static_cast<S>(px[2] / 255.0);
    }
  return t;
}

/// Nearest-neighbour resize, used when inference input size differs from the
/// trained network's input size.
inline Image8 resize_nearest(const Image8& img, int w, int h) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("resize_nearest: bad target size");
  Image8 out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = static_cast<int>(static_cast<std::int64_t>(x) * img.width / w);
      const int sy = static_cast<int>(static_cast<std::int64_t>(y) * img.height / h);
      const std::uint8_t* src = img.at(sx, sy);
      std::uint8_t* dst = out.at(x, y);
      dst[0] = src[0];
      dst[1] = src[1];
      dst[2] = src[2];
    }
  return out;
}

}  // namespace rvf
