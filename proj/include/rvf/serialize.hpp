#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rvf/detection.hpp"
#include "rvf/geometry.hpp"
#include "rvf/model.hpp"
#include "rvf/radar_imaging.hpp"

namespace rvf {

// Insertion-ordered JSON keeps every emitted file byte-stable across runs.
using Json = nlohmann::ordered_json;

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

inline void save_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// sensor rig
// ---------------------------------------------------------------------------

struct PoseSpec {
  Vec3 position;
  Vec3 ypr_deg;  // yaw, pitch, roll in degrees
};

/// The on-disk rig description: mounting poses plus camera intrinsics.
/// Mount frames are X-forward / Y-left / Z-up.
struct RigSpec {
  PoseSpec radar_pose;
  PoseSpec camera_pose;
  CameraIntrinsics intrinsics;
};

/// Build the runtime rig. The camera's world_to_camera folds in the
/// mount-to-optical axis permutation (optical +Z looks along mount +X).
inline SensorRig build_rig(const RigSpec& spec) {
  SensorRig rig;
  rig.radar_to_world.rotation =
      ypr_to_rotation(deg_to_rad(spec.radar_pose.ypr_deg.x), deg_to_rad(spec.radar_pose.ypr_deg.y),
                      deg_to_rad(spec.radar_pose.ypr_deg.z));
  rig.radar_to_world.translation = spec.radar_pose.position;

  Mat3 cam_rot = ypr_to_rotation(deg_to_rad(spec.camera_pose.ypr_deg.x),
                                 deg_to_rad(spec.camera_pose.ypr_deg.y),
                                 deg_to_rad(spec.camera_pose.ypr_deg.z));
  Mat3 perm;  // optical_x = -mount_y, optical_y = -mount_z, optical_z = mount_x
  perm.m = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  const Mat3 world_to_optical = perm * cam_rot.transposed();
  rig.world_to_camera.rotation = world_to_optical;
  rig.world_to_camera.translation = (world_to_optical * spec.camera_pose.position) * -1.0;
  rig.intrinsics = spec.intrinsics;

  if (!rig.radar_to_world.is_valid() || !rig.world_to_camera.is_valid() ||
      !rig.intrinsics.is_valid())
    throw std::invalid_argument("build_rig: rig description violates invariants");
  return rig;
}

namespace detail {

inline Vec3 vec3_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3)
    throw std::runtime_error("rig: " + what + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Json vec3_to_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }

inline PoseSpec pose_from_json(const Json& j, const std::string& what) {
  PoseSpec p;
  p.position = vec3_from_json(j.at("position"), what + ".position");
  p.ypr_deg = vec3_from_json(j.at("ypr_deg"), what + ".ypr_deg");
  return p;
}

}  // namespace detail

inline RigSpec rig_spec_from_json(const Json& j) {
  try {
    RigSpec spec;
    spec.radar_pose = detail::pose_from_json(j.at("radar_pose"), "radar_pose");
    spec.camera_pose = detail::pose_from_json(j.at("camera_pose"), "camera_pose");
    const Json& k = j.at("intrinsics");
    spec.intrinsics.f = k.at("f").get<double>();
    spec.intrinsics.dx = k.at("dx").get<double>();
    spec.intrinsics.dy = k.at("dy").get<double>();
    spec.intrinsics.x_p0 = k.at("x_p0").get<double>();
    spec.intrinsics.y_p0 = k.at("y_p0").get<double>();
    spec.intrinsics.width = k.at("width").get<int>();
    spec.intrinsics.height = k.at("height").get<int>();
    return spec;
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("rig: missing or mistyped field: ") + e.what());
  }
}

inline Json rig_spec_to_json(const RigSpec& spec) {
  Json j;
  j["radar_pose"] = {{"position", detail::vec3_to_json(spec.radar_pose.position)},
                     {"ypr_deg", detail::vec3_to_json(spec.radar_pose.ypr_deg)}};
  j["camera_pose"] = {{"position", detail::vec3_to_json(spec.camera_pose.position)},
                      {"ypr_deg", detail::vec3_to_json(spec.camera_pose.ypr_deg)}};
  j["intrinsics"] = {{"f", spec.intrinsics.f},     {"dx", spec.intrinsics.dx},
                     {"dy", spec.intrinsics.dy},   {"x_p0", spec.intrinsics.x_p0},
                     {"y_p0", spec.intrinsics.y_p0}, {"width", spec.intrinsics.width},
                     {"height", spec.intrinsics.height}};
  return j;
}

inline RigSpec load_rig_spec(const std::string& path) {
  return rig_spec_from_json(load_json_file(path));
}

// ---------------------------------------------------------------------------
// radar frames
// ---------------------------------------------------------------------------

inline Json radar_frame_to_json(const RadarFrame& f) {
  Json j;
  j["t"] = f.timestamp;
  Json dets = Json::array();
  for (const RadarDetection& d : f.detections)
    dets.push_back({{"rho", d.rho},
                    {"theta_deg", rad_to_deg(d.theta)},
                    {"phi_deg", rad_to_deg(d.phi)},
                    {"v", d.v}});
  j["detections"] = std::move(dets);
  return j;
}

inline RadarFrame radar_frame_from_json(const Json& j) {
  try {
    RadarFrame f;
    f.timestamp = j.at("t").get<double>();
    for (const Json& d : j.at("detections")) {
      RadarDetection det;
      det.rho = d.at("rho").get<double>();
      det.theta = deg_to_rad(d.at("theta_deg").get<double>());
      det.phi = deg_to_rad(d.at("phi_deg").get<double>());
      det.v = d.at("v").get<double>();
      f.detections.push_back(det);
    }
    return f;
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("radar frame: missing or mistyped field: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// annotations (reference detection-benchmark JSON shape)
// ---------------------------------------------------------------------------

struct AnnotationImage {
  int id = 0;
  std::string file_name;
  int width = 0, height = 0;
};

struct AnnotationRecord {
  int id = 0;
  int image_id = 0;
  double bbox[4] = {0, 0, 0, 0};  // x, y, w, h
  int category_id = 1;
  double area = 0;
};

struct AnnotationSet {
  std::vector<AnnotationImage> images;
  std::vector<AnnotationRecord> annotations;
  std::vector<std::pair<int, std::string>> categories;  // id, name
};

inline Json annotation_set_to_json(const AnnotationSet& s) {
  Json j;
  Json images = Json::array();
  for (const auto& im : s.images)
    images.push_back({{"id", im.id},
                      {"file_name", im.file_name},
                      {"width", im.width},
                      {"height", im.height}});
  Json anns = Json::array();
  for (const auto& a : s.annotations)
    anns.push_back({{"id", a.id},
                    {"image_id", a.image_id},
                    {"bbox", Json::array({a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]})},
                    {"category_id", a.category_id},
                    {"area", a.area}});
  Json cats = Json::array();
  for (const auto& [id, name] : s.categories) cats.push_back({{"id", id}, {"name", name}});
  j["images"] = std::move(images);
  j["annotations"] = std::move(anns);
  j["categories"] = std::move(cats);
  return j;
}

/// Parse and validate: unique ids, resolvable image references, consistent
/// area, nondegenerate boxes. Violations name the offending record.
inline AnnotationSet annotation_set_from_json(const Json& j) {
  AnnotationSet s;
  try {
    std::set<int> image_ids;
    for (const Json& im : j.at("images")) {
      AnnotationImage rec;
      rec.id = im.at("id").get<int>();
      rec.file_name = im.at("file_name").get<std::string>();
      rec.width = im.at("width").get<int>();
      rec.height = im.at("height").get<int>();
      if (!image_ids.insert(rec.id).second)
        throw std::runtime_error("annotations: duplicate image id " + std::to_string(rec.id));
      s.images.push_back(std::move(rec));
    }
    std::set<int> ann_ids;
    for (const Json& a : j.at("annotations")) {
      AnnotationRecord rec;
      rec.id = a.at("id").get<int>();
      rec.image_id = a.at("image_id").get<int>();
      const Json& bbox = a.at("bbox");
      if (!bbox.is_array() || bbox.size() != 4)
        throw std::runtime_error("annotations: record " + std::to_string(rec.id) +
                                 " has malformed bbox");
      for (int i = 0; i < 4; ++i) rec.bbox[i] = bbox[static_cast<std::size_t>(i)].get<double>();
      rec.category_id = a.at("category_id").get<int>();
      rec.area = a.at("area").get<double>();
      if (!ann_ids.insert(rec.id).second)
        throw std::runtime_error("annotations: duplicate annotation id " + std::to_string(rec.id));
      if (!image_ids.count(rec.image_id))
        throw std::runtime_error("annotations: record " + std::to_string(rec.id) +
                                 " references missing image " + std::to_string(rec.image_id));
      if (rec.bbox[2] <= 0 || rec.bbox[3] <= 0)
        throw std::runtime_error("annotations: record " + std::to_string(rec.id) +
                                 " has a zero-area box");
      if (std::abs(rec.area - rec.bbox[2] * rec.bbox[3]) > 1e-6 * std::max(1.0, rec.area))
        throw std::runtime_error("annotations: record " + std::to_string(rec.id) +
                                 " area does not equal bbox w*h");
      s.annotations.push_back(rec);
    }
    for (const Json& c : j.at("categories"))
      s.categories.emplace_back(c.at("id").get<int>(), c.at("name").get<std::string>());
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("annotations: missing or mistyped field: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// detection results (annotation records plus score)
// ---------------------------------------------------------------------------

struct DetRecord {
  int id = 0;
  int image_id = 0;
  double bbox[4] = {0, 0, 0, 0};
  int category_id = 1;
  double area = 0;
  double score = 0;
};

inline Json det_records_to_json(const std::vector<DetRecord>& dets) {
  Json arr = Json::array();
  for (const DetRecord& d : dets)
    arr.push_back({{"id", d.id},
                   {"image_id", d.image_id},
                   {"bbox", Json::array({d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]})},
                   {"category_id", d.category_id},
                   {"area", d.area},
                   {"score", d.score}});
  return arr;
}

inline std::vector<DetRecord> det_records_from_json(const Json& j) {
  std::vector<DetRecord> out;
  const Json& arr = j.is_array() ? j : j.at("detections");
  try {
    for (const Json& d : arr) {
      DetRecord rec;
      rec.id = d.at("id").get<int>();
      rec.image_id = d.at("image_id").get<int>();
      for (int i = 0; i < 4; ++i)
        rec.bbox[i] = d.at("bbox")[static_cast<std::size_t>(i)].get<double>();
      rec.category_id = d.at("category_id").get<int>();
      rec.area = d.at("area").get<double>();
      rec.score = d.at("score").get<double>();
      out.push_back(rec);
    }
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("detections: missing or mistyped field: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// weights container
// ---------------------------------------------------------------------------

constexpr std::uint16_t kWeightsVersion = 1;

struct NamedTensorData {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

namespace detail {

template <typename T>
inline void write_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <typename T>
inline T read_le(const std::string& in, std::size_t& off, const char* what) {
  if (off + sizeof(T) > in.size())
    throw std::runtime_error(std::string("weights: truncated file while reading ") + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  off += sizeof(T);
  return static_cast<T>(v);
}

}  // namespace detail

/// Serialize: "RVPW", version u16, count u32, then per tensor a u16-prefixed
/// UTF-8 name, rank u8, dims u32 each, and a little-endian float32 payload.
inline void save_weights_file(const std::string& path,
                              const std::vector<NamedTensorData>& tensors) {
  std::set<std::string> names;
  for (const auto& t : tensors)
    if (!names.insert(t.name).second)
      throw std::invalid_argument("weights: duplicate tensor name " + t.name);

  std::string buf;
  buf += "RVPW";
  detail::write_le<std::uint16_t>(buf, kWeightsVersion);
  detail::write_le<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw std::invalid_argument("weights: tensor name too long");
    detail::write_le<std::uint16_t>(buf, static_cast<std::uint16_t>(t.name.size()));
    buf += t.name;
    detail::write_le<std::uint8_t>(buf, static_cast<std::uint8_t>(t.dims.size()));
    std::size_t n = 1;
    for (std::uint32_t d : t.dims) {
      detail::write_le<std::uint32_t>(buf, d);
      n *= d;
    }
    if (n != t.data.size())
      throw std::invalid_argument("weights: payload length mismatch for " + t.name);
    for (float f : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::write_le<std::uint32_t>(buf, bits);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

inline std::vector<NamedTensorData> load_weights_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  std::size_t off = 0;
  if (buf.size() < 4 || buf.compare(0, 4, "RVPW") != 0)
    throw std::runtime_error("weights: not a weights file (bad magic) in " + path);
  off = 4;
  const auto version = detail::read_le<std::uint16_t>(buf, off, "version");
  if (version != kWeightsVersion)
    throw std::runtime_error("weights: unsupported version " + std::to_string(version) +
                             " (expected " + std::to_string(kWeightsVersion) + ") in " + path);
  const auto count = detail::read_le<std::uint32_t>(buf, off, "tensor count");

  std::vector<NamedTensorData> tensors;
  std::set<std::string> names;
  for (std::uint32_t ti = 0; ti < count; ++ti) {
    NamedTensorData t;
    const auto name_len = detail::read_le<std::uint16_t>(buf, off, "name length");
    if (off + name_len > buf.size())
      throw std::runtime_error("weights: truncated file while reading name");
    t.name = buf.substr(off, name_len);
    off += name_len;
    if (!names.insert(t.name).second)
      throw std::runtime_error("weights: duplicate tensor name " + t.name + " in " + path);
    const auto rank = detail::read_le<std::uint8_t>(buf, off, "rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.dims.push_back(detail::read_le<std::uint32_t>(buf, off, "dims"));
      n *= t.dims.back();
    }
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto bits = detail::read_le<std::uint32_t>(buf, off, "payload");
      std::memcpy(&t.data[i], &bits, 4);
    }
    tensors.push_back(std::move(t));
  }
  if (off != buf.size())
    throw std::runtime_error("weights: trailing bytes after last tensor in " + path);
  return tensors;
}

// ---------------------------------------------------------------------------
// model <-> weights
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<float> scalars(std::initializer_list<double> vs) {
  std::vector<float> out;
  for (double v : vs) out.push_back(static_cast<float>(v));
  return out;
}

}  // namespace detail

/// Model parameters plus `meta.*` tensors carrying the architecture, so a
/// weights file alone reconstructs the network.
template <typename S>
inline void save_model_weights(ModelT<S>& model, const std::string& path) {
  std::vector<NamedTensorData> tensors;
  const ModelConfig& c = model.cfg;
  tensors.push_back({"meta.input_size", {1}, detail::scalars({double(c.input_size)})});
  tensors.push_back({"meta.width_mult", {1}, detail::scalars({c.width_mult})});
  tensors.push_back({"meta.fusion", {1}, detail::scalars({double(static_cast<int>(c.fusion))})});
  {
    NamedTensorData t{"meta.sac_kernels", {static_cast<std::uint32_t>(c.sac_kernels.size())}, {}};
    for (int k : c.sac_kernels) t.data.push_back(static_cast<float>(k));
    tensors.push_back(std::move(t));
  }
  tensors.push_back({"meta.head_tower_depth", {1}, detail::scalars({double(c.head_tower_depth)})});
  tensors.push_back({"meta.num_classes", {1}, detail::scalars({double(c.num_classes)})});
  tensors.push_back({"meta.stage_blocks",
                     {3},
                     detail::scalars({double(c.stage_blocks[0]), double(c.stage_blocks[1]),
                                      double(c.stage_blocks[2])})});
  tensors.push_back({"meta.bottleneck", {1}, detail::scalars({c.bottleneck ? 1.0 : 0.0})});

  for (const auto& [name, tensor] : model.named_parameters()) {
    NamedTensorData t;
    t.name = name;
    for (int d : tensor.shape()) t.dims.push_back(static_cast<std::uint32_t>(d));
    t.data.reserve(tensor.numel());
    for (S v : tensor.value()) t.data.push_back(static_cast<float>(v));
    tensors.push_back(std::move(t));
  }
  save_weights_file(path, tensors);
}

template <typename S>
inline ModelT<S> load_model_weights(const std::string& path) {
  std::vector<NamedTensorData> tensors = load_weights_file(path);
  std::map<std::string, const NamedTensorData*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;

  auto meta_scalar = [&](const std::string& name) -> double {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->data.size() != 1)
      throw std::runtime_error("weights: missing metadata tensor " + name + " in " + path);
    return static_cast<double>(it->second->data[0]);
  };

  ModelConfig cfg;
  cfg.input_size = static_cast<int>(meta_scalar("meta.input_size"));
  cfg.width_mult = meta_scalar("meta.width_mult");
  cfg.fusion = static_cast<FusionMode>(static_cast<int>(meta_scalar("meta.fusion")));
  {
    auto it = by_name.find("meta.sac_kernels");
    if (it == by_name.end())
      throw std::runtime_error("weights: missing metadata tensor meta.sac_kernels in " + path);
    cfg.sac_kernels.clear();
    for (float v : it->second->data) cfg.sac_kernels.push_back(static_cast<int>(v));
  }
  cfg.head_tower_depth = static_cast<int>(meta_scalar("meta.head_tower_depth"));
  cfg.num_classes = static_cast<int>(meta_scalar("meta.num_classes"));
  {
    auto it = by_name.find("meta.stage_blocks");
    if (it == by_name.end() || it->second->data.size() != 3)
      throw std::runtime_error("weights: missing metadata tensor meta.stage_blocks in " + path);
    cfg.stage_blocks.clear();
    for (float v : it->second->data) cfg.stage_blocks.push_back(static_cast<int>(v));
  }
  cfg.bottleneck = meta_scalar("meta.bottleneck") != 0.0;

  Rng rng(0);
  ModelT<S> model(cfg, rng);

  std::set<std::string> consumed;
  for (const auto& t : tensors)
    if (t.name.rfind("meta.", 0) == 0) consumed.insert(t.name);
  auto named = model.named_parameters();  // tensors alias the model's storage
  for (auto& [name, tensor] : named) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("weights: missing tensor " + name + " in " + path);
    const NamedTensorData& t = *it->second;
    std::vector<int> dims;
    for (std::uint32_t d : t.dims) dims.push_back(static_cast<int>(d));
    if (dims != tensor.shape())
      throw std::runtime_error("weights: tensor " + name + " has shape " + shape_str(dims) +
                               ", model expects " + shape_str(tensor.shape()));
    auto& dst = tensor.raw_value();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(t.data[i]);
    consumed.insert(name);
  }
  for (const auto& t : tensors)
    if (!consumed.count(t.name))
      throw std::runtime_error("weights: unknown tensor " + t.name + " in " + path);
  return model;
}

}  // namespace rvf
