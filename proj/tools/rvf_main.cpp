// Command-line surface for the radar-vision fusion detection toolkit.
//
// Exit codes: 0 success, 1 usage error, 2 data/configuration error,
// 3 numerical failure (training divergence or a failed gradient check).

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rvf/dataset.hpp"
#include "rvf/eval.hpp"
#include "rvf/gradcheck_suite.hpp"
#include "rvf/model.hpp"
#include "rvf/serialize.hpp"
#include "rvf/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

/// Worker cap from the environment (default 1).
int rvf_threads() {
  const char* env = std::getenv("RVF_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

rvf::TrainConfig train_config_from_json(const rvf::Json& j) {
  rvf::TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.iterations = j.value("iterations", c.iterations);
  c.batch_pairs = j.value("batch_pairs", c.batch_pairs);
  c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
  c.focal_alpha = j.value("focal_alpha", c.focal_alpha);
  c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
  c.use_centerness = j.value("use_centerness", c.use_centerness);
  c.seed = j.value("seed", c.seed);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  return c;
}

/// Model architecture from the optional "model" object of train.json.
/// input_size falls back to the dataset's image size when absent.
rvf::ModelConfig model_config_from_json(const rvf::Json& j, int dataset_image_size) {
  rvf::ModelConfig c;
  c.input_size = dataset_image_size;
  if (j.contains("model")) {
    const rvf::Json& m = j.at("model");
    c.input_size = m.value("input_size", c.input_size);
    c.width_mult = m.value("width_mult", c.width_mult);
    c.head_tower_depth = m.value("head_tower_depth", c.head_tower_depth);
    c.num_classes = m.value("num_classes", c.num_classes);
    c.bottleneck = m.value("bottleneck", c.bottleneck);
    if (m.contains("stage_blocks")) c.stage_blocks = m.at("stage_blocks").get<std::vector<int>>();
    if (m.contains("fusion")) c.fusion = rvf::parse_fusion_mode(m.at("fusion").get<std::string>());
    if (m.contains("sac_kernels")) c.sac_kernels = m.at("sac_kernels").get<std::vector<int>>();
  }
  return c;
}

std::vector<rvf::TrainSample> to_train_samples(const rvf::LoadedDataset& ds) {
  std::vector<rvf::TrainSample> out;
  out.reserve(ds.samples.size());
  for (const rvf::LoadedSample& s : ds.samples) {
    rvf::TrainSample t;
    t.vision = rvf::image_to_tensor(s.vision);
    t.radar = rvf::image_to_tensor(s.radar);
    t.gts = s.gts;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<int> parse_kernel_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  if (out.empty()) throw std::invalid_argument("--sac-kernels: empty kernel list");
  return out;
}

rvf::MetricReport evaluate_model(rvf::Model& model, const std::vector<rvf::TrainSample>& samples,
                                 double score_thresh, double nms_iou, int max_dets,
                                 bool zero_radar = false) {
  std::vector<rvf::ImageEval> images;
  rvf::NoGradGuard ng;
  for (const auto& s : samples) {
    rvf::HeadOut head = model.forward(s.vision, s.radar, zero_radar);
    rvf::ImageEval ie;
    ie.dets = rvf::decode_detections(head, model.cfg, score_thresh, nms_iou, max_dets);
    ie.gts = s.gts;
    images.push_back(std::move(ie));
  }
  return rvf::compute_metrics(images, max_dets);
}

rvf::Json metric_report_to_json(const rvf::MetricReport& r) {
  rvf::Json j;
  j["ap"] = r.ap;
  j["ap50"] = r.ap50;
  j["ap75"] = r.ap75;
  j["ap_small"] = r.ap_small;
  j["ap_medium"] = r.ap_medium;
  j["ap_large"] = r.ap_large;
  j["ar1"] = r.ar1;
  j["ar10"] = r.ar10;
  j["ar100"] = r.ar100;
  j["ar_small"] = r.ar_small;
  j["ar_medium"] = r.ar_medium;
  j["ar_large"] = r.ar_large;
  return j;
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

int cmd_simulate(const std::string& config_path, int frames, const std::string& out_dir,
                 std::int64_t seed_flag) {
  rvf::SimConfig cfg = config_path.empty()
                           ? rvf::default_sim_config()
                           : rvf::sim_config_from_json(rvf::load_json_file(config_path));
  if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
  const rvf::DatasetManifest m = rvf::emit_dataset(cfg, frames, out_dir, rvf_threads());
  std::printf("wrote %d frames to %s (train %d, val %d, test %d), seed %llu\n", m.n_frames,
              out_dir.c_str(), m.counts[0], m.counts[1], m.counts[2],
              static_cast<unsigned long long>(m.seed));
  return kExitOk;
}

int cmd_encode_radar(const std::string& in_path, const std::string& rig_path,
                     const std::string& out_path, int splat) {
  const rvf::RadarFrame frame = rvf::radar_frame_from_json(rvf::load_json_file(in_path));
  const rvf::RigSpec spec = rvf::load_rig_spec(rig_path);
  const rvf::SensorRig rig = rvf::build_rig(spec);
  rvf::RenderStats stats;
  const rvf::Image8 img = rvf::render_radar_frame(frame, rig, spec.intrinsics.width,
                                                  spec.intrinsics.height, splat, &stats);
  rvf::write_png(out_path, img);
  std::printf("encoded %zu detections: %d drawn, %d off-frame -> %s\n", frame.detections.size(),
              stats.drawn, stats.dropped, out_path.c_str());
  return kExitOk;
}

int cmd_project(const std::string& rig_path, double rho, double theta_deg, double phi_deg) {
  const rvf::SensorRig rig = rvf::build_rig(rvf::load_rig_spec(rig_path));
  rvf::RadarDetection det;
  det.rho = rho;
  det.theta = rvf::deg_to_rad(theta_deg);
  det.phi = rvf::deg_to_rad(phi_deg);
  const rvf::ProjectionResult res = rvf::project_radar_to_pixel(det, rig);
  if (res.z_c <= 0) {
    std::fprintf(stderr, "point is behind the camera (depth %.6f m)\n", res.z_c);
    return kExitData;
  }
  std::printf("pixel = (%.6f, %.6f), depth = %.6f m, %s\n", res.x_p, res.y_p, res.z_c,
              res.in_frame ? "in frame" : "out of frame");
  return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& fusion_flag, const std::string& sac_kernels_flag,
              const std::string& out_path, const std::string& loss_csv_flag) {
  const rvf::Json tj = config_path.empty() ? rvf::Json::object()
                                           : rvf::load_json_file(config_path);
  const rvf::TrainConfig tcfg = train_config_from_json(tj);

  const rvf::LoadedDataset ds = rvf::load_dataset(data_dir, "train");
  if (ds.samples.empty()) throw std::runtime_error("train: empty train split in " + data_dir);

  rvf::ModelConfig mcfg = model_config_from_json(tj, ds.image_size);
  if (!fusion_flag.empty()) mcfg.fusion = rvf::parse_fusion_mode(fusion_flag);
  if (!sac_kernels_flag.empty()) mcfg.sac_kernels = parse_kernel_list(sac_kernels_flag);
  mcfg.validate();
  if (mcfg.input_size != ds.image_size)
    throw std::runtime_error("train: model input_size " + std::to_string(mcfg.input_size) +
                             " does not match dataset image size " +
                             std::to_string(ds.image_size));

  const std::vector<rvf::TrainSample> samples = to_train_samples(ds);
  rvf::Rng init_rng(tcfg.seed);
  rvf::Model model(mcfg, init_rng);
  std::printf("training %s fusion, %zu samples, %zu parameters, %d iterations\n",
              rvf::fusion_mode_name(mcfg.fusion), samples.size(), model.count_parameters(""),
              tcfg.iterations);

  const std::string csv_path = loss_csv_flag.empty() ? out_path + ".loss.csv" : loss_csv_flag;
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("train: cannot write " + csv_path);
  csv << rvf::loss_csv_header() << "\n";
  int printed = 0;
  auto row_hook = [&](const rvf::LossRow& r) {
    csv << r.iteration << "," << r.total << "," << r.cls << "," << r.reg << "," << r.centerness
        << "\n";
    const int stride = std::max(1, tcfg.iterations / 10);
    if (r.iteration == 1 || r.iteration % stride == 0 || r.iteration == tcfg.iterations) {
      std::printf("iter %6d  total %.6f  cls %.6f  reg %.6f  ctr %.6f\n", r.iteration, r.total,
                  r.cls, r.reg, r.centerness);
      ++printed;
    }
  };

  try {
    rvf::train(model, samples, tcfg, nullptr, row_hook);
  } catch (const std::runtime_error& e) {
    throw NumericalFailure(e.what());
  }
  rvf::save_model_weights(model, out_path);
  std::printf("saved weights to %s, loss curve to %s\n", out_path.c_str(), csv_path.c_str());
  return kExitOk;
}

int cmd_infer(const std::string& weights_path, const std::string& data_dir,
              const std::string& split, const std::string& out_path, double score_thresh,
              double nms_iou, int max_dets) {
  rvf::Model model = rvf::load_model_weights<double>(weights_path);
  const rvf::LoadedDataset ds = rvf::load_dataset(data_dir, split);

  std::vector<rvf::DetRecord> records;
  int next_id = 1;
  rvf::NoGradGuard ng;
  for (const rvf::LoadedSample& s : ds.samples) {
    rvf::Image8 vision = s.vision, radar = s.radar;
    double scale = 1.0;
    if (vision.width != model.cfg.input_size) {
      scale = static_cast<double>(vision.width) / model.cfg.input_size;
      vision = rvf::resize_nearest(vision, model.cfg.input_size, model.cfg.input_size);
      radar = rvf::resize_nearest(radar, model.cfg.input_size, model.cfg.input_size);
    }
    rvf::HeadOut head = model.forward(rvf::image_to_tensor(vision), rvf::image_to_tensor(radar));
    for (const rvf::DetectionBox& d :
         rvf::decode_detections(head, model.cfg, score_thresh, nms_iou, max_dets)) {
      rvf::DetRecord rec;
      rec.id = next_id++;
      rec.image_id = s.image_id;
      rec.bbox[0] = d.x1 * scale;
      rec.bbox[1] = d.y1 * scale;
      rec.bbox[2] = (d.x2 - d.x1) * scale;
      rec.bbox[3] = (d.y2 - d.y1) * scale;
      rec.category_id = d.class_id + 1;
      rec.area = rec.bbox[2] * rec.bbox[3];
      rec.score = d.score;
      records.push_back(rec);
    }
  }
  rvf::save_json_file(out_path, rvf::det_records_to_json(records));
  std::printf("wrote %zu detections over %zu frames to %s\n", records.size(), ds.samples.size(),
              out_path.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& dets_path, const std::string& ann_path) {
  const rvf::AnnotationSet ann = rvf::annotation_set_from_json(rvf::load_json_file(ann_path));
  const std::vector<rvf::DetRecord> dets = rvf::det_records_from_json(rvf::load_json_file(dets_path));

  std::map<int, rvf::ImageEval> by_image;
  for (const rvf::AnnotationImage& im : ann.images) by_image[im.id];
  for (const rvf::AnnotationRecord& a : ann.annotations) {
    rvf::GtBox g;
    g.x1 = a.bbox[0];
    g.y1 = a.bbox[1];
    g.x2 = a.bbox[0] + a.bbox[2];
    g.y2 = a.bbox[1] + a.bbox[3];
    g.class_id = a.category_id - 1;
    by_image[a.image_id].gts.push_back(g);
  }
  for (const rvf::DetRecord& d : dets) {
    auto it = by_image.find(d.image_id);
    if (it == by_image.end())
      throw std::runtime_error("eval: detection " + std::to_string(d.id) +
                               " references unknown image " + std::to_string(d.image_id));
    rvf::DetectionBox b;
    b.x1 = d.bbox[0];
    b.y1 = d.bbox[1];
    b.x2 = d.bbox[0] + d.bbox[2];
    b.y2 = d.bbox[1] + d.bbox[3];
    b.score = d.score;
    b.class_id = d.category_id - 1;
    it->second.dets.push_back(b);
  }

  std::vector<rvf::ImageEval> images;
  images.reserve(by_image.size());
  for (auto& [id, ie] : by_image) images.push_back(std::move(ie));
  const rvf::MetricReport report = rvf::compute_metrics(images);
  std::fputs(rvf::format_metric_table(report).c_str(), stdout);
  std::printf("%s\n", metric_report_to_json(report).dump().c_str());
  return kExitOk;
}

int cmd_gradcheck(bool full) {
  bool all_pass = true;
  for (const rvf::SuiteCheck& c : rvf::run_op_gradchecks()) {
    std::printf("%-22s max rel err %.3e (tol %.0e, %zu coords) %s\n", c.name.c_str(),
                c.max_rel_err, c.tol, c.coords, c.pass ? "ok" : "FAIL");
    all_pass = all_pass && c.pass;
  }
  const int probes = full ? 20 : 5;
  const int input_size = full ? 128 : 64;
  const rvf::SuiteCheck m = rvf::run_model_gradcheck(probes, input_size);
  std::printf("%-22s max rel err %.3e (tol %.0e, %zu probes) %s\n", m.name.c_str(), m.max_rel_err,
              m.tol, m.coords, m.pass ? "ok" : "FAIL");
  all_pass = all_pass && m.pass;
  if (!all_pass) {
    std::fprintf(stderr, "gradient checks failed\n");
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_ablate_fusion(const std::string& data_dir, const std::string& config_path,
                      const std::string& split) {
  const rvf::Json tj = config_path.empty() ? rvf::Json::object()
                                           : rvf::load_json_file(config_path);
  const rvf::TrainConfig tcfg = train_config_from_json(tj);

  const rvf::LoadedDataset train_ds = rvf::load_dataset(data_dir, "train");
  if (train_ds.samples.empty())
    throw std::runtime_error("ablate-fusion: empty train split in " + data_dir);
  const rvf::LoadedDataset eval_ds = rvf::load_dataset(data_dir, split);
  const std::vector<rvf::TrainSample> train_samples = to_train_samples(train_ds);
  const std::vector<rvf::TrainSample> eval_samples = to_train_samples(eval_ds);

  struct Row {
    std::string name;
    double final_loss = 0;
    rvf::MetricReport report;
  };
  std::vector<Row> rows;
  rvf::Model* sac_model = nullptr;
  std::vector<std::unique_ptr<rvf::Model>> keep;

  const rvf::FusionMode modes[4] = {rvf::FusionMode::kAdd, rvf::FusionMode::kMul,
                                    rvf::FusionMode::kCat, rvf::FusionMode::kSac};
  for (const rvf::FusionMode mode : modes) {
    rvf::ModelConfig mcfg = model_config_from_json(tj, train_ds.image_size);
    mcfg.fusion = mode;
    mcfg.validate();
    if (mcfg.input_size != train_ds.image_size)
      throw std::runtime_error("ablate-fusion: model input_size does not match dataset");

    rvf::Rng init_rng(tcfg.seed);  // one seed shared by all four trainings
    auto model = std::make_unique<rvf::Model>(mcfg, init_rng);
    std::printf("training fusion mode %s...\n", rvf::fusion_mode_name(mode));
    std::vector<rvf::LossRow> curve;
    try {
      curve = rvf::train(*model, train_samples, tcfg);
    } catch (const std::runtime_error& e) {
      throw NumericalFailure(e.what());
    }
    if (curve.empty() || !std::isfinite(curve.back().total))
      throw NumericalFailure(std::string("ablate-fusion: non-finite final loss for ") +
                             rvf::fusion_mode_name(mode));

    Row row;
    row.name = rvf::fusion_mode_name(mode);
    row.final_loss = curve.back().total;
    row.report = evaluate_model(*model, eval_samples, 0.05, 0.6, 100);
    rows.push_back(row);
    if (mode == rvf::FusionMode::kSac) {
      sac_model = model.get();
      keep.push_back(std::move(model));
    }
  }

  std::printf("\nfusion comparison on split '%s' (%d iterations each)\n", split.c_str(),
              tcfg.iterations);
  std::printf("%-10s %8s %8s %8s %8s %12s\n", "fusion", "AP", "AP50", "AP75", "AR100",
              "final loss");
  for (const Row& r : rows)
    std::printf("%-10s %8.1f %8.1f %8.1f %8.1f %12.6f\n", r.name.c_str(), r.report.ap,
                r.report.ap50, r.report.ap75, r.report.ar100, r.final_loss);

  // Radar ablation: run the trained SAC model with the radar branch zeroed.
  // The delta is informational; liveliness means the branch changes outputs.
  if (sac_model) {
    const rvf::MetricReport off = evaluate_model(*sac_model, eval_samples, 0.05, 0.6, 100, true);
    std::printf("%-10s %8.1f %8.1f %8.1f %8.1f %12s\n", "sac-noradr", off.ap, off.ap50, off.ap75,
                off.ar100, "-");
    std::printf("radar ablation delta (sac AP50 with radar - without): %.1f\n",
                rows.back().report.ap50 - off.ap50);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radar-vision fusion object detection toolkit"};
  app.require_subcommand(1);

  // simulate
  std::string sim_config, sim_out;
  int sim_frames = 0;
  std::int64_t sim_seed = -1;
  CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic paired dataset");
  simulate->add_option("--config", sim_config, "simulation config JSON");
  simulate->add_option("--frames", sim_frames, "number of frames (>= 10)")->required();
  simulate->add_option("--out", sim_out, "output dataset directory")->required();
  simulate->add_option("--seed", sim_seed, "override the config seed");

  // encode-radar
  std::string enc_in, enc_rig, enc_out;
  int enc_splat = 2;
  CLI::App* encode = app.add_subcommand("encode-radar", "render a radar frame JSON to a PNG");
  encode->add_option("--in", enc_in, "radar frame JSON")->required();
  encode->add_option("--rig", enc_rig, "rig JSON")->required();
  encode->add_option("--out", enc_out, "output PNG")->required();
  encode->add_option("--splat", enc_splat, "splat radius in pixels");

  // project
  std::string proj_rig;
  double proj_rho = 0, proj_theta = 0, proj_phi = 0;
  CLI::App* project = app.add_subcommand("project", "project one polar radar point to pixels");
  project->add_option("--rig", proj_rig, "rig JSON")->required();
  project->add_option("--rho", proj_rho, "range in meters")->required();
  project->add_option("--theta-deg", proj_theta, "azimuth in degrees")->required();
  project->add_option("--phi-deg", proj_phi, "elevation in degrees")->required();

  // train
  std::string tr_data, tr_config, tr_fusion, tr_kernels, tr_out, tr_csv;
  CLI::App* train = app.add_subcommand("train", "train the fusion detector");
  train->add_option("--data", tr_data, "dataset directory")->required();
  train->add_option("--config", tr_config, "training config JSON");
  train->add_option("--fusion", tr_fusion, "fusion mode: add|mul|cat|sac");
  train->add_option("--sac-kernels", tr_kernels, "comma-separated attention kernel sizes");
  train->add_option("--out", tr_out, "output weights file")->required();
  train->add_option("--loss-csv", tr_csv, "loss curve CSV path (default <out>.loss.csv)");

  // infer
  std::string in_weights, in_data, in_split = "test", in_out;
  double in_score = 0.05, in_nms = 0.6;
  int in_max = 100;
  CLI::App* infer = app.add_subcommand("infer", "run detection over a dataset split");
  infer->add_option("--weights", in_weights, "weights file")->required();
  infer->add_option("--data", in_data, "dataset directory")->required();
  infer->add_option("--split", in_split, "split name (train|val|test)");
  infer->add_option("--out", in_out, "output detections JSON")->required();
  infer->add_option("--score-thresh", in_score, "detection score threshold");
  infer->add_option("--nms-iou", in_nms, "NMS IoU threshold");
  infer->add_option("--max-dets", in_max, "max detections per image");

  // eval
  std::string ev_dets, ev_ann;
  CLI::App* evalc = app.add_subcommand("eval", "score detections against annotations");
  evalc->add_option("--dets", ev_dets, "detections JSON")->required();
  evalc->add_option("--ann", ev_ann, "annotations JSON")->required();

  // gradcheck
  bool gc_full = false;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "run the gradient verification suites");
  gradcheck->add_flag("--full", gc_full, "run the full (20-probe) network check");

  // ablate-fusion
  std::string ab_data, ab_config, ab_split = "val";
  CLI::App* ablate = app.add_subcommand(
      "ablate-fusion", "train all four fusion modes with one seed and compare");
  ablate->add_option("--data", ab_data, "dataset directory")->required();
  ablate->add_option("--config", ab_config, "training config JSON");
  ablate->add_option("--split", ab_split, "evaluation split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim_config, sim_frames, sim_out, sim_seed);
    if (encode->parsed()) return cmd_encode_radar(enc_in, enc_rig, enc_out, enc_splat);
    if (project->parsed()) return cmd_project(proj_rig, proj_rho, proj_theta, proj_phi);
    if (train->parsed()) return cmd_train(tr_data, tr_config, tr_fusion, tr_kernels, tr_out, tr_csv);
    if (infer->parsed())
      return cmd_infer(in_weights, in_data, in_split, in_out, in_score, in_nms, in_max);
    if (evalc->parsed()) return cmd_eval(ev_dets, ev_ann);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_full);
    if (ablate->parsed()) return cmd_ablate_fusion(ab_data, ab_config, ab_split);
  } catch (const NumericalFailure& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
