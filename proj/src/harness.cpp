#include "evpose/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "evpose/event_io.hpp"
#include "evpose/frame_io.hpp"
#include "evpose/keypoints.hpp"
#include "evpose/nn_io.hpp"
#include "evpose/pnp.hpp"
#include "evpose/rng.hpp"

namespace evpose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

json parse_json_file(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what(), e.byte);
  }
}

// Strict config field access: wrong types and unknown keys are refused so a
// typo never silently falls back to a default.

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) known = true;
    if (!known) throw ConfigError("unknown key \"" + item.key() + "\" in " + where);
  }
}

double num_field(const json& j, const char* key, double def, const std::string& where) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
  return v.get<double>();
}

int int_field(const json& j, const char* key, int def, const std::string& where) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(where + "." + key + " must be an integer");
  return v.get<int>();
}

bool bool_field(const json& j, const char* key, bool def, const std::string& where) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(where + "." + key + " must be a boolean");
  return v.get<bool>();
}

std::string str_field(const json& j, const char* key, const std::string& def,
                      const std::string& where) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + " must be a string");
  return v.get<std::string>();
}

void pair_field(const json& j, const char* key, double& lo, double& hi,
                const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError(where + "." + key + " must be [min, max]");
  lo = v[0].get<double>();
  hi = v[1].get<double>();
}

SceneConfig scene_from_json(const json& j) {
  check_keys(j,
             {"camera", "cuboid", "trajectories", "duration_s", "substep_s", "contrast_rate",
              "delta_t_us", "distance_m", "tilt_deg", "spin_deg_s", "drift_m_s", "roi_margin"},
             "scene");
  SceneConfig sc;
  if (j.contains("camera")) {
    const json& c = j.at("camera");
    check_keys(c, {"width", "height", "fx", "fy", "cx", "cy"}, "scene.camera");
    sc.camera.width = int_field(c, "width", sc.camera.width, "scene.camera");
    sc.camera.height = int_field(c, "height", sc.camera.height, "scene.camera");
    sc.camera.fx = num_field(c, "fx", sc.camera.fx, "scene.camera");
    sc.camera.fy = num_field(c, "fy", sc.camera.fy, "scene.camera");
    sc.camera.cx = num_field(c, "cx", sc.camera.cx, "scene.camera");
    sc.camera.cy = num_field(c, "cy", sc.camera.cy, "scene.camera");
  }
  if (j.contains("cuboid")) {
    const json& c = j.at("cuboid");
    if (!c.is_array() || c.size() != 3) throw ConfigError("scene.cuboid must be [x, y, z]");
    for (int i = 0; i < 3; ++i) {
      if (!c[i].is_number()) throw ConfigError("scene.cuboid must hold numbers");
      sc.cuboid[i] = c[i].get<double>();
    }
  }
  sc.trajectories = int_field(j, "trajectories", sc.trajectories, "scene");
  sc.duration_s = num_field(j, "duration_s", sc.duration_s, "scene");
  sc.substep_s = num_field(j, "substep_s", sc.substep_s, "scene");
  sc.contrast_rate = int_field(j, "contrast_rate", sc.contrast_rate, "scene");
  const double dt = num_field(j, "delta_t_us", static_cast<double>(sc.delta_t_us), "scene");
  if (dt < 1 || dt != std::floor(dt)) throw ConfigError("scene.delta_t_us must be a positive integer");
  sc.delta_t_us = static_cast<std::uint64_t>(dt);
  pair_field(j, "distance_m", sc.distance_min_m, sc.distance_max_m, "scene");
  sc.tilt_deg = num_field(j, "tilt_deg", sc.tilt_deg, "scene");
  pair_field(j, "spin_deg_s", sc.spin_min_deg_s, sc.spin_max_deg_s, "scene");
  sc.drift_m_s = num_field(j, "drift_m_s", sc.drift_m_s, "scene");
  sc.roi_margin = num_field(j, "roi_margin", sc.roi_margin, "scene");
  return sc;
}

void validate_config(const ExperimentConfig& cfg) {
  const SceneConfig& sc = cfg.scene;
  if (sc.camera.width <= 0 || sc.camera.height <= 0) throw ConfigError("camera size must be positive");
  if (sc.camera.fx <= 0 || sc.camera.fy <= 0) throw ConfigError("focal lengths must be positive");
  if (sc.cuboid.minCoeff() <= 0) throw ConfigError("cuboid edges must be positive");
  if (sc.trajectories < 3) throw ConfigError("need at least 3 trajectories to split");
  if (sc.duration_s <= 0) throw ConfigError("scene.duration_s must be positive");
  if (sc.substep_s <= 0 || sc.substep_s > sc.duration_s)
    throw ConfigError("scene.substep_s must lie in (0, duration]");
  if (sc.contrast_rate < 1) throw ConfigError("scene.contrast_rate must be at least 1");
  if (sc.distance_min_m <= 0 || sc.distance_max_m < sc.distance_min_m)
    throw ConfigError("scene.distance_m must satisfy 0 < min <= max");
  if (sc.tilt_deg < 0 || sc.tilt_deg > 90) throw ConfigError("scene.tilt_deg must lie in [0, 90]");
  if (sc.spin_min_deg_s < 0 || sc.spin_max_deg_s < sc.spin_min_deg_s)
    throw ConfigError("scene.spin_deg_s must satisfy 0 <= min <= max");
  if (sc.drift_m_s < 0) throw ConfigError("scene.drift_m_s must be non-negative");
  if (sc.roi_margin < 0) throw ConfigError("scene.roi_margin must be non-negative");

  if (cfg.roi_size < 16 || cfg.roi_size % 16 != 0)
    throw ConfigError("roi_size must be a positive multiple of 16");
  if (cfg.heatmap_size != cfg.roi_size / 4)
    throw ConfigError("heatmap_size must equal roi_size / 4");
  if (cfg.sigma_cells <= 0) throw ConfigError("sigma_cells must be positive");
  if (cfg.top_k < 4 || cfg.top_k > TargetModel::kNumKeypoints)
    throw ConfigError("top_k must lie in [4, 8]");
  const double sum = cfg.split_train + cfg.split_val + cfg.split_test;
  if (cfg.split_train <= 0 || cfg.split_val <= 0 || cfg.split_test <= 0 ||
      std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split fractions must be positive and sum to 1");

  const TrainConfig& t = cfg.train;
  if (t.float_epochs < 1) throw ConfigError("train.float_epochs must be at least 1");
  if (t.qat_epochs < 1) throw ConfigError("train.qat_epochs must be at least 1");
  if (t.lr <= 0) throw ConfigError("train.lr must be positive");
  if (t.momentum < 0 || t.momentum >= 1) throw ConfigError("train.momentum must lie in [0, 1)");
  if (t.batch < 1) throw ConfigError("train.batch must be at least 1");
  if (t.calibration_batches < 1) throw ConfigError("train.calibration_batches must be at least 1");

  if (cfg.eval.oracle_sigma_px < 0) throw ConfigError("eval.oracle_sigma_px must be non-negative");
  if (cfg.eval.pck_fraction <= 0) throw ConfigError("eval.pck_fraction must be positive");
}

json scene_to_json(const SceneConfig& sc) {
  json j;
  j["camera"] = {{"width", sc.camera.width}, {"height", sc.camera.height},
                 {"fx", sc.camera.fx},       {"fy", sc.camera.fy},
                 {"cx", sc.camera.cx},       {"cy", sc.camera.cy}};
  j["cuboid"] = {sc.cuboid.x(), sc.cuboid.y(), sc.cuboid.z()};
  j["trajectories"] = sc.trajectories;
  j["duration_s"] = sc.duration_s;
  j["substep_s"] = sc.substep_s;
  j["contrast_rate"] = sc.contrast_rate;
  j["delta_t_us"] = sc.delta_t_us;
  j["distance_m"] = {sc.distance_min_m, sc.distance_max_m};
  j["tilt_deg"] = sc.tilt_deg;
  j["spin_deg_s"] = {sc.spin_min_deg_s, sc.spin_max_deg_s};
  j["drift_m_s"] = sc.drift_m_s;
  j["roi_margin"] = sc.roi_margin;
  return j;
}

std::string scene_key_hex(const ExperimentConfig& cfg) {
  json j;
  j["scene"] = scene_to_json(cfg.scene);
  j["seed"] = cfg.seed;
  j["split"] = {cfg.split_train, cfg.split_val, cfg.split_test};
  return hex16(fnv1a64(j.dump()));
}

std::string frames_key_hex(const ExperimentConfig& cfg) {
  json j;
  j["scene_key"] = scene_key_hex(cfg);
  j["repr"] = to_string(cfg.repr);
  j["roi_size"] = cfg.roi_size;
  return hex16(fnv1a64(j.dump()));
}

json train_to_json(const TrainConfig& t) {
  return json{{"float_epochs", t.float_epochs},
              {"qat_epochs", t.qat_epochs},
              {"lr", t.lr},
              {"momentum", t.momentum},
              {"batch", t.batch},
              {"calibration_batches", t.calibration_batches},
              {"first_layer_8bit", t.first_layer_8bit}};
}

std::string weights_key_hex(const ExperimentConfig& cfg, Regime regime) {
  json j;
  j["scene_key"] = scene_key_hex(cfg);
  j["repr"] = to_string(cfg.repr);
  j["head"] = to_string(cfg.head);
  j["regime"] = to_string(regime);
  j["roi_size"] = cfg.roi_size;
  j["heatmap_size"] = cfg.heatmap_size;
  j["sigma_cells"] = cfg.sigma_cells;
  j["train"] = train_to_json(cfg.train);
  return hex16(fnv1a64(j.dump()));
}

std::string weights_name(const ExperimentConfig& cfg, Regime regime) {
  std::string s = to_string(cfg.head);
  s += "_";
  s += to_string(regime);
  s += "_";
  s += to_string(cfg.repr);
  return s;
}

std::string run_label(const ExperimentConfig& cfg) {
  std::string s = weights_name(cfg, cfg.regime) + "_k" + std::to_string(cfg.top_k);
  if (cfg.eval.oracle) s += "_oracle";
  return s;
}

bool key_matches(const std::string& artifact, const std::string& key) {
  const std::string key_path = artifact + ".key";
  if (!fs::exists(artifact) || !fs::exists(key_path)) return false;
  std::string stored = read_text(key_path);
  while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r')) stored.pop_back();
  return stored == key;
}

Eigen::Vector3d unit_vector(Rng& rng) {
  while (true) {
    Eigen::Vector3d v(rng.gaussian(), rng.gaussian(), rng.gaussian());
    const double n = v.norm();
    if (n > 1e-6) return v / n;
  }
}

// Spin and drift are centred on the sampled pose: the trajectory sweeps
// tilt ± accumulation/2 instead of tilt + accumulation, so per-window event
// density (which scales with spin rate) can be raised without pushing late
// windows far from the tilt cone where keypoint identity gets ambiguous.
Trajectory sample_trajectory(const SceneConfig& sc, std::uint64_t seed) {
  Rng rng(seed);
  Trajectory tr;
  const double dist = rng.uniform(sc.distance_min_m, sc.distance_max_m);
  const Eigen::Vector3d centre(rng.uniform(-0.12, 0.12) * dist, rng.uniform(-0.09, 0.09) * dist,
                               dist);
  const Eigen::Quaterniond tilt = quat_exp(unit_vector(rng) * rng.uniform(0.0, sc.tilt_deg * kDeg));
  tr.omega = unit_vector(rng) * (rng.uniform(sc.spin_min_deg_s, sc.spin_max_deg_s) * kDeg);
  tr.vel = Eigen::Vector3d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)) *
           sc.drift_m_s;
  tr.initial.q = (tilt * quat_exp(-tr.omega * (0.5 * sc.duration_s))).normalized();
  tr.initial.t = centre - tr.vel * (0.5 * sc.duration_s);
  tr.duration_s = sc.duration_s;
  tr.seed = derive_seed(seed, "jitter");
  return tr;
}

template <typename T>
void fisher_yates(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.below(i)]);
}

json truth_to_json(const TruthRecord& tr) {
  json j;
  j["w"] = tr.window;
  j["traj"] = tr.traj;
  j["t_mid_us"] = tr.t_mid_us;
  j["q"] = {tr.pose.q.w(), tr.pose.q.x(), tr.pose.q.y(), tr.pose.q.z()};
  j["t"] = {tr.pose.t.x(), tr.pose.t.y(), tr.pose.t.z()};
  json kp = json::array();
  for (const auto& p : tr.keypoints) kp.push_back({p.x(), p.y()});
  j["kp"] = kp;
  json vis = json::array();
  for (std::uint8_t v : tr.visible) vis.push_back(static_cast<int>(v));
  j["vis"] = vis;
  j["roi"] = {tr.roi.x_min, tr.roi.y_min, tr.roi.x_max, tr.roi.y_max};
  j["roi_valid"] = tr.roi_valid;
  return j;
}

TruthRecord truth_from_json(const json& j) {
  TruthRecord tr;
  try {
    tr.window = j.at("w").get<int>();
    tr.traj = j.at("traj").get<int>();
    tr.t_mid_us = j.at("t_mid_us").get<std::uint64_t>();
    const json& q = j.at("q");
    tr.pose.q = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(),
                                   q.at(2).get<double>(), q.at(3).get<double>());
    const json& t = j.at("t");
    tr.pose.t = Eigen::Vector3d(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
    for (const json& p : j.at("kp"))
      tr.keypoints.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    for (const json& v : j.at("vis")) tr.visible.push_back(v.get<int>() != 0);
    const json& r = j.at("roi");
    tr.roi = Roi{r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
    tr.roi_valid = j.at("roi_valid").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("truth record malformed: ") + e.what(), 0);
  }
  if (tr.keypoints.size() != TargetModel::kNumKeypoints ||
      tr.visible.size() != TargetModel::kNumKeypoints)
    throw FormatError("truth record holds wrong keypoint count", 0);
  return tr;
}

std::string stream_path(const std::string& out_dir, int traj) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "/scene/events_%03d.evs", traj);
  return out_dir + buf;
}

std::string frame_path(const std::string& dir, int window) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "/w%05d.efr", window);
  return dir + buf;
}

EventFrame build_repr_frame(ReprKind kind, const Window& win, int width, int height) {
  switch (kind) {
    case ReprKind::E2F: return build_e2f(win, width, height);
    case ReprKind::Hist2D: return build_hist2d(win, width, height);
    case ReprKind::LNES: return build_lnes(win, width, height);
  }
  throw ArgumentError("unknown representation");
}

Tensor<float> frame_input(const EventFrame& f) {
  Tensor<float> t(1, f.channels, f.height, f.width);
  std::copy(f.data.begin(), f.data.end(), t.data.begin());
  return t;
}

std::vector<Eigen::Vector2d> roi_keypoints(const TruthRecord& tr, const RoiAffine& a) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(tr.keypoints.size());
  for (const auto& kp : tr.keypoints) out.push_back(a.to_roi(kp));
  return out;
}

KeypointSet gt_keypoint_set(const TruthRecord& tr, const RoiAffine& a) {
  KeypointSet set;
  for (std::size_t i = 0; i < tr.keypoints.size(); ++i) {
    Keypoint kp;
    kp.index = static_cast<int>(i);
    kp.sensor_uv = tr.keypoints[i];
    kp.roi_uv = a.to_roi(kp.sensor_uv);
    kp.valid = tr.visible[i] != 0;
    set.points.push_back(kp);
  }
  return set;
}

KeypointSet decode_head(const ExperimentConfig& cfg, const Tensor<float>& out,
                        const RoiAffine& a) {
  if (cfg.head == HeadKind::Coordinate) {
    std::vector<double> v(out.data.begin(), out.data.end());
    return decode_coordinates(v, cfg.roi_size, a);
  }
  return decode_heatmaps(out, cfg.roi_size, a);
}

// Per-window training samples, inputs alongside encoded targets.
struct Samples {
  std::vector<int> wins;
  std::vector<Tensor<float>> x, y;
};

Samples collect_samples(const ExperimentConfig& cfg, const SceneData& scene,
                        const std::vector<EventFrame>& frames, const std::vector<int>& ids) {
  Samples s;
  s.wins = ids;
  s.x.reserve(ids.size());
  s.y.reserve(ids.size());
  for (int w : ids) {
    const TruthRecord& tr = scene.truth[w];
    const RoiAffine a = roi_affine(tr.roi, cfg.roi_size);
    s.x.push_back(frame_input(frames[w]));
    const std::vector<Eigen::Vector2d> rk = roi_keypoints(tr, a);
    if (cfg.head == HeadKind::Coordinate) {
      const std::vector<double> enc = encode_coordinate_target(rk, cfg.roi_size);
      Tensor<float> t(1, static_cast<int>(enc.size()), 1, 1);
      for (std::size_t i = 0; i < enc.size(); ++i) t.data[i] = static_cast<float>(enc[i]);
      s.y.push_back(std::move(t));
    } else {
      s.y.push_back(encode_heatmap_target(rk, cfg.roi_size, cfg.heatmap_size, cfg.sigma_cells).maps);
    }
  }
  return s;
}

Tensor<float> stack_batch(const std::vector<Tensor<float>>& items, const std::vector<int>& order,
                          std::size_t from, std::size_t count) {
  const Tensor<float>& first = items[order[from]];
  Tensor<float> out(static_cast<int>(count), first.c, first.h, first.w);
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < count; ++i)
    std::copy_n(items[order[from + i]].data.data(), per, out.sample(static_cast<int>(i)));
  return out;
}

double validation_pck(const Network<float>& net, Mode mode, const ExperimentConfig& cfg,
                      const SceneData& scene, const std::vector<EventFrame>& frames,
                      const std::vector<int>& ids) {
  if (ids.empty()) return 0.0;
  const double d = cfg.eval.pck_fraction * cfg.roi_size;
  double acc = 0.0;
  for (int w : ids) {
    const TruthRecord& tr = scene.truth[w];
    const RoiAffine a = roi_affine(tr.roi, cfg.roi_size);
    const Tensor<float> out = forward(net, frame_input(frames[w]), mode);
    acc += pck(decode_head(cfg, out, a), gt_keypoint_set(tr, a), d);
  }
  return acc / static_cast<double>(ids.size());
}

struct StageLog {
  std::vector<double> loss, val_pck;
};

// Linear warmup into a cosine decay toward lr/20. The warmup matters: full
// rate on He-initialized weights collapses the relu stack within one epoch.
double epoch_lr(double lr, int epoch, int epochs) {
  const int warm = std::max(1, epochs / 10);
  if (epoch < warm) return lr * (epoch + 1) / warm;
  if (epochs - warm <= 1) return lr;
  const double u = static_cast<double>(epoch - warm) / (epochs - warm - 1 + 1e-12);
  return lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * u)));
}

StageLog train_stage(Network<float>& net, Mode mode, const Samples& train,
                     const std::vector<int>& val_ids, const ExperimentConfig& cfg,
                     const SceneData& scene, const std::vector<EventFrame>& frames, int epochs,
                     double lr, const std::string& tag, const char* stage_name,
                     std::ostream& log) {
  StageLog out;
  const std::size_t n = train.wins.size();
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  SgdState<float> state;
  const std::size_t batch = static_cast<std::size_t>(cfg.train.batch);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, tag + "/shuffle/" + std::to_string(epoch)));
    fisher_yates(order, rng);
    const double elr = epoch_lr(lr, epoch, epochs);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < n; at += batch) {
      const std::size_t bsz = std::min(batch, n - at);
      const Tensor<float> x = stack_batch(train.x, order, at, bsz);
      const Tensor<float> y = stack_batch(train.y, order, at, bsz);
      ForwardCache<float> cache;
      const Tensor<float> pred = forward(net, x, mode, &cache);
      const LossResult<float> loss = mse_loss(pred, y);
      if (!std::isfinite(loss.value))
        throw TrainingError(tag + ": loss diverged at epoch " + std::to_string(epoch));
      const Gradients<float> grads = backward(net, cache, loss.grad);
      sgd_step(net, grads, state, elr, cfg.train.momentum);
      sum += loss.value;
      ++batches;
    }
    const double mean = sum / batches;
    const double vp = validation_pck(net, mode, cfg, scene, frames, val_ids);
    out.loss.push_back(mean);
    out.val_pck.push_back(vp);
    log << json{{"stage", stage_name}, {"epoch", epoch}, {"lr", elr}, {"loss", mean},
                {"val_pck", vp}}
               .dump()
        << "\n";
    std::printf("train[%s] %s epoch %d/%d lr=%.4f loss=%.6f val_pck=%.4f\n", tag.c_str(),
                stage_name, epoch + 1, epochs, elr, mean, vp);
  }
  return out;
}

std::vector<json> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<json> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      try {
        out.push_back(json::parse(line));
      } catch (const json::parse_error& e) {
        throw FormatError(path + ": " + e.what(), offset + e.byte);
      }
    }
    offset += line.size() + 1;
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.empty() ? 0.0 : v[v.size() / 2];
}

std::string format_mean(double v, bool empty) {
  char buf[32];
  if (empty)
    std::snprintf(buf, sizeof(buf), "%-9s", "-");
  else
    std::snprintf(buf, sizeof(buf), "%-9.5f", v);
  return buf;
}

struct TableRow {
  std::string repr, head, regime;
  int top_k = 0;
  const RunReport* rep = nullptr;
};

std::string table_csv(const std::vector<TableRow>& rows) {
  std::string out =
      "repr     head        regime  top_k  PCK      E_T_m     E_T_norm  E_R_deg   E_P       Rej\n";
  char buf[256];
  for (const TableRow& r : rows) {
    const bool empty = !r.rep->note.empty();
    std::snprintf(buf, sizeof(buf), "%-8s %-11s %-7s %-6d %-8.4f ", r.repr.c_str(), r.head.c_str(),
                  r.regime.c_str(), r.top_k, r.rep->pck);
    out += buf;
    out += format_mean(r.rep->mean_e_t, empty) + " ";
    out += format_mean(r.rep->mean_e_t_norm, empty) + " ";
    out += format_mean(r.rep->mean_e_r_deg, empty) + " ";
    out += format_mean(r.rep->mean_e_p, empty) + " ";
    std::snprintf(buf, sizeof(buf), "%d/%d\n", r.rep->rejected, r.rep->total);
    out += buf;
  }
  return out;
}

std::string cdf_svg(const std::vector<double>& values) {
  const int width = 480, height = 320, left = 60, right = 20, top = 24, bottom = 48;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"13\">empirical CDF of E_P over accepted samples</text>\n";
  char buf[256];
  if (values.empty()) {
    svg << "<text x=\"" << width / 2 << "\" y=\"" << height / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
        << "no accepted samples</text>\n</svg>\n";
    return svg.str();
  }
  const double xmax = std::max(values.back() * 1.05, 1e-9);
  const double n = static_cast<double>(values.size());
  const auto px = [&](double x) { return left + x / xmax * (width - left - right); };
  const auto py = [&](double y) { return (height - bottom) - y * (height - top - bottom); };
  std::ostringstream pts;
  pts << px(0.0) << "," << py(0.0) << " ";
  for (std::size_t i = 0; i < values.size(); ++i) {
    pts << px(values[i]) << "," << py(i / n) << " ";
    pts << px(values[i]) << "," << py((i + 1) / n) << " ";
  }
  pts << px(xmax) << "," << py(1.0);
  svg << "<line x1=\"" << left << "\" y1=\"" << py(0.0) << "\" x2=\"" << width - right
      << "\" y2=\"" << py(0.0) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << py(0.0) << "\" x2=\"" << left << "\" y2=\""
      << py(1.0) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = xmax * i / 4.0;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                  "font-size=\"11\">%.3g</text>\n",
                  px(x), py(0.0), px(x), py(0.0) + 5.0, px(x), py(0.0) + 20.0, x);
    svg << buf;
  }
  for (int i = 0; i <= 2; ++i) {
    const double y = i / 2.0;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" font-family=\"sans-serif\" "
                  "font-size=\"11\">%.1f</text>\n",
                  px(0.0) - 5.0, py(y), px(0.0), py(y), px(0.0) - 8.0, py(y) + 4.0, y);
    svg << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                "font-size=\"12\">E_P</text>\n",
                (left + width - right) / 2, height - 10);
  svg << buf;
  svg << "<polyline fill=\"none\" stroke=\"#1565c0\" stroke-width=\"1.5\" points=\"" << pts.str()
      << "\"/>\n</svg>\n";
  return svg.str();
}

json report_to_json(const ExperimentConfig& cfg, const RunReport& rep, double d_px) {
  json j;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  j["name"] = cfg.name;
  j["mode"] = cfg.eval.oracle ? "oracle" : "network";
  j["representation"] = to_string(cfg.repr);
  j["head"] = to_string(cfg.head);
  j["regime"] = to_string(cfg.regime);
  j["top_k"] = cfg.top_k;
  j["precision_note"] = cfg.regime == Regime::Float
                            ? "float32"
                            : "fake-quantized emulation; no hardware deployment measured";
  j["pck_threshold_px"] = d_px;
  j["pck_threshold_fraction"] = cfg.eval.pck_fraction;
  j["counts"] = {{"total", rep.total}, {"accepted", rep.accepted}, {"rejected", rep.rejected}};
  j["means"] = {{"e_t_m", rep.mean_e_t},
                {"e_t_norm", rep.mean_e_t_norm},
                {"e_r_deg", rep.mean_e_r_deg},
                {"e_r_rad", rep.mean_e_r_rad},
                {"e_p", rep.mean_e_p}};
  j["pck"] = rep.pck;
  j["note"] = rep.note;
  j["e_p_cdf"] = rep.e_p_sorted;
  return j;
}

json quat_to_json(const Eigen::Quaterniond& q) { return json{q.w(), q.x(), q.y(), q.z()}; }
json vec_to_json(const Eigen::Vector3d& v) { return json{v.x(), v.y(), v.z()}; }

// Shared evaluation pass behind cmd_eval and every matrix row. Frames may be
// passed in to avoid reloading per row; oracle mode touches no frames at all.
RunReport eval_run(const ExperimentConfig& cfg, const std::string& out_dir,
                   const std::string& eval_dir, const SceneData& scene,
                   const std::vector<EventFrame>* frames_in) {
  const std::vector<int> test_ids = scene.split_windows(scene.test_traj);
  if (test_ids.empty()) throw ConfigError("test split is empty; increase trajectories or duration");
  const std::string label = run_label(cfg);
  const double d = cfg.eval.pck_fraction * cfg.roi_size;

  Network<float> net;
  Mode mode = Mode::Float;
  std::vector<EventFrame> frames_local;
  const std::vector<EventFrame>* frames = frames_in;
  if (!cfg.eval.oracle) {
    if (!frames) {
      frames_local = ensure_frames(cfg, out_dir, scene);
      frames = &frames_local;
    }
    const TrainSummary ts = cmd_train(cfg, out_dir);
    net = load_weights<float>(ts.weights_path);
    mode = cfg.regime == Regime::Float ? Mode::Float : Mode::FakeQuant;
  }

  std::vector<PoseRecord> records;
  records.reserve(test_ids.size());
  std::string kp_lines;
  for (int w : test_ids) {
    const TruthRecord& tr = scene.truth[w];
    const RoiAffine a = roi_affine(tr.roi, cfg.roi_size);
    const KeypointSet gt = gt_keypoint_set(tr, a);
    KeypointSet pred;
    if (cfg.eval.oracle) {
      pred = oracle_predict(tr.keypoints, tr.visible, cfg.eval.oracle_sigma_px,
                            derive_seed(cfg.seed, "oracle/" + label + "/w" + std::to_string(w)), a);
    } else {
      pred = decode_head(cfg, forward(net, frame_input((*frames)[w]), mode), a);
    }
    const double frac = pck(pred, gt, d);

    KeypointSet sel;
    try {
      sel = select_top_k(pred, cfg.top_k);
    } catch (const InsufficientPointsError&) {
      for (const Keypoint& kp : pred.points)  // keep what there is; solve rejects n < 4
        if (kp.valid) sel.points.push_back(kp);
    }
    Correspondences corr;
    corr.camera = scene.camera;
    for (const Keypoint& kp : sel.points) {
      corr.points_3d.push_back(scene.model.keypoints_3d[kp.index]);
      corr.points_2d.push_back(kp.sensor_uv);
    }
    PoseEstimate est;
    if (cfg.eval.ransac) {
      RansacConfig rc;
      rc.seed = derive_seed(cfg.seed, "ransac/" + label + "/w" + std::to_string(w));
      est = solve_ransac(corr, rc);
    } else {
      est = solve(corr);
    }

    PoseRecord rec;
    rec.id = "w" + std::to_string(w);
    rec.gt = tr.pose;
    rec.estimate = est;
    rec.pck_correct = static_cast<int>(std::llround(frac * TargetModel::kNumKeypoints));
    rec.pck_total = TargetModel::kNumKeypoints;
    rec.rejected = est.status != PoseStatus::Ok;
    if (!rec.rejected) {
      const TranslationError te = translation_error(est.pose.t, tr.pose.t);
      const RotationError re = rotation_error(est.pose.q, tr.pose.q);
      rec.e_t = te.meters;
      rec.e_t_norm = te.normalized;
      rec.e_r_deg = re.degrees;
      rec.e_r_rad = re.radians;
      rec.e_p = pose_error(re.radians, te.normalized);
    }
    records.push_back(rec);

    json line;
    line["w"] = w;
    json pts = json::array();
    for (const Keypoint& kp : sel.points)
      pts.push_back(json{{"i", kp.index},
                         {"u", kp.sensor_uv.x()},
                         {"v", kp.sensor_uv.y()},
                         {"c", kp.confidence},
                         {"valid", kp.valid}});
    line["points"] = pts;
    json est_j;
    est_j["q"] = quat_to_json(est.pose.q);
    est_j["t"] = vec_to_json(est.pose.t);
    if (std::isfinite(est.reprojection_rmse)) est_j["rmse"] = est.reprojection_rmse;
    est_j["status"] = to_string(est.status);
    est_j["diverged"] = est.refine_diverged;
    line["est"] = est_j;
    line["gt"] = {{"q", quat_to_json(tr.pose.q)}, {"t", vec_to_json(tr.pose.t)}};
    line["pck"] = frac;
    kp_lines += line.dump();
    kp_lines += "\n";
  }

  const RunReport rep = aggregate(records);
  fs::create_directories(eval_dir);
  write_text(eval_dir + "/report.json", report_to_json(cfg, rep, d).dump(2) + "\n");
  write_text(eval_dir + "/report.csv",
             table_csv({{to_string(cfg.repr), to_string(cfg.head), to_string(cfg.regime),
                         cfg.top_k, &rep}}));
  write_text(eval_dir + "/cdf.svg", cdf_svg(rep.e_p_sorted));
  write_text(eval_dir + "/keypoints.jsonl", kp_lines);
  std::printf("eval[%s] pck=%.4f mean_e_p=%.5f rejected=%d/%d%s\n", label.c_str(), rep.pck,
              rep.mean_e_p, rep.rejected, rep.total, rep.note.empty() ? "" : " (no accepted)");
  return rep;
}

// Frame cache shared by cmd_frames (forced rebuild, with reporting) and
// ensure_frames (trusting the stored key).
std::vector<EventFrame> load_or_build_frames(const ExperimentConfig& cfg,
                                             const std::string& out_dir, const SceneData& scene,
                                             bool force, bool report) {
  const std::string dir = out_dir + "/frames/" + to_string(cfg.repr);
  const std::string key = frames_key_hex(cfg);
  const std::string marker = dir + "/frames";
  std::vector<EventFrame> frames(scene.truth.size());

  if (!force && key_matches(marker, key)) {
    for (const TruthRecord& tr : scene.truth)
      if (tr.roi_valid) frames[tr.window] = load_frame(frame_path(dir, tr.window));
    return frames;
  }

  fs::create_directories(dir);
  std::uint64_t total_events = 0, min_ev = UINT64_MAX, max_ev = 0;
  std::size_t g = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int ti = 0; ti < cfg.scene.trajectories; ++ti) {
    const EventStream stream = load_stream(stream_path(out_dir, ti), StreamFormat::binary);
    const std::vector<Window> wins = windows(stream, cfg.scene.delta_t_us);
    for (const Window& win : wins) {
      if (g >= scene.truth.size() || scene.truth[g].traj != ti)
        throw FormatError("event streams out of step with ground truth", g);
      const TruthRecord& tr = scene.truth[g];
      if (tr.roi_valid) {
        const EventFrame full =
            build_repr_frame(cfg.repr, win, cfg.scene.camera.width, cfg.scene.camera.height);
        frames[g] = crop_resize(full, tr.roi, cfg.roi_size).frame;
        save_frame(frames[g], frame_path(dir, tr.window));
      }
      const std::uint64_t ne = win.events.size();
      total_events += ne;
      min_ev = std::min(min_ev, ne);
      max_ev = std::max(max_ev, ne);
      ++g;
    }
  }
  if (g != scene.truth.size())
    throw FormatError("event streams out of step with ground truth", g);
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(marker + ".key", key + "\n");
  write_text(marker, "frame cache\n");
  if (report) {
    const double mean_ev = g ? static_cast<double>(total_events) / g : 0.0;
    std::printf("frames[%s] windows=%zu events/window min=%llu mean=%.0f max=%llu build=%.0f ev/s\n",
                to_string(cfg.repr), g, static_cast<unsigned long long>(g ? min_ev : 0), mean_ev,
                static_cast<unsigned long long>(max_ev),
                dt > 0 ? static_cast<double>(total_events) / dt : 0.0);
  }
  return frames;
}

}  // namespace

const char* to_string(ReprKind k) {
  switch (k) {
    case ReprKind::E2F: return "e2f";
    case ReprKind::Hist2D: return "hist2d";
    case ReprKind::LNES: return "lnes";
  }
  return "?";
}

const char* to_string(HeadKind k) {
  return k == HeadKind::Coordinate ? "coordinate" : "heatmap";
}

const char* to_string(Regime r) {
  switch (r) {
    case Regime::Float: return "float";
    case Regime::W4A4: return "w4a4";
    case Regime::W8A8: return "w8a8";
  }
  return "?";
}

ReprKind repr_from_string(std::string_view s) {
  if (s == "e2f") return ReprKind::E2F;
  if (s == "hist2d") return ReprKind::Hist2D;
  if (s == "lnes") return ReprKind::LNES;
  throw ConfigError("representation must be e2f, hist2d, or lnes");
}

HeadKind head_from_string(std::string_view s) {
  if (s == "coordinate") return HeadKind::Coordinate;
  if (s == "heatmap") return HeadKind::Heatmap;
  throw ConfigError("head must be coordinate or heatmap");
}

Regime regime_from_string(std::string_view s) {
  if (s == "float") return Regime::Float;
  if (s == "w4a4") return Regime::W4A4;
  if (s == "w8a8") return Regime::W8A8;
  throw ConfigError("regime must be float, w4a4, or w8a8");
}

int repr_channels(ReprKind k) { return k == ReprKind::E2F ? 1 : 2; }

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  std::uint64_t h = fnv1a64(tag) ^ (master * 0x9E3779B97F4A7C15ULL);
  h ^= h >> 30;
  h *= 0xBF58476D1CE4E5B9ULL;
  h ^= h >> 27;
  h *= 0x94D049BB133111EBULL;
  h ^= h >> 31;
  return h;
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"name", "seed", "scene", "representation", "head", "regime", "roi_size",
              "heatmap_size", "sigma_cells", "top_k", "split", "train", "eval"},
             "config");
  ExperimentConfig cfg;
  cfg.name = str_field(j, "name", cfg.name, "config");
  if (j.contains("seed")) {
    const json& s = j.at("seed");
    if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() &&
                                   s.get<long long>() < 0))
      throw ConfigError("config.seed must be a non-negative integer");
    cfg.seed = s.get<std::uint64_t>();
  }
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    if (s.is_string()) {
      const std::string path = s.get<std::string>();
      std::string text2;
      try {
        text2 = read_text(path);
      } catch (const IoError&) {
        throw ConfigError("scene file not readable: " + path);
      }
      json sj;
      try {
        sj = json::parse(text2);
      } catch (const json::parse_error& e) {
        throw ConfigError("scene file " + path + " is not valid JSON: " + e.what());
      }
      cfg.scene = scene_from_json(sj);
    } else {
      cfg.scene = scene_from_json(s);
    }
  }
  if (j.contains("representation"))
    cfg.repr = repr_from_string(str_field(j, "representation", "", "config"));
  if (j.contains("head")) cfg.head = head_from_string(str_field(j, "head", "", "config"));
  if (j.contains("regime")) cfg.regime = regime_from_string(str_field(j, "regime", "", "config"));
  cfg.roi_size = int_field(j, "roi_size", cfg.roi_size, "config");
  cfg.heatmap_size = int_field(j, "heatmap_size", cfg.roi_size / 4, "config");
  cfg.sigma_cells = num_field(j, "sigma_cells", cfg.sigma_cells, "config");
  cfg.top_k = int_field(j, "top_k", cfg.top_k, "config");
  if (j.contains("split")) {
    const json& s = j.at("split");
    if (!s.is_array() || s.size() != 3 || !s[0].is_number() || !s[1].is_number() ||
        !s[2].is_number())
      throw ConfigError("config.split must be [train, val, test]");
    cfg.split_train = s[0].get<double>();
    cfg.split_val = s[1].get<double>();
    cfg.split_test = s[2].get<double>();
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"float_epochs", "qat_epochs", "lr", "momentum", "batch", "calibration_batches",
                "first_layer_8bit"},
               "train");
    cfg.train.float_epochs = int_field(t, "float_epochs", cfg.train.float_epochs, "train");
    cfg.train.qat_epochs = int_field(t, "qat_epochs", cfg.train.qat_epochs, "train");
    cfg.train.lr = num_field(t, "lr", cfg.train.lr, "train");
    cfg.train.momentum = num_field(t, "momentum", cfg.train.momentum, "train");
    cfg.train.batch = int_field(t, "batch", cfg.train.batch, "train");
    cfg.train.calibration_batches =
        int_field(t, "calibration_batches", cfg.train.calibration_batches, "train");
    cfg.train.first_layer_8bit =
        bool_field(t, "first_layer_8bit", cfg.train.first_layer_8bit, "train");
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"oracle", "oracle_sigma_px", "pck_fraction", "ransac"}, "eval");
    cfg.eval.oracle = bool_field(e, "oracle", cfg.eval.oracle, "eval");
    cfg.eval.oracle_sigma_px = num_field(e, "oracle_sigma_px", cfg.eval.oracle_sigma_px, "eval");
    cfg.eval.pck_fraction = num_field(e, "pck_fraction", cfg.eval.pck_fraction, "eval");
    cfg.eval.ransac = bool_field(e, "ransac", cfg.eval.ransac, "eval");
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const IoError&) {
    throw ConfigError("config file not readable: " + path);
  }
  return parse_config(text);
}

std::string config_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["scene"] = scene_to_json(cfg.scene);
  j["representation"] = to_string(cfg.repr);
  j["head"] = to_string(cfg.head);
  j["regime"] = to_string(cfg.regime);
  j["roi_size"] = cfg.roi_size;
  j["heatmap_size"] = cfg.heatmap_size;
  j["sigma_cells"] = cfg.sigma_cells;
  j["top_k"] = cfg.top_k;
  j["split"] = {cfg.split_train, cfg.split_val, cfg.split_test};
  j["train"] = train_to_json(cfg.train);
  j["eval"] = {{"oracle", cfg.eval.oracle},
               {"oracle_sigma_px", cfg.eval.oracle_sigma_px},
               {"pck_fraction", cfg.eval.pck_fraction},
               {"ransac", cfg.eval.ransac}};
  return j.dump();
}

std::string config_hash(const ExperimentConfig& cfg) { return hex16(fnv1a64(config_json(cfg))); }

std::vector<int> SceneData::split_windows(const std::vector<int>& trajs) const {
  std::unordered_set<int> in(trajs.begin(), trajs.end());
  std::vector<int> out;
  for (const TruthRecord& tr : truth)
    if (tr.roi_valid && in.count(tr.traj)) out.push_back(tr.window);
  return out;
}

Network<float> make_coordinate_net(int in_c, int roi_size) {
  if (roi_size % 16 != 0) throw ArgumentError("roi_size must be a multiple of 16");
  const int tail = roi_size / 16;
  Network<float> net;
  net.head = HeadKind::Coordinate;
  net.in_c = in_c;
  net.in_h = net.in_w = roi_size;
  net.layers.push_back(make_conv3x3<float>(in_c, 16, 2));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_sepconv<float>(16, 32, 2));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_sepconv<float>(32, 48, 2));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_sepconv<float>(48, 64, 2));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_flatten<float>());
  net.layers.push_back(make_dense<float>(64 * tail * tail, 128));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_dense<float>(128, 2 * TargetModel::kNumKeypoints));
  validate(net);
  return net;
}

Network<float> make_heatmap_net(int in_c, int roi_size) {
  if (roi_size % 16 != 0) throw ArgumentError("roi_size must be a multiple of 16");
  Network<float> net;
  net.head = HeadKind::Heatmap;
  net.in_c = in_c;
  net.in_h = net.in_w = roi_size;
  net.layers.push_back(make_conv3x3<float>(in_c, 16, 2));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_sepconv<float>(16, 32, 2));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_sepconv<float>(32, 64, 2));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_sepconv<float>(64, 64, 1));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_tconv2x2<float>(64, 32));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_sepconv<float>(32, 32, 1));
  net.layers.push_back(make_relu<float>());
  net.layers.push_back(make_conv3x3<float>(32, TargetModel::kNumKeypoints, 1));
  validate(net);
  return net;
}

void attach_quantizers(Network<float>& net, Regime regime, bool first_layer_8bit) {
  if (regime == Regime::Float) throw ArgumentError("float regime has no quantizers");
  const int bits = regime == Regime::W4A4 ? 4 : 8;
  bool first = true;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Layer<float>& l = net.layers[i];
    const bool parameterized = l.kind == LayerKind::Conv3x3 || l.kind == LayerKind::SepConv ||
                               l.kind == LayerKind::TConv2x2 || l.kind == LayerKind::Dense;
    if (!parameterized) continue;
    const int layer_bits = (first && first_layer_8bit) ? 8 : bits;
    QuantConfig qc;
    qc.weight_bits = layer_bits;
    qc.act_bits = layer_bits;
    const bool relu_next =
        i + 1 < net.layers.size() && net.layers[i + 1].kind == LayerKind::Relu;
    if (relu_next) {
      qc.quantize_output = false;  // the relu downstream carries the activation quantizer
      QuantConfig rq;
      rq.weight_bits = layer_bits;
      rq.act_bits = layer_bits;
      rq.quantize_output = true;
      net.layers[i + 1].quant = rq;
    } else {
      qc.quantize_output = true;
    }
    l.quant = qc;
    first = false;
  }
}

void cmd_gen(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string dir = out_dir + "/scene";
  fs::create_directories(dir);
  const TargetModel model =
      cuboid_model(cfg.scene.cuboid.x(), cfg.scene.cuboid.y(), cfg.scene.cuboid.z());
  const int T = cfg.scene.trajectories;

  std::string truth_lines;
  std::uint64_t total_events = 0;
  int total_windows = 0, valid_windows = 0;
  for (int ti = 0; ti < T; ++ti) {
    const Trajectory traj =
        sample_trajectory(cfg.scene, derive_seed(cfg.seed, "traj/" + std::to_string(ti)));
    const GenerateResult res = generate_events(model, traj, cfg.scene.camera, cfg.scene.substep_s,
                                               cfg.scene.contrast_rate);
    save_stream(res.stream, stream_path(out_dir, ti), StreamFormat::binary);
    total_events += res.stream.events.size();
    const std::vector<Window> wins = windows(res.stream, cfg.scene.delta_t_us);
    const std::vector<WindowTruth> wt =
        ground_truth(traj, wins, model, cfg.scene.camera, cfg.scene.roi_margin);
    for (const WindowTruth& t : wt) {
      TruthRecord tr;
      tr.window = total_windows++;
      tr.traj = ti;
      tr.t_mid_us = t.t_mid_us;
      tr.pose = t.pose;
      tr.keypoints = t.keypoints;
      tr.visible.assign(t.visible.begin(), t.visible.end());
      tr.roi = t.roi;
      tr.roi_valid = t.roi_valid;
      valid_windows += t.roi_valid ? 1 : 0;
      truth_lines += truth_to_json(tr).dump();
      truth_lines += "\n";
    }
  }

  // Split by trajectory so no trajectory leaks across train/val/test.
  std::vector<int> ids(T);
  for (int i = 0; i < T; ++i) ids[i] = i;
  Rng rng(derive_seed(cfg.seed, "split"));
  fisher_yates(ids, rng);
  const int n_val = static_cast<int>(std::llround(cfg.split_val * T));
  const int n_test = static_cast<int>(std::llround(cfg.split_test * T));
  const int n_train = T - n_val - n_test;
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw ConfigError("too few trajectories for the requested split");
  json splits;
  splits["train"] = std::vector<int>(ids.begin(), ids.begin() + n_train);
  splits["val"] = std::vector<int>(ids.begin() + n_train, ids.begin() + n_train + n_val);
  splits["test"] = std::vector<int>(ids.begin() + n_train + n_val, ids.end());

  json meta;
  meta["scene_key"] = scene_key_hex(cfg);
  meta["config_hash"] = config_hash(cfg);
  meta["seed"] = cfg.seed;
  meta["trajectories"] = T;
  meta["windows"] = total_windows;
  meta["roi_valid"] = valid_windows;
  meta["events"] = total_events;
  meta["delta_t_us"] = cfg.scene.delta_t_us;
  meta["splits"] = splits;
  write_text(dir + "/truth.jsonl", truth_lines);
  write_text(dir + "/meta.json", meta.dump(2) + "\n");
  std::printf("gen: trajectories=%d windows=%d roi_valid=%d events=%llu -> %s\n", T, total_windows,
              valid_windows, static_cast<unsigned long long>(total_events), dir.c_str());
}

SceneData ensure_scene(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string dir = out_dir + "/scene";
  const std::string key = scene_key_hex(cfg);
  bool fresh = false;
  if (fs::exists(dir + "/meta.json")) {
    const json meta = parse_json_file(dir + "/meta.json");
    fresh = meta.value("scene_key", std::string()) == key;
  }
  if (!fresh) cmd_gen(cfg, out_dir);

  const json meta = parse_json_file(dir + "/meta.json");
  SceneData sd;
  sd.camera = cfg.scene.camera;
  sd.model = cuboid_model(cfg.scene.cuboid.x(), cfg.scene.cuboid.y(), cfg.scene.cuboid.z());
  try {
    sd.total_events = meta.at("events").get<std::uint64_t>();
    sd.train_traj = meta.at("splits").at("train").get<std::vector<int>>();
    sd.val_traj = meta.at("splits").at("val").get<std::vector<int>>();
    sd.test_traj = meta.at("splits").at("test").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw FormatError(dir + "/meta.json: " + e.what(), 0);
  }
  for (const json& line : load_jsonl(dir + "/truth.jsonl"))
    sd.truth.push_back(truth_from_json(line));
  if (static_cast<int>(sd.truth.size()) != meta.value("windows", -1))
    throw FormatError(dir + "/truth.jsonl does not match meta.json window count", 0);
  for (std::size_t i = 0; i < sd.truth.size(); ++i)
    if (sd.truth[i].window != static_cast<int>(i))
      throw FormatError("truth records out of order", i);
  return sd;
}

std::vector<EventFrame> ensure_frames(const ExperimentConfig& cfg, const std::string& out_dir,
                                      const SceneData& scene) {
  return load_or_build_frames(cfg, out_dir, scene, false, false);
}

void cmd_frames(const ExperimentConfig& cfg, const std::string& out_dir) {
  const SceneData scene = ensure_scene(cfg, out_dir);
  load_or_build_frames(cfg, out_dir, scene, true, true);
}

TrainSummary cmd_train(const ExperimentConfig& cfg, const std::string& out_dir) {
  const SceneData scene = ensure_scene(cfg, out_dir);
  const std::vector<EventFrame> frames = ensure_frames(cfg, out_dir, scene);
  const std::vector<int> train_ids = scene.split_windows(scene.train_traj);
  const std::vector<int> val_ids = scene.split_windows(scene.val_traj);
  if (train_ids.empty() || val_ids.empty())
    throw ConfigError("train or val split is empty; increase trajectories or duration");

  fs::create_directories(out_dir + "/weights");
  fs::create_directories(out_dir + "/logs");
  const std::string float_path = out_dir + "/weights/" + weights_name(cfg, Regime::Float) + ".nnw";
  const std::string float_key = weights_key_hex(cfg, Regime::Float);
  const std::string tag = std::string(to_string(cfg.head)) + "/" + to_string(cfg.repr);

  TrainSummary summary;
  Network<float> net;
  const int in_c = repr_channels(cfg.repr);

  const auto train_float = [&]() {
    const Samples train = collect_samples(cfg, scene, frames, train_ids);
    net = cfg.head == HeadKind::Coordinate ? make_coordinate_net(in_c, cfg.roi_size)
                                           : make_heatmap_net(in_c, cfg.roi_size);
    init_weights(net, derive_seed(cfg.seed, tag + "/init"));
    std::ofstream log(out_dir + "/logs/train_" + weights_name(cfg, Regime::Float) + ".jsonl");
    const StageLog sl = train_stage(net, Mode::Float, train, val_ids, cfg, scene, frames,
                                    cfg.train.float_epochs, cfg.train.lr, tag, "float", log);
    save_weights(net, float_path);
    write_text(float_path + ".key", float_key + "\n");
    summary.float_loss = sl.loss;
    summary.float_val_pck = sl.val_pck;
    summary.trained = true;
  };

  if (cfg.regime == Regime::Float) {
    if (key_matches(float_path, float_key)) {
      net = load_weights<float>(float_path);
      summary.final_val_pck = validation_pck(net, Mode::Float, cfg, scene, frames, val_ids);
    } else {
      train_float();
      summary.final_val_pck = summary.float_val_pck.back();
    }
    summary.weights_path = float_path;
    return summary;
  }

  const std::string quant_path =
      out_dir + "/weights/" + weights_name(cfg, cfg.regime) + ".nnw";
  const std::string quant_key = weights_key_hex(cfg, cfg.regime);
  if (key_matches(quant_path, quant_key)) {
    net = load_weights<float>(quant_path);
    summary.final_val_pck = validation_pck(net, Mode::FakeQuant, cfg, scene, frames, val_ids);
    summary.weights_path = quant_path;
    return summary;
  }

  if (key_matches(float_path, float_key))
    net = load_weights<float>(float_path);
  else
    train_float();

  // Quantization-aware fine-tuning: freeze the calibration observed on the
  // float network, then train a short stage at a reduced rate.
  attach_quantizers(net, cfg.regime, cfg.train.first_layer_8bit);
  const Samples train = collect_samples(cfg, scene, frames, train_ids);
  {
    std::vector<Tensor<float>> cal;
    std::vector<int> order(train.wins.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    const std::size_t batch = static_cast<std::size_t>(cfg.train.batch);
    for (std::size_t at = 0;
         at < order.size() && cal.size() < static_cast<std::size_t>(cfg.train.calibration_batches);
         at += batch)
      cal.push_back(stack_batch(train.x, order, at, std::min(batch, order.size() - at)));
    calibrate(net, cal);
  }
  std::ofstream log(out_dir + "/logs/train_" + weights_name(cfg, cfg.regime) + ".jsonl");
  const StageLog sl =
      train_stage(net, Mode::FakeQuant, train, val_ids, cfg, scene, frames, cfg.train.qat_epochs,
                  cfg.train.lr / 10.0, tag + "/" + to_string(cfg.regime), "qat", log);
  save_weights(net, quant_path);
  write_text(quant_path + ".key", quant_key + "\n");
  summary.qat_loss = sl.loss;
  summary.qat_val_pck = sl.val_pck;
  summary.final_val_pck = sl.val_pck.back();
  summary.weights_path = quant_path;
  summary.trained = true;
  return summary;
}

RunReport cmd_eval(const ExperimentConfig& cfg, const std::string& out_dir) {
  const SceneData scene = ensure_scene(cfg, out_dir);
  return eval_run(cfg, out_dir, out_dir + "/eval/" + run_label(cfg), scene, nullptr);
}

void cmd_bench(const ExperimentConfig& cfg, const std::string& out_dir) {
  const SceneData scene = ensure_scene(cfg, out_dir);
  std::vector<EventStream> streams;
  streams.reserve(cfg.scene.trajectories);
  std::uint64_t total_events = 0;
  for (int ti = 0; ti < cfg.scene.trajectories; ++ti)
    streams.push_back(load_stream(stream_path(out_dir, ti), StreamFormat::binary));
  std::vector<std::vector<Window>> spans;
  for (const EventStream& s : streams) {
    spans.push_back(windows(s, cfg.scene.delta_t_us));
    for (const Window& w : spans.back()) total_events += w.events.size();
  }

  const int runs = 5;
  json bench;
  bench["config_hash"] = config_hash(cfg);
  bench["seed"] = cfg.seed;
  bench["runs"] = runs;
  bench["note"] = "single-thread host CPU; fake-quant emulation, not neuromorphic hardware";

  double checksum = 0.0;
  json ev_rates;
  for (ReprKind repr : {ReprKind::E2F, ReprKind::Hist2D, ReprKind::LNES}) {
    std::vector<double> rates;
    for (int r = 0; r < runs; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& wins : spans)
        for (const Window& w : wins) {
          const EventFrame f =
              build_repr_frame(repr, w, cfg.scene.camera.width, cfg.scene.camera.height);
          checksum += f.data[0];
        }
      const double dt =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rates.push_back(dt > 0 ? static_cast<double>(total_events) / dt : 0.0);
    }
    const double rate = median(rates);
    ev_rates[to_string(repr)] = rate;
    std::printf("bench repr=%s %.3g events/s (median of %d)\n", to_string(repr), rate, runs);
  }
  if (!std::isfinite(checksum)) throw StateError("benchmark produced non-finite frames");
  bench["events_per_s"] = ev_rates;

  json fwd_rates;
  const int in_c = repr_channels(cfg.repr);
  for (HeadKind head : {HeadKind::Coordinate, HeadKind::Heatmap}) {
    for (bool quant : {false, true}) {
      Network<float> net = head == HeadKind::Coordinate
                               ? make_coordinate_net(in_c, cfg.roi_size)
                               : make_heatmap_net(in_c, cfg.roi_size);
      init_weights(net, derive_seed(cfg.seed, "bench/init"));
      Tensor<float> x(1, in_c, cfg.roi_size, cfg.roi_size);
      Rng rng(derive_seed(cfg.seed, "bench/input"));
      for (float& v : x.data) v = static_cast<float>(rng.uniform());
      Mode mode = Mode::Float;
      if (quant) {
        attach_quantizers(net, cfg.regime == Regime::Float ? Regime::W8A8 : cfg.regime,
                          cfg.train.first_layer_8bit);
        calibrate(net, {x});
        mode = Mode::FakeQuant;
      }
      for (int i = 0; i < 3; ++i) forward(net, x, mode);
      const int reps = 30;
      std::vector<double> rates;
      for (int r = 0; r < runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < reps; ++i) checksum += forward(net, x, mode).data[0];
        const double dt =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rates.push_back(dt > 0 ? reps / dt : 0.0);
      }
      const std::string key = std::string(to_string(head)) + (quant ? "_fakequant" : "_float");
      const double rate = median(rates);
      fwd_rates[key] = rate;
      std::printf("bench forward %s %.1f passes/s (median of %d)\n", key.c_str(), rate, runs);
    }
  }
  if (!std::isfinite(checksum)) throw StateError("benchmark produced non-finite outputs");
  bench["forwards_per_s"] = fwd_rates;

  fs::create_directories(out_dir + "/bench");
  write_text(out_dir + "/bench/bench.json", bench.dump(2) + "\n");
}

void cmd_matrix(const ExperimentConfig& cfg, const std::string& out_dir) {
  const SceneData scene = ensure_scene(cfg, out_dir);
  std::vector<std::pair<ReprKind, std::vector<EventFrame>>> frame_cache;
  const auto frames_for = [&](const ExperimentConfig& rc) -> const std::vector<EventFrame>* {
    for (const auto& [k, v] : frame_cache)
      if (k == rc.repr) return &v;
    frame_cache.emplace_back(rc.repr, ensure_frames(rc, out_dir, scene));
    return &frame_cache.back().second;
  };

  std::vector<RunReport> reports;
  reports.reserve(18);
  std::vector<TableRow> rows;
  json rows_json = json::array();
  for (ReprKind repr : {ReprKind::E2F, ReprKind::Hist2D, ReprKind::LNES}) {
    for (Regime regime : {Regime::Float, Regime::W4A4, Regime::W8A8}) {
      for (int k : {5, 8}) {
        ExperimentConfig rc = cfg;
        rc.repr = repr;
        rc.regime = regime;
        rc.top_k = k;
        // The quantized regimes each pair with the head whose robustness
        // they probe: 4-bit with the coordinate head, 8-bit with heatmaps.
        if (regime == Regime::W4A4) rc.head = HeadKind::Coordinate;
        if (regime == Regime::W8A8) rc.head = HeadKind::Heatmap;
        const std::vector<EventFrame>* frames = cfg.eval.oracle ? nullptr : frames_for(rc);
        const std::string row_dir = out_dir + "/matrix/" + run_label(rc);
        reports.push_back(eval_run(rc, out_dir, row_dir, scene, frames));
        const RunReport& rep = reports.back();
        rows.push_back({to_string(repr), to_string(rc.head), to_string(regime), k, &rep});
        json row;
        row["representation"] = to_string(repr);
        row["head"] = to_string(rc.head);
        row["regime"] = to_string(regime);
        row["top_k"] = k;
        row["pck"] = rep.pck;
        row["counts"] = {{"total", rep.total}, {"accepted", rep.accepted},
                         {"rejected", rep.rejected}};
        row["means"] = {{"e_t_m", rep.mean_e_t},
                        {"e_t_norm", rep.mean_e_t_norm},
                        {"e_r_deg", rep.mean_e_r_deg},
                        {"e_r_rad", rep.mean_e_r_rad},
                        {"e_p", rep.mean_e_p}};
        row["note"] = rep.note;
        rows_json.push_back(row);
      }
    }
  }

  json out;
  out["config_hash"] = config_hash(cfg);
  out["seed"] = cfg.seed;
  out["name"] = cfg.name;
  out["mode"] = cfg.eval.oracle ? "oracle" : "network";
  out["pck_threshold_fraction"] = cfg.eval.pck_fraction;
  out["precision_note"] = "quantized rows are fake-quant emulation, not hardware deployment";
  out["rows"] = rows_json;
  fs::create_directories(out_dir + "/matrix");
  write_text(out_dir + "/matrix/matrix.json", out.dump(2) + "\n");
  const std::string csv = table_csv(rows);
  write_text(out_dir + "/matrix/matrix.csv", csv);
  std::printf("%s", csv.c_str());
}

}  // namespace evpose
