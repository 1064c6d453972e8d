#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "evpose/geometry.hpp"
#include "evpose/metrics.hpp"
#include "evpose/nn.hpp"
#include "evpose/repr.hpp"
#include "evpose/scenegen.hpp"

namespace evpose {

// Synthetic scene recipe. Orientations are kept within a tilt cone and spin
// rates moderate so the keypoint-identity mapping stays unambiguous (no two
// sampled orientations are related by a symmetry of the cuboid).
struct SceneConfig {
  CameraIntrinsics camera{200.0, 200.0, 119.5, 89.5, 240, 180};
  Eigen::Vector3d cuboid{1.0, 0.7, 0.5};  // edge lengths, metres
  int trajectories = 24;
  double duration_s = 4.0;
  double substep_s = 0.002;
  int contrast_rate = 2;
  std::uint64_t delta_t_us = 50000;
  double distance_min_m = 2.5;
  double distance_max_m = 4.5;
  double tilt_deg = 15.0;       // max initial rotation away from face-on
  double spin_min_deg_s = 8.0;  // body rotation rate range
  double spin_max_deg_s = 16.0;
  double drift_m_s = 0.08;  // max translation rate per axis
  double roi_margin = 0.1;
};

struct TrainConfig {
  int float_epochs = 30;
  int qat_epochs = 10;
  double lr = 0.05;
  double momentum = 0.9;
  int batch = 16;
  int calibration_batches = 20;
  bool first_layer_8bit = false;
};

struct EvalConfig {
  bool oracle = false;          // ground-truth keypoints instead of a network
  double oracle_sigma_px = 0.0;
  double pck_fraction = 0.05;  // PCK threshold d = fraction * roi_size
  bool ransac = false;
};

enum class Regime : std::uint8_t { Float = 0, W4A4 = 1, W8A8 = 2 };

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  SceneConfig scene;
  ReprKind repr = ReprKind::E2F;
  HeadKind head = HeadKind::Heatmap;
  Regime regime = Regime::Float;
  int roi_size = 64;
  int heatmap_size = 16;   // must equal roi_size / 4 for the heatmap head
  double sigma_cells = 2.0;  // Gaussian target width, heatmap cells
  int top_k = 8;
  double split_train = 0.6, split_val = 0.2, split_test = 0.2;
  TrainConfig train;
  EvalConfig eval;
};

const char* to_string(ReprKind k);
const char* to_string(HeadKind k);
const char* to_string(Regime r);
ReprKind repr_from_string(std::string_view s);
HeadKind head_from_string(std::string_view s);
Regime regime_from_string(std::string_view s);
int repr_channels(ReprKind k);

// Parses and validates a config. Unknown keys, malformed JSON, or invariant
// violations throw ConfigError with the offending key in the message. The
// "scene" entry may be an inline object or a path to a JSON file holding one.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text);

// Canonical JSON dump with every default materialized, and its FNV-1a hash.
// The hash stamps every output artifact.
std::string config_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// Stable sub-seed for a named purpose, so streams drawn for one stage never
// alias another stage's.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

// Per-window ground truth as stored in scene/truth.jsonl.
struct TruthRecord {
  int window = 0;  // global index, also the frame file number
  int traj = 0;
  std::uint64_t t_mid_us = 0;
  Pose pose;
  std::vector<Eigen::Vector2d> keypoints;  // sensor pixels, all 8
  std::vector<std::uint8_t> visible;
  Roi roi;
  bool roi_valid = false;
};

struct SceneData {
  CameraIntrinsics camera;
  TargetModel model;
  std::vector<TruthRecord> truth;
  std::vector<int> train_traj, val_traj, test_traj;
  std::uint64_t total_events = 0;

  // roi_valid windows whose trajectory is in the given split
  std::vector<int> split_windows(const std::vector<int>& trajs) const;
};

// Loads scene artifacts from <out>/scene, generating them first when absent
// or stale (the stored scene key no longer matches the config).
SceneData ensure_scene(const ExperimentConfig& cfg, const std::string& out_dir);

// Cropped input frames for every roi_valid window, indexed by window id.
// Built on demand into <out>/frames/<repr>.
std::vector<EventFrame> ensure_frames(const ExperimentConfig& cfg, const std::string& out_dir,
                                      const SceneData& scene);

Network<float> make_coordinate_net(int in_c, int roi_size);
Network<float> make_heatmap_net(int in_c, int roi_size);

// Fake-quantization wiring: parameterized layers quantize their weights; the
// output quantizer sits on the layer itself, or on the relu directly after
// it when there is one (quantizing both sides of a relu wastes levels).
void attach_quantizers(Network<float>& net, Regime regime, bool first_layer_8bit);

struct TrainSummary {
  std::string weights_path;
  double final_val_pck = 0.0;
  std::vector<double> float_loss, qat_loss;       // per-epoch means
  std::vector<double> float_val_pck, qat_val_pck;
  bool trained = false;  // false when cached weights were reused
};

// Commands behind the CLI verbs. Each ensures its prerequisites (scene,
// frames, weights) instead of failing when a stage was not run manually.
void cmd_gen(const ExperimentConfig& cfg, const std::string& out_dir);
void cmd_frames(const ExperimentConfig& cfg, const std::string& out_dir);
TrainSummary cmd_train(const ExperimentConfig& cfg, const std::string& out_dir);
RunReport cmd_eval(const ExperimentConfig& cfg, const std::string& out_dir);
void cmd_bench(const ExperimentConfig& cfg, const std::string& out_dir);
void cmd_matrix(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace evpose
