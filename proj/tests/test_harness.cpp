#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "evpose/harness.hpp"
#include "evpose/nn_io.hpp"
#include "evpose/pnp.hpp"

using namespace evpose;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string tiny_config_text() {
  return R"({
    "name": "tiny",
    "seed": 11,
    "scene": {"trajectories": 3, "duration_s": 0.6},
    "representation": "e2f",
    "head": "coordinate",
    "train": {"float_epochs": 2, "qat_epochs": 1, "lr": 0.01, "batch": 8,
              "calibration_batches": 2},
    "eval": {"oracle": true, "oracle_sigma_px": 0.0}
  })";
}

fs::path fresh_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return json::parse(in);
}

}  // namespace

TEST_CASE("config defaults and enum names") {
  const ExperimentConfig cfg = parse_config("{}");
  CHECK(cfg.seed == 1);
  CHECK(cfg.scene.trajectories == 24);
  CHECK(cfg.scene.delta_t_us == 50000);
  CHECK(cfg.roi_size == 64);
  CHECK(cfg.heatmap_size == 16);
  CHECK(cfg.top_k == 8);
  CHECK(cfg.repr == ReprKind::E2F);
  CHECK(cfg.head == HeadKind::Heatmap);
  CHECK(cfg.regime == Regime::Float);

  for (ReprKind k : {ReprKind::E2F, ReprKind::Hist2D, ReprKind::LNES})
    CHECK(repr_from_string(to_string(k)) == k);
  for (HeadKind k : {HeadKind::Coordinate, HeadKind::Heatmap})
    CHECK(head_from_string(to_string(k)) == k);
  for (Regime r : {Regime::Float, Regime::W4A4, Regime::W8A8})
    CHECK(regime_from_string(to_string(r)) == r);
  CHECK(repr_channels(ReprKind::E2F) == 1);
  CHECK(repr_channels(ReprKind::Hist2D) == 2);
  CHECK(repr_channels(ReprKind::LNES) == 2);
}

TEST_CASE("config errors name the offending key") {
  CHECK_THROWS_AS(parse_config("not json"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"sede": 3})"), doctest::Contains("sede"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"scene": {"tilt": 1}})"), doctest::Contains("tilt"),
                       ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seed": -4})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seed": "one"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"representation": "voxel"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"roi_size": 60})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"roi_size": 64, "heatmap_size": 8})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"split": [0.5, 0.2, 0.2]})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"top_k": 3})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"top_k": 9})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"scene": {"trajectories": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"momentum": 1.0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"lr": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"eval": {"pck_fraction": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"scene": {"distance_m": [4.0, 2.0]}})"), ConfigError);
  CHECK_THROWS_AS(load_config("/definitely/not/here.json"), ConfigError);
}

TEST_CASE("roi and heatmap sizes other than the default work") {
  const ExperimentConfig cfg = parse_config(R"({"roi_size": 32})");
  CHECK(cfg.heatmap_size == 8);  // follows roi_size / 4 when unspecified
  CHECK_NOTHROW(parse_config(R"({"roi_size": 32, "heatmap_size": 8})"));
}

TEST_CASE("scene can come from a separate file") {
  const fs::path dir = fresh_dir("evpose_scene_file");
  const fs::path scene_path = dir / "scene.json";
  std::ofstream(scene_path) << R"({"trajectories": 5, "duration_s": 1.5})";

  json cfg_json;
  cfg_json["scene"] = scene_path.string();
  const ExperimentConfig from_file = parse_config(cfg_json.dump());
  CHECK(from_file.scene.trajectories == 5);
  CHECK(from_file.scene.duration_s == 1.5);

  const ExperimentConfig inline_cfg =
      parse_config(R"({"scene": {"trajectories": 5, "duration_s": 1.5}})");
  CHECK(config_hash(from_file) == config_hash(inline_cfg));

  CHECK_THROWS_AS(parse_config(R"({"scene": "/nope/missing.json"})"), ConfigError);
  std::ofstream(scene_path) << "{ broken";
  CHECK_THROWS_AS(parse_config(cfg_json.dump()), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("config hash is canonical and sensitive to content") {
  const std::string a = R"({"seed": 5, "name": "x"})";
  const std::string b = R"({"name": "x", "seed": 5})";
  CHECK(config_hash(parse_config(a)) == config_hash(parse_config(b)));
  CHECK(config_hash(parse_config(a)) != config_hash(parse_config(R"({"seed": 6, "name": "x"})")));
  CHECK(config_hash(parse_config(a)).size() == 16);

  // materialized defaults: an explicit default value hashes identically
  CHECK(config_hash(parse_config("{}")) == config_hash(parse_config(R"({"roi_size": 64})")));
}

TEST_CASE("derived seeds are stable, tag- and master-sensitive") {
  CHECK(derive_seed(1, "split") == derive_seed(1, "split"));
  CHECK(derive_seed(1, "split") != derive_seed(2, "split"));
  CHECK(derive_seed(1, "split") != derive_seed(1, "jitter"));
  CHECK(derive_seed(0, "a") != derive_seed(0, "b"));
}

TEST_CASE("generated scene artifacts are consistent and cached") {
  const fs::path out = fresh_dir("evpose_harness_scene");
  const ExperimentConfig cfg = parse_config(tiny_config_text());

  const SceneData scene = ensure_scene(cfg, out.string());
  CHECK(scene.total_events > 0);
  REQUIRE(!scene.truth.empty());

  // trajectory split partitions {0, 1, 2}
  std::vector<int> all;
  for (int t : scene.train_traj) all.push_back(t);
  for (int t : scene.val_traj) all.push_back(t);
  for (int t : scene.test_traj) all.push_back(t);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<int>{0, 1, 2});

  // truth records are globally ordered and cover every stream window
  for (std::size_t i = 0; i < scene.truth.size(); ++i) {
    CHECK(scene.truth[i].window == static_cast<int>(i));
    CHECK(scene.truth[i].keypoints.size() == 8);
  }

  const json meta = read_json(out / "scene" / "meta.json");
  CHECK(meta.at("seed").get<std::uint64_t>() == 11);
  CHECK(meta.contains("config_hash"));
  CHECK(meta.at("windows").get<int>() == static_cast<int>(scene.truth.size()));

  // a second ensure_scene must reuse the artifacts, not regenerate them
  const auto stamp = fs::last_write_time(out / "scene" / "truth.jsonl");
  const SceneData again = ensure_scene(cfg, out.string());
  CHECK(fs::last_write_time(out / "scene" / "truth.jsonl") == stamp);
  CHECK(again.truth.size() == scene.truth.size());

  // a different seed invalidates the cache
  ExperimentConfig reseeded = cfg;
  reseeded.seed = 12;
  const SceneData other = ensure_scene(reseeded, out.string());
  CHECK(fs::last_write_time(out / "scene" / "truth.jsonl") != stamp);
  CHECK(read_json(out / "scene" / "meta.json").at("seed").get<std::uint64_t>() == 12);
  (void)other;
  fs::remove_all(out);
}

TEST_CASE("frames are built per labeled window and cached") {
  const fs::path out = fresh_dir("evpose_harness_frames");
  const ExperimentConfig cfg = parse_config(tiny_config_text());
  const SceneData scene = ensure_scene(cfg, out.string());

  const std::vector<EventFrame> frames = ensure_frames(cfg, out.string(), scene);
  REQUIRE(frames.size() == scene.truth.size());
  for (const TruthRecord& tr : scene.truth) {
    if (!tr.roi_valid) continue;
    const EventFrame& f = frames[tr.window];
    CHECK(f.channels == 1);
    CHECK(f.height == cfg.roi_size);
    CHECK(f.width == cfg.roi_size);
  }

  const fs::path sample = out / "frames" / "e2f" / "w00000.efr";
  REQUIRE(fs::exists(sample));
  const auto stamp = fs::last_write_time(sample);
  const std::vector<EventFrame> cached = ensure_frames(cfg, out.string(), scene);
  CHECK(fs::last_write_time(sample) == stamp);
  CHECK(cached[scene.truth.front().window] == frames[scene.truth.front().window]);
  fs::remove_all(out);
}

TEST_CASE("oracle evaluation with zero noise recovers ground truth") {
  const fs::path out = fresh_dir("evpose_harness_oracle");
  const ExperimentConfig cfg = parse_config(tiny_config_text());
  const RunReport rep = cmd_eval(cfg, out.string());
  CHECK(rep.total > 0);
  CHECK(rep.rejected == 0);
  CHECK(rep.pck == doctest::Approx(1.0));
  CHECK(rep.mean_e_r_deg < 0.1);
  CHECK(rep.mean_e_t_norm < 1e-3);
  fs::remove_all(out);
}

TEST_CASE("eval artifacts carry provenance and reconcile with the report") {
  const fs::path out = fresh_dir("evpose_harness_report");
  ExperimentConfig cfg = parse_config(tiny_config_text());
  cfg.eval.oracle_sigma_px = 1.0;
  const RunReport rep = cmd_eval(cfg, out.string());

  fs::path eval_dir;
  for (const auto& e : fs::directory_iterator(out / "eval")) eval_dir = e.path();
  const json report = read_json(eval_dir / "report.json");
  CHECK(report.at("config_hash").get<std::string>() == config_hash(cfg));
  CHECK(report.at("seed").get<std::uint64_t>() == cfg.seed);
  CHECK(report.at("mode") == "oracle");
  CHECK(report.at("counts").at("total").get<int>() == rep.total);
  CHECK(report.at("pck").get<double>() == doctest::Approx(rep.pck));
  CHECK(report.at("means").at("e_p").get<double>() == rep.mean_e_p);
  CHECK(!report.contains("elapsed"));
  CHECK(fs::exists(eval_dir / "report.csv"));
  CHECK(fs::exists(eval_dir / "cdf.svg"));

  // identity between the combined metric and its parts survives aggregation
  CHECK(rep.mean_e_p == rep.mean_e_r_rad + rep.mean_e_t_norm);
  fs::remove_all(out);
}

TEST_CASE("stored keypoints re-solve to the exact reported poses") {
  const fs::path out = fresh_dir("evpose_harness_resolve");
  ExperimentConfig cfg = parse_config(tiny_config_text());
  cfg.eval.oracle_sigma_px = 2.0;  // noise so poses are non-trivial
  cmd_eval(cfg, out.string());

  const TargetModel model =
      cuboid_model(cfg.scene.cuboid.x(), cfg.scene.cuboid.y(), cfg.scene.cuboid.z());
  fs::path eval_dir;
  for (const auto& e : fs::directory_iterator(out / "eval")) eval_dir = e.path();
  std::ifstream in(eval_dir / "keypoints.jsonl");
  REQUIRE(in.good());
  std::string line;
  int checked = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    Correspondences corr;
    corr.camera = cfg.scene.camera;
    for (const json& p : rec.at("points")) {
      if (!p.at("valid").get<bool>()) continue;
      corr.points_3d.push_back(model.keypoints_3d[p.at("i").get<int>()]);
      corr.points_2d.emplace_back(p.at("u").get<double>(), p.at("v").get<double>());
    }
    const PoseEstimate re = solve(corr);
    const json& est = rec.at("est");
    CHECK(std::string(to_string(re.status)) == est.at("status").get<std::string>());
    CHECK(re.pose.q.w() == est.at("q").at(0).get<double>());
    CHECK(re.pose.q.x() == est.at("q").at(1).get<double>());
    CHECK(re.pose.t.x() == est.at("t").at(0).get<double>());
    CHECK(re.pose.t.y() == est.at("t").at(1).get<double>());
    CHECK(re.pose.t.z() == est.at("t").at(2).get<double>());
    if (est.contains("rmse"))
      CHECK(re.reprojection_rmse == est.at("rmse").get<double>());
    else
      CHECK(std::isinf(re.reprojection_rmse));
    ++checked;
  }
  CHECK(checked > 0);
  fs::remove_all(out);
}

TEST_CASE("training caches weights and reuses the float stage across regimes") {
  const fs::path out = fresh_dir("evpose_harness_train");
  ExperimentConfig cfg = parse_config(tiny_config_text());
  cfg.eval.oracle = false;

  const TrainSummary first = cmd_train(cfg, out.string());
  CHECK(first.trained);
  CHECK(!first.float_loss.empty());
  CHECK(fs::exists(first.weights_path));

  const TrainSummary again = cmd_train(cfg, out.string());
  CHECK(!again.trained);
  CHECK(again.weights_path == first.weights_path);

  // quantized run on top of the cached float weights
  ExperimentConfig quant = cfg;
  quant.regime = Regime::W4A4;
  const TrainSummary qat = cmd_train(quant, out.string());
  CHECK(qat.trained);
  CHECK(qat.float_loss.empty());  // float stage came from the cache
  CHECK(!qat.qat_loss.empty());
  CHECK(qat.weights_path != first.weights_path);

  // the quantized checkpoint records its calibrated quantizers
  const Network<float> net = load_weights<float>(qat.weights_path);
  bool any_quant = false;
  for (const auto& l : net.layers)
    if (l.quant) {
      any_quant = true;
      if (l.quant->quantize_output) CHECK(l.quant->calibrated);
      CHECK(l.quant->weight_bits == 4);
    }
  CHECK(any_quant);

  // evaluation through the trained network writes a full report
  const RunReport rep = cmd_eval(quant, out.string());
  CHECK(rep.total > 0);
  fs::remove_all(out);
}

TEST_CASE("network evaluation and training split never share trajectories") {
  const fs::path out = fresh_dir("evpose_harness_split");
  const ExperimentConfig cfg = parse_config(tiny_config_text());
  const SceneData scene = ensure_scene(cfg, out.string());
  const std::vector<int> train = scene.split_windows(scene.train_traj);
  const std::vector<int> test = scene.split_windows(scene.test_traj);
  REQUIRE(!train.empty());
  REQUIRE(!test.empty());
  for (int w : train)
    for (int v : test) CHECK(w != v);
  for (int w : train) CHECK(scene.truth[w].roi_valid);
  fs::remove_all(out);
}

#ifdef EVPOSE_BIN
TEST_CASE("cli exit codes distinguish config, data, and usage errors") {
  const fs::path dir = fresh_dir("evpose_cli_codes");
  const fs::path good = dir / "good.json";
  const fs::path bad = dir / "bad.json";
  std::ofstream(good) << tiny_config_text();
  std::ofstream(bad) << R"({"roi_size": 7})";

  const auto run = [&](const std::string& args) {
    const std::string cmd =
        std::string(EVPOSE_BIN) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("gen --config " + bad.string() + " --out " + (dir / "o").string()) == 2);
  CHECK(run("gen --config " + (dir / "missing.json").string()) == 2);
  CHECK(run("frames") == 2);  // missing required --config
  CHECK(run("gen --config " + good.string() + " --out " + (dir / "o").string()) == 0);
  CHECK(run("eval --config " + good.string() + " --out " + (dir / "o").string()) == 0);
  fs::remove_all(dir);
}
#endif
