#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "evpose/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"event-camera pose estimation on synthetic scenes"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  CLI::Option* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "output directory (default: out)");

  app.add_subcommand("gen", "generate event streams and ground truth");
  app.add_subcommand("frames", "build input frames for every labeled window");
  app.add_subcommand("train", "train the configured network (float, then QAT if quantized)");
  app.add_subcommand("eval", "evaluate on the test split and write a report");
  app.add_subcommand("bench", "time representation building and forward passes");
  app.add_subcommand("matrix", "run the full representation x regime x top-k grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    evpose::ExperimentConfig cfg = evpose::load_config(config_path);
    if (seed_opt->count() > 0) cfg.seed = seed;
    const std::string verb = app.get_subcommands().front()->get_name();
    if (verb == "gen")
      evpose::cmd_gen(cfg, out_dir);
    else if (verb == "frames")
      evpose::cmd_frames(cfg, out_dir);
    else if (verb == "train")
      evpose::cmd_train(cfg, out_dir);
    else if (verb == "eval")
      evpose::cmd_eval(cfg, out_dir);
    else if (verb == "bench")
      evpose::cmd_bench(cfg, out_dir);
    else
      evpose::cmd_matrix(cfg, out_dir);
  } catch (const evpose::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const evpose::TrainingError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 4;
  } catch (const evpose::Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
