// Command-line front end for the traffic-scene generation pipeline:
// synthetic data generation, training, sampling, evaluation (with the
// ablation harness) and the gradient-check suite.
//
// Exit codes: 0 success, 1 usage, 2 data/config error, 3 numeric divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tsdit/grad_suite.hpp"
#include "tsdit/metrics.hpp"
#include "tsdit/model.hpp"
#include "tsdit/run_config.hpp"
#include "tsdit/svg.hpp"
#include "tsdit/training.hpp"

namespace fs = std::filesystem;
using namespace tsdit;

namespace {

std::vector<Scene> load_scene_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw DataError("scene directory does not exist: " + dir);
  }
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no scene files (*.json) in " + dir);
  std::vector<Scene> scenes;
  scenes.reserve(files.size());
  for (const std::string& f : files) scenes.push_back(load_scene(f));
  return scenes;
}

std::string scene_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06d.json", index);
  return buf;
}

nlohmann::json log_record_json(const TrainLogRecord& rec) {
  nlohmann::json j;
  j["step"] = rec.step;
  j["total"] = rec.losses.total;
  j["diffusion"] = rec.losses.diffusion;
  j["w_ade"] = rec.losses.w_ade;
  j["fde"] = rec.losses.fde;
  j["huber_virtual"] = rec.losses.huber_virtual;
  return j;
}

void cmd_gen_data(const std::string& config_path, int count_override,
                  const std::string& out_override, int64_t seed_override) {
  RunConfig cfg = load_run_config(config_path);
  const uint64_t data_seed =
      seed_override >= 0 ? static_cast<uint64_t>(seed_override) : cfg.seeds.data;
  const int count = count_override > 0 ? count_override : cfg.scene_count;
  const std::string out_dir = out_override.empty() ? cfg.paths.data_dir : out_override;
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    Scene scene = generate_synthetic_scene(mix_seed(data_seed, static_cast<uint64_t>(i)),
                                           cfg.scenario);
    save_scene(scene, (fs::path(out_dir) / scene_file_name(i)).string());
  }
  std::cout << "wrote " << count << " scenes to " << out_dir << "\n";
}

void run_training(const RunConfig& cfg, const std::vector<Scene>& scenes,
                  const std::string& checkpoint_dir, ParameterStore& store, TsditModel& model) {
  fs::create_directories(checkpoint_dir);
  const std::string log_path = (fs::path(checkpoint_dir) / "train_log.jsonl").string();
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write training log: " + log_path);
  DiffusionSchedule sched = cfg.schedule();
  auto checkpoint_hook = [&](int step) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "checkpoint_%06d.json", step);
    store.save_checkpoint((fs::path(checkpoint_dir) / buf).string());
  };
  auto on_record = [&](const TrainLogRecord& rec) { log << log_record_json(rec).dump() << "\n"; };
  try {
    train_loop(model, store, scenes, sched, cfg.loss, cfg.train, checkpoint_hook, on_record);
  } catch (const DivergenceError& e) {
    nlohmann::json abort;
    abort["step"] = e.step();
    abort["error"] = e.term();
    log << abort.dump() << "\n";
    throw;
  }
  store.save_checkpoint((fs::path(checkpoint_dir) / "checkpoint_final.json").string());
}

void cmd_train(const std::string& config_path, const std::string& out_override,
               int64_t seed_override) {
  RunConfig cfg = load_run_config(config_path);
  if (seed_override >= 0) {
    cfg.seeds.train = static_cast<uint64_t>(seed_override);
    cfg.train.seed = cfg.seeds.train;
  }
  const std::string ckpt_dir =
      out_override.empty() ? cfg.paths.checkpoint_dir : out_override;
  std::vector<Scene> scenes = load_scene_dir(cfg.paths.data_dir);
  ParameterStore store;
  Rng init_rng(cfg.seeds.init);
  TsditModel model(store, cfg.model_config(), init_rng);
  run_training(cfg, scenes, ckpt_dir, store, model);
  std::cout << "trained " << cfg.train.steps << " steps; checkpoint in " << ckpt_dir << "\n";
}

void cmd_sample(const std::string& config_path, const std::string& checkpoint_path,
                const std::string& scene_path, int n, int64_t seed_override,
                const std::string& out_override, bool write_svg) {
  RunConfig cfg = load_run_config(config_path);
  const uint64_t sample_seed =
      seed_override >= 0 ? static_cast<uint64_t>(seed_override) : cfg.seeds.sample;
  const std::string out_dir = out_override.empty() ? cfg.paths.report_dir : out_override;
  if (n < 1) throw ConfigError("sample count must be >= 1");

  Scene scene = load_scene(scene_path);
  ModelInputs inputs = preprocess_world_centric(scene);
  ParameterStore store;
  store.load_checkpoint(checkpoint_path);
  Rng init_rng(cfg.seeds.init);
  TsditModel model(store, cfg.model_config(), init_rng);
  DiffusionSchedule sched = cfg.schedule();

  fs::create_directories(out_dir);
  nlohmann::json samples = nlohmann::json::array();
  std::vector<TrajectoryBundle> bundles;
  for (int i = 0; i < n; ++i) {
    const uint64_t seed_i = mix_seed(sample_seed, static_cast<uint64_t>(i));
    TrajectoryBundle bundle = model.sample_and_decode(inputs, sched, seed_i);
    samples.push_back(bundle_to_json(bundle, inputs, seed_i));
    bundles.push_back(std::move(bundle));
  }
  const std::string json_path = (fs::path(out_dir) / "samples.json").string();
  std::ofstream out(json_path);
  if (!out) throw IoError("cannot write samples: " + json_path);
  out << samples.dump(1) << "\n";
  if (write_svg) {
    save_svg(render_scene_svg(scene, inputs, bundles),
             (fs::path(out_dir) / "samples.svg").string());
  }
  std::cout << "wrote " << n << " samples to " << out_dir << "\n";
}

struct AblationRow {
  std::string name;
  bool other_agent_former;
  bool hd_map_former;
  bool decoder_self_attention;
};

void cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
              const std::string& data_override, const std::string& out_override,
              int64_t seed_override, bool ablate) {
  RunConfig cfg = load_run_config(config_path);
  if (seed_override >= 0) cfg.seeds.sample = static_cast<uint64_t>(seed_override);
  const std::string data_dir = data_override.empty() ? cfg.paths.data_dir : data_override;
  const std::string report_dir = out_override.empty() ? cfg.paths.report_dir : out_override;
  std::vector<Scene> scenes = load_scene_dir(data_dir);
  fs::create_directories(report_dir);
  DiffusionSchedule sched = cfg.schedule();

  if (!ablate) {
    if (checkpoint_path.empty()) {
      throw ConfigError("eval needs --checkpoint (or --ablate to train each variant)");
    }
    ParameterStore store;
    store.load_checkpoint(checkpoint_path);
    Rng init_rng(cfg.seeds.init);
    TsditModel model(store, cfg.model_config(), init_rng);
    SampleDecodeFn sampler = [&](const ModelInputs& in, uint64_t seed) {
      return model.sample_and_decode(in, sched, seed);
    };
    EvalReport report = evaluate(sampler, scenes, cfg.seeds.sample, cfg.metrics);
    save_report(report, (fs::path(report_dir) / "report.json").string(),
                (fs::path(report_dir) / "report.csv").string());
    std::cout << report_to_csv(report);
    return;
  }

  // Table-2-style harness: train each architecture variant from scratch with
  // identical seeds and data, then evaluate it.
  const AblationRow rows[] = {
      {"full", true, true, true},
      {"no_other_agent_former", false, true, true},
      {"no_hd_map_former", true, false, true},
      {"no_decoder_self_attention", true, true, false},
  };
  for (const AblationRow& row : rows) {
    RunConfig row_cfg = cfg;
    row_cfg.encoder.enable_other_agent_former = row.other_agent_former;
    row_cfg.encoder.enable_hd_map_former = row.hd_map_former;
    row_cfg.decoder.enable_self_attention = row.decoder_self_attention;
    ParameterStore store;
    Rng init_rng(row_cfg.seeds.init);
    TsditModel model(store, row_cfg.model_config(), init_rng);
    const std::string row_ckpt_dir = (fs::path(report_dir) / ("train_" + row.name)).string();
    run_training(row_cfg, scenes, row_ckpt_dir, store, model);
    DiffusionSchedule row_sched = row_cfg.schedule();
    SampleDecodeFn sampler = [&](const ModelInputs& in, uint64_t seed) {
      return model.sample_and_decode(in, row_sched, seed);
    };
    EvalReport report = evaluate(sampler, scenes, row_cfg.seeds.sample, row_cfg.metrics);
    save_report(report, (fs::path(report_dir) / ("report_" + row.name + ".json")).string(),
                (fs::path(report_dir) / ("report_" + row.name + ".csv")).string());
    std::cout << row.name << ": " << report_to_csv(report);
  }
}

int cmd_grad_check(int64_t seed_override, double threshold) {
  const uint64_t seed = seed_override >= 0 ? static_cast<uint64_t>(seed_override) : 11u;
  std::vector<GradSuiteRow> rows = run_grad_suite(seed, threshold);
  bool all_pass = true;
  std::printf("%-24s %14s %12s %s\n", "block", "max_rel_error", "threshold", "status");
  for (const GradSuiteRow& row : rows) {
    std::printf("%-24s %14.3e %12.1e %s\n", row.block.c_str(), row.max_rel_error, row.threshold,
                row.pass ? "pass" : "FAIL");
    all_pass = all_pass && row.pass;
  }
  if (!all_pass) {
    std::fprintf(stderr, "gradient check failed\n");
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TSDiT traffic-scene generation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int64_t seed = -1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file (JSON)")->required();
    cmd->add_option("--seed", seed, "override the command's seed");
    cmd->add_option("--out", out_dir, "override the output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "generate synthetic scene files");
  int gen_count = 0;
  add_common(gen);
  gen->add_option("--count", gen_count, "number of scenes (default: config scene_count)");

  auto* train = app.add_subcommand("train", "train a model on a scene directory");
  add_common(train);

  auto* sample = app.add_subcommand("sample", "sample trajectories for one scene");
  std::string sample_checkpoint, sample_scene;
  int sample_n = 1;
  bool sample_svg = false;
  add_common(sample);
  sample->add_option("--checkpoint", sample_checkpoint, "model checkpoint file")->required();
  sample->add_option("--scene", sample_scene, "scene JSON file")->required();
  sample->add_option("--n", sample_n, "number of samples");
  sample->add_flag("--svg", sample_svg, "also render an SVG plot");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a scene directory");
  std::string eval_checkpoint, eval_data;
  bool eval_ablate = false;
  add_common(eval);
  eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint file");
  eval->add_option("--data", eval_data, "scene directory (default: config data_dir)");
  eval->add_flag("--ablate", eval_ablate,
                 "train and evaluate the four architecture-ablation variants");

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of every block");
  double grad_threshold = 1e-4;
  grad->add_option("--seed", seed, "override the suite seed");
  grad->add_option("--threshold", grad_threshold, "max relative error to accept");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      cmd_gen_data(config_path, gen_count, out_dir, seed);
    } else if (train->parsed()) {
      cmd_train(config_path, out_dir, seed);
    } else if (sample->parsed()) {
      cmd_sample(config_path, sample_checkpoint, sample_scene, sample_n, seed, out_dir,
                 sample_svg);
    } else if (eval->parsed()) {
      cmd_eval(config_path, eval_checkpoint, eval_data, out_dir, seed, eval_ablate);
    } else if (grad->parsed()) {
      return cmd_grad_check(seed, grad_threshold);
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
