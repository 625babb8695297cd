#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "keymark/geometry/image_io.hpp"
#include "keymark/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace keymark;

namespace {

enum Exit { ok = 0, other = 1, usage = 2, reasoning = 3, execution = 4, io = 5 };

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path default_dir(const std::string& kind, const fs::path& scene) {
  return fs::path("runs") / (timestamp() + "-" + kind + "-" + scene.stem().string());
}

std::vector<std::string> split_names(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

int report(const pipeline::TrajectoryLog& log) {
  for (const auto& r : log.subtasks) {
    std::cout << "subtask " << r.index << " [" << r.subtask.object_grasped << " -> " << r.subtask.object_unattached
              << "]: " << (r.success ? "success" : std::string(pipeline::to_string(r.failure)) + " failure")
              << " (" << r.queries.size() << " queries, " << r.actions << " actions)";
    if (!r.failure_reason.empty()) std::cout << ": " << r.failure_reason;
    std::cout << "\n";
  }
  std::cout << (log.success ? "task succeeded" : "task failed (" + std::string(pipeline::to_string(log.failure)) + ")");
  if (!log.success && !log.failure_reason.empty()) std::cout << ": " << log.failure_reason;
  std::cout << "\n";
  if (!log.run_dir.empty()) std::cout << "run directory: " << log.run_dir.string() << "\n";
  switch (log.failure) {
    case pipeline::FailureKind::none:
      return ok;
    case pipeline::FailureKind::reasoning:
      return reasoning;
    case pipeline::FailureKind::execution:
      return execution;
  }
  return other;
}

struct RunOptions {
  pipeline::RunConfig cfg;
  std::string vlm{"oracle"};
  std::string out;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--scene", o.cfg.scene, "scene JSON")->required();
  cmd->add_option("--task", o.cfg.task, "instruction; defaults to the scene's task");
  cmd->add_option("--variation", o.cfg.variation, "pose jitter draw, 0 for the scene as written");
  cmd->add_option("--vlm", o.vlm, "oracle or wire")->check(CLI::IsMember({"oracle", "wire"}));
  cmd->add_option("--oracle", o.cfg.oracle_script, "oracle script JSON");
  cmd->add_option("--vlm-config", o.cfg.vlm_config, "wire client config JSON");
  cmd->add_option("--examples", o.cfg.example_store, "in-context example store (JSONL)");
  cmd->add_option("--family", o.cfg.task_family, "task family for example retrieval");
  cmd->add_option("--max-examples", o.cfg.max_examples, "in-context examples per prompt");
  cmd->add_option("--keypoints", o.cfg.keypoints_per_object, "candidate keypoints per object");
  cmd->add_option("--max-retries", o.cfg.max_retries, "re-queries after an invalid response");
  cmd->add_option("--seed", o.cfg.seed, "seed for waypoint and grasp sampling");
  cmd->add_option("--out", o.out, "run directory (default: runs/<timestamp>-...)");
}

void finish_run_options(RunOptions& o, const std::string& kind) {
  o.cfg.vlm = o.vlm == "wire" ? pipeline::VlmMode::wire : pipeline::VlmMode::oracle;
  o.cfg.out_dir = o.out.empty() ? default_dir(kind, o.cfg.scene) : fs::path(o.out);
}

int annotate(const fs::path& scene_path, int variation, const std::string& objects, std::size_t k, fs::path out) {
  const sim::SceneSpec scene = sim::jitter_scene(sim::load_scene(scene_path), variation);
  const sim::Observation obs = sim::render(sim::spawn(scene), scene);
  const auto names = split_names(objects);
  if (names.empty() || names.size() > 2) throw ConfigError("--objects takes one or two names: grasped[,unattached]");
  const pipeline::SimGroundTruth seg;
  std::vector<geometry::BinaryMask> masks;
  masks.reserve(names.size());
  std::vector<marks::MarkedObject> marked;
  for (std::size_t i = 0; i < names.size(); ++i) {
    masks.push_back(seg.segment(names[i], obs));
    marked.push_back({names[i], &masks.back(), i == 0 ? marks::ObjectRole::grasped : marks::ObjectRole::unattached});
  }
  if (out.empty()) out = default_dir("annotate", scene_path);
  fs::create_directories(out);
  const auto markset = marks::build_markset(marked, k, marks::build_grid(scene.width, scene.height), "annotated");
  const auto annotated = marks::render_marks(obs.rgb, markset);
  geometry::write_png(out / "annotated.png", annotated.pixels);
  std::ofstream(out / "markset.json") << nlohmann::json(markset).dump(2) << "\n";
  std::cout << "wrote " << (out / "annotated.png").string() << " and " << (out / "markset.json").string() << "\n";
  return ok;
}

int replay(const fs::path& dir) {
  const bool episode = fs::exists(dir / "events.jsonl");
  const sim::SimState got = episode ? pipeline::replay_episode(dir) : [&] {
    const auto run = pipeline::load_run(dir);
    return pipeline::replay(run.scene, run.events);
  }();
  const nlohmann::json expected_json = [&] {
    std::ifstream in(dir / "final_state.json");
    if (!in) throw IoError("cannot open " + (dir / "final_state.json").string());
    return nlohmann::json::parse(in);
  }();
  if (got == sim::state_from_json(expected_json)) {
    std::cout << "replay matches the logged final state\n";
    return ok;
  }
  std::cout << "replay diverged from the logged final state\n" << sim::to_json(got).dump(2) << "\n";
  return execution;
}

// Run directories are those holding a log.json, given directly or one level down.
std::vector<fs::path> collect_runs(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const auto& p : inputs) {
    if (fs::exists(p / "log.json")) {
      out.push_back(p);
      continue;
    }
    if (!fs::is_directory(p)) throw IoError("not a run directory: " + p.string());
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(p))
      if (fs::exists(e.path() / "log.json")) children.push_back(e.path());
    std::sort(children.begin(), children.end());
    out.insert(out.end(), children.begin(), children.end());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keypoint affordance manipulation pipeline"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run_cmd = app.add_subcommand("run", "decompose, annotate, query and execute a task in the simulator");
  add_run_options(run_cmd, run_opts);

  RunOptions ablate_opts;
  bool no_hierarchy = false, no_description = false, no_cot = false;
  auto* ablate_cmd = app.add_subcommand("ablate", "run with exactly one prompt ablation");
  add_run_options(ablate_cmd, ablate_opts);
  ablate_cmd->add_flag("--no-hierarchy", no_hierarchy, "skip task decomposition, one merged query");
  ablate_cmd->add_flag("--no-description", no_description, "drop the keypoint and waypoint definitions");
  ablate_cmd->add_flag("--no-cot", no_cot, "drop the step-by-step instruction");

  fs::path annotate_scene, annotate_out;
  int annotate_variation = 0;
  std::string annotate_objects;
  std::size_t annotate_k = 8;
  auto* annotate_cmd = app.add_subcommand("annotate", "write the annotated observation and its mark set");
  annotate_cmd->add_option("--scene", annotate_scene, "scene JSON")->required();
  annotate_cmd->add_option("--objects", annotate_objects, "grasped[,unattached] object names")->required();
  annotate_cmd->add_option("--variation", annotate_variation, "pose jitter draw");
  annotate_cmd->add_option("--keypoints", annotate_k, "candidate keypoints per object");
  annotate_cmd->add_option("--out", annotate_out, "output directory");

  fs::path replay_dir;
  auto* replay_cmd = app.add_subcommand("replay", "re-execute a logged run or exported episode and compare states");
  replay_cmd->add_option("dir", replay_dir, "run or episode directory")->required();

  std::vector<fs::path> export_inputs;
  fs::path export_out;
  pipeline::ExportOptions export_opts;
  auto* export_cmd = app.add_subcommand("export-dataset", "replay runs into a demonstration dataset");
  export_cmd->add_option("runs", export_inputs, "run directories, or directories containing them")->required();
  export_cmd->add_option("--out", export_out, "dataset directory")->required();
  export_cmd->add_flag("--include-failed", export_opts.include_failed, "also export failed runs");
  export_cmd->add_option("--min-per-task", export_opts.min_per_task, "warn below this many episodes per task");

  fs::path harvest_run, harvest_store;
  auto* harvest_cmd = app.add_subcommand("harvest", "append a run's successful subtasks to an example store");
  harvest_cmd->add_option("run", harvest_run, "run directory")->required();
  harvest_cmd->add_option("--store", harvest_store, "example store (JSONL)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : usage;
  }

  try {
    if (*run_cmd) {
      finish_run_options(run_opts, "run");
      return report(pipeline::run_task(run_opts.cfg));
    }
    if (*ablate_cmd) {
      finish_run_options(ablate_opts, "ablate");
      ablate_opts.cfg.ablation = {no_hierarchy, no_description, no_cot};
      return report(pipeline::run_ablation(ablate_opts.cfg));
    }
    if (*annotate_cmd) return annotate(annotate_scene, annotate_variation, annotate_objects, annotate_k, annotate_out);
    if (*replay_cmd) return replay(replay_dir);
    if (*export_cmd) {
      std::vector<pipeline::RunRecord> runs;
      for (const auto& dir : collect_runs(export_inputs)) runs.push_back(pipeline::load_run(dir));
      const auto manifest = pipeline::export_dataset(runs, export_out, export_opts);
      std::cout << pipeline::to_json(manifest).at("counts").dump() << " episodes written to " << export_out.string()
                << "\n";
      for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
      return ok;
    }
    if (*harvest_cmd) {
      const auto n = pipeline::harvest_run_dir(harvest_run, prompts::ExampleStore(harvest_store));
      std::cout << n << " examples appended to " << harvest_store.string() << "\n";
      return ok;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return io;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return io;
  } catch (const ExecutionFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return execution;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return other;
  }
  return other;
}
