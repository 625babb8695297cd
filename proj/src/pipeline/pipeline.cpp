#include "keymark/pipeline/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "keymark/geometry/image_io.hpp"
#include "keymark/vlm/oracle.hpp"
#include "keymark/vlm/wire.hpp"

namespace keymark::pipeline {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedJson(path.string() + ": " + e.what());
  }
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

nlohmann::json queries_json(const std::vector<QueryRecord>& queries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& q : queries) j.push_back({{"request", q.request}, {"response", q.response}, {"error", q.error}});
  return j;
}

// Writes the artifacts of one run into its directory, remembering every file for the manifest.
class RunWriter {
 public:
  explicit RunWriter(fs::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) make_dirs(dir_);
  }
  bool enabled() const { return !dir_.empty(); }

  void json(const std::string& rel, const nlohmann::json& j) {
    if (!enabled()) return;
    prepare(rel);
    write_json(dir_ / rel, j);
  }
  void text(const std::string& rel, const std::string& t) {
    if (!enabled()) return;
    prepare(rel);
    write_text(dir_ / rel, t);
  }
  void png(const std::string& rel, const geometry::RgbImage& image) {
    if (!enabled()) return;
    prepare(rel);
    geometry::write_png(dir_ / rel, image);
  }
  void events(const std::string& rel, const std::vector<ActionEvent>& ev) {
    if (!enabled()) return;
    prepare(rel);
    write_events(dir_ / rel, ev);
  }
  void manifest() {
    if (!enabled()) return;
    std::sort(files_.begin(), files_.end());
    write_json(dir_ / "manifest.json", {{"files", files_}});
  }

 private:
  void prepare(const std::string& rel) {
    make_dirs((dir_ / rel).parent_path());
    if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
  }

  fs::path dir_;
  std::vector<std::string> files_;
};

// Sends the conversation, feeding each rejection back as a follow-up turn
// until a response parses or the retries run out. Returns the accepted text.
template <typename Accept>
std::optional<std::string> query_with_retries(vlm::VlmClient& client, vlm::Conversation conv, int max_retries,
                                              std::vector<QueryRecord>& records, Accept accept) {
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    QueryRecord rec;
    rec.request = vlm::transcript_json(conv);
    rec.response = client.query(conv);
    try {
      accept(rec.response);
      records.push_back(std::move(rec));
      return records.back().response;
    } catch (const Error& e) {
      rec.error = e.what();
    }
    conv.push_back({vlm::Role::assistant, {rec.response}});
    conv.push_back({vlm::Role::user,
                    {"The previous response could not be used: " + rec.error +
                     "\nPlease answer again, following the required output format."}});
    records.push_back(std::move(rec));
  }
  return std::nullopt;
}

std::optional<std::string> match_object(const std::string& name, const std::vector<std::string>& known) {
  for (const auto& k : known)
    if (lower(k) == lower(name)) return k;
  return std::nullopt;
}

struct Context {
  const RunConfig& cfg;
  vlm::VlmClient& client;
  const SegmentationProvider& segmentation;
  RunWriter& writer;
  TrajectoryLog& log;
  sim::SimState state;
  std::vector<prompts::InContextExample> examples;
};

void fail(SubtaskRecord& rec, FailureKind kind, std::string reason) {
  rec.success = false;
  rec.failure = kind;
  rec.failure_reason = std::move(reason);
}

// Lift, plan, execute and judge an accepted affordance. Motion and simulator
// errors are execution failures.
void execute(Context& ctx, SubtaskRecord& rec, const sim::Observation& obs, const geometry::BinaryMask* grasped_mask,
             const std::vector<sim::SuccessPredicate>& predicates, const std::string& dir) {
  const auto& scene = ctx.log.scene;
  const std::uint64_t seed = mix(ctx.cfg.seed, rec.index);
  try {
    const motion::AffordanceInstance instance =
        motion::lift_affordance(*rec.response, *rec.markset, obs.depth, scene.camera, seed, ctx.cfg.lift);
    rec.instance = motion::to_json(instance);
    std::optional<motion::GraspPose> grasp;
    if (instance.grasp_point) {
      geometry::GraspSamplerConfig sampler;
      sampler.max_aperture = scene.max_aperture;
      grasp = motion::plan_grasp_phase(instance, obs.depth, *grasped_mask, scene.camera, seed, sampler);
    }
    const motion::ManipulationPlan manipulation = motion::plan_manipulation_phase(instance);
    const motion::GripperPose start{ctx.state.gripper.position, ctx.state.gripper.yaw};
    const motion::MotionPlan plan =
        motion::compile_plan(instance, manipulation, grasp, start, !ctx.state.gripper.closed, ctx.cfg.motion);
    rec.plan = motion::to_json(plan);
    const motion::ActionStream stream = motion::interpolate(plan, ctx.cfg.motion);
    for (const auto& phase : stream.phases) {
      ctx.state = sim::begin_stage(ctx.state, phase.tool_offset);
      ctx.log.events.push_back({ActionEvent::Type::stage, phase.tool_offset, {}});
      for (const auto& a : phase.actions) {
        ctx.state = sim::step(ctx.state, a, scene);
        ctx.log.events.push_back({ActionEvent::Type::action, motion::Point3::Zero(), a});
        ++rec.actions;
      }
    }
  } catch (const Error& e) {
    fail(rec, FailureKind::execution, e.what());
  }
  ctx.writer.json(dir + "/instance.json", rec.instance);
  ctx.writer.json(dir + "/plan.json", rec.plan);
  if (rec.failure != FailureKind::none) return;

  const sim::SuccessReport report = sim::check_success(ctx.state, scene, predicates);
  rec.outcomes = report.outcomes;
  if (report.success) {
    rec.success = true;
    return;
  }
  std::string reason = "unmet:";
  for (const auto& o : report.outcomes)
    if (!o.satisfied) reason += " " + o.description + ";";
  fail(rec, FailureKind::execution, reason);
}

geometry::BinaryMask segment_or_throw(const Context& ctx, const std::string& name, const sim::Observation& obs) {
  geometry::BinaryMask m = ctx.segmentation.segment(name, obs);
  if (geometry::count_foreground(m) == 0) throw EmptyMask("\"" + name + "\" is not visible");
  return m;
}

SubtaskRecord run_subtask(Context& ctx, std::size_t k, const prompts::SubtaskSpec& subtask) {
  SubtaskRecord rec;
  rec.index = k;
  rec.subtask = subtask;
  const std::string dir = "subtask_" + std::to_string(k);
  const auto& scene = ctx.log.scene;

  ctx.state = sim::reset_to_neutral(ctx.state, scene);
  ctx.log.events.push_back({ActionEvent::Type::reset, motion::Point3::Zero(), {}});
  const sim::Observation obs = sim::render(ctx.state, scene);
  ctx.writer.png(dir + "/observation.png", obs.rgb);

  geometry::BinaryMask grasped_mask;
  geometry::BinaryMask unattached_mask;
  try {
    if (!subtask.object_grasped.empty()) grasped_mask = segment_or_throw(ctx, subtask.object_grasped, obs);
    if (!subtask.object_unattached.empty()) unattached_mask = segment_or_throw(ctx, subtask.object_unattached, obs);
  } catch (const Error& e) {
    fail(rec, FailureKind::execution, e.what());
    return rec;
  }
  std::vector<marks::MarkedObject> marked;
  if (!subtask.object_grasped.empty()) marked.push_back({subtask.object_grasped, &grasped_mask, marks::ObjectRole::grasped});
  if (!subtask.object_unattached.empty()) {
    marked.push_back({subtask.object_unattached, &unattached_mask, marks::ObjectRole::unattached});
  }
  const auto grid = marks::build_grid(scene.width, scene.height, ctx.cfg.grid_rows, ctx.cfg.grid_cols);
  const marks::MarkSet markset = marks::build_markset(marked, ctx.cfg.keypoints_per_object, grid, dir);
  const marks::AnnotatedImage annotated = marks::render_marks(obs.rgb, markset);
  rec.markset = markset;
  rec.annotated = std::make_shared<const geometry::RgbImage>(annotated.pixels);
  rec.annotated_image = ctx.writer.enabled() ? dir + "/annotated.png" : "";
  ctx.writer.png(dir + "/annotated.png", annotated.pixels);
  ctx.writer.json(dir + "/markset.json", markset);

  vlm::ImagePart part{dir + "/annotated.png", rec.annotated, markset};
  rec.request_text = prompts::subtask_json(subtask);
  const vlm::Conversation conv = prompts::build_low_level_prompt(subtask, part, ctx.examples, ctx.cfg.ablation);
  const auto accepted = query_with_retries(ctx.client, conv, ctx.cfg.max_retries, rec.queries, [&](const std::string& text) {
    rec.response = prompts::parse_low_level_response(text, markset);
  });
  ctx.writer.json(dir + "/queries.json", queries_json(rec.queries));
  for (std::size_t i = 0; i < rec.queries.size(); ++i) {
    ctx.writer.text(dir + "/response_" + std::to_string(i) + ".txt", rec.queries[i].response);
  }
  if (!accepted) {
    rec.response.reset();
    fail(rec, FailureKind::reasoning, "no valid response after " + std::to_string(rec.queries.size()) +
                                          " attempts: " + rec.queries.back().error);
    return rec;
  }
  rec.accepted_response = *accepted;

  const std::vector<sim::SuccessPredicate> none;
  const auto& predicates = k < scene.stages.size() ? scene.stages[k] : none;
  execute(ctx, rec, obs, subtask.object_grasped.empty() ? nullptr : &grasped_mask, predicates, dir);
  return rec;
}

// Objects named by a plan must exist; the message lists the valid names so a retry can fix it.
void require_known(const std::string& name, const std::vector<std::string>& known) {
  if (name.empty() || match_object(name, known)) return;
  std::string msg = "unknown object \"" + name + "\"; the scene contains [";
  for (std::size_t i = 0; i < known.size(); ++i) msg += (i ? ", " : "") + known[i];
  throw InvalidOption("object", msg + "]");
}

prompts::SubtaskSpec canonical_names(prompts::SubtaskSpec s, const std::vector<std::string>& known) {
  if (!s.object_grasped.empty()) s.object_grasped = *match_object(s.object_grasped, known);
  if (!s.object_unattached.empty()) s.object_unattached = *match_object(s.object_unattached, known);
  return s;
}

struct Prepared {
  sim::SceneSpec scene;
  std::string instruction;
  std::string family;
};

Prepared prepare(const RunConfig& cfg) {
  cfg.validate();
  Prepared p;
  p.scene = sim::jitter_scene(sim::load_scene(cfg.scene), cfg.variation);
  p.instruction = cfg.task.empty() ? p.scene.task : cfg.task;
  if (p.instruction.empty()) throw ConfigError("no task instruction given and the scene has none");
  p.family = cfg.task_family.empty() ? p.scene.family : cfg.task_family;
  return p;
}

nlohmann::json config_json(const RunConfig& cfg) {
  return {{"scene", cfg.scene.string()},
          {"variation", cfg.variation},
          {"task", cfg.task},
          {"vlm", cfg.vlm == VlmMode::oracle ? "oracle" : "wire"},
          {"oracle_script", cfg.oracle_script.string()},
          {"ablation",
           {{"disable_hierarchy", cfg.ablation.disable_hierarchy},
            {"disable_point_description", cfg.ablation.disable_point_description},
            {"disable_cot", cfg.ablation.disable_cot}}},
          {"example_store", cfg.example_store.string()},
          {"task_family", cfg.task_family},
          {"max_examples", cfg.max_examples},
          {"keypoints_per_object", cfg.keypoints_per_object},
          {"grid", {cfg.grid_rows, cfg.grid_cols}},
          {"max_retries", cfg.max_retries},
          {"seed", cfg.seed}};
}

void finish(Context& ctx) {
  auto& log = ctx.log;
  log.final_state = ctx.state;
  if (log.failure == FailureKind::none) {
    for (const auto& r : log.subtasks) {
      if (r.failure != FailureKind::none) {
        log.failure = r.failure;
        log.failure_reason = "subtask " + std::to_string(r.index) + ": " + r.failure_reason;
        break;
      }
    }
  }
  log.success = log.failure == FailureKind::none && !log.subtasks.empty();
  ctx.writer.events("actions.jsonl", log.events);
  ctx.writer.json("final_state.json", sim::to_json(log.final_state));
  ctx.writer.json("log.json", summary_json(log));
  ctx.writer.manifest();
}

std::vector<prompts::InContextExample> load_examples(const RunConfig& cfg, const std::string& family,
                                                     const std::string& kind) {
  if (cfg.example_store.empty() || cfg.max_examples == 0) return {};
  return prompts::select_in_context_examples(prompts::ExampleStore(cfg.example_store), family, cfg.max_examples,
                                             kind);
}

}  // namespace

std::string_view to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::none:
      return "none";
    case FailureKind::reasoning:
      return "reasoning";
    case FailureKind::execution:
      return "execution";
  }
  return "none";
}

FailureKind parse_failure_kind(std::string_view s) {
  if (s == "none") return FailureKind::none;
  if (s == "reasoning") return FailureKind::reasoning;
  if (s == "execution") return FailureKind::execution;
  throw InvalidOption("failure_kind", std::string(s));
}

void RunConfig::validate() const {
  if (scene.empty()) throw ConfigError("a scene file is required");
  if (vlm == VlmMode::oracle && oracle_script.empty()) throw ConfigError("the oracle needs a script");
  if (keypoints_per_object == 0) throw ConfigError("keypoints_per_object must be at least 1");
  if (grid_rows < 1 || grid_cols < 1 || grid_cols > 26) throw ConfigError("grid must be 1..26 columns and 1+ rows");
  if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
}

std::size_t TrajectoryLog::low_level_queries() const {
  std::size_t n = 0;
  for (const auto& r : subtasks) n += r.queries.size();
  return n;
}

nlohmann::json to_json(const ActionEvent& e) {
  switch (e.type) {
    case ActionEvent::Type::reset:
      return {{"type", "reset"}};
    case ActionEvent::Type::stage:
      return {{"type", "stage"}, {"tool_offset", {e.tool_offset.x(), e.tool_offset.y(), e.tool_offset.z()}}};
    case ActionEvent::Type::action:
      return {{"type", "action"}, {"a", motion::to_json(e.action)}};
  }
  return {};
}

ActionEvent event_from_json(const nlohmann::json& j) {
  ActionEvent e;
  try {
    const std::string type = j.at("type").get<std::string>();
    if (type == "reset") {
      e.type = ActionEvent::Type::reset;
    } else if (type == "stage") {
      e.type = ActionEvent::Type::stage;
      const auto t = j.at("tool_offset").get<std::array<double, 3>>();
      e.tool_offset = motion::Point3(t[0], t[1], t[2]);
    } else if (type == "action") {
      e.type = ActionEvent::Type::action;
      e.action = motion::action_from_json(j.at("a"));
    } else {
      throw MalformedJson("unknown event type \"" + type + "\"");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw MalformedJson(std::string("bad event: ") + ex.what());
  }
  return e;
}

std::vector<ActionEvent> read_events(const fs::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw IoError("cannot open " + jsonl.string());
  std::vector<ActionEvent> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw MalformedJson("bad line in " + jsonl.string());
    out.push_back(event_from_json(j));
  }
  return out;
}

void write_events(const fs::path& jsonl, const std::vector<ActionEvent>& events) {
  std::string text;
  for (const auto& e : events) text += to_json(e).dump() + "\n";
  write_text(jsonl, text);
}

nlohmann::json summary_json(const TrajectoryLog& log) {
  nlohmann::json j;
  j["instruction"] = log.instruction;
  j["task_family"] = log.task_family;
  j["scene"] = log.scene.name;
  j["merged"] = log.merged;
  j["success"] = log.success;
  j["failure_kind"] = to_string(log.failure);
  j["failure_reason"] = log.failure_reason;
  if (log.plan) j["high_level_plan"] = nlohmann::json::parse(prompts::serialize(*log.plan));
  j["subtasks"] = nlohmann::json::array();
  for (const auto& r : log.subtasks) {
    nlohmann::json s;
    s["index"] = r.index;
    s["subtask"] = r.subtask;
    s["annotated_image"] = r.annotated_image;
    s["queries"] = r.queries.size();
    s["response"] = r.response ? nlohmann::json(prompts::to_ordered_json(*r.response, log.merged)) : nlohmann::json();
    s["actions"] = r.actions;
    s["success"] = r.success;
    s["failure_kind"] = to_string(r.failure);
    s["failure_reason"] = r.failure_reason;
    s["outcomes"] = nlohmann::json::array();
    for (const auto& o : r.outcomes) s["outcomes"].push_back({{"predicate", o.description}, {"satisfied", o.satisfied}});
    j["subtasks"].push_back(s);
  }
  return j;
}

std::vector<std::string> SimGroundTruth::known_objects(const sim::Observation& obs) const {
  std::vector<std::string> out;
  for (const auto& [name, mask] : obs.masks)
    if (name != sim::kGripperMaskName) out.push_back(name);
  return out;
}

geometry::BinaryMask SimGroundTruth::segment(const std::string& name, const sim::Observation& obs) const {
  const auto known = known_objects(obs);
  const auto match = match_object(name, known);
  if (!match) throw EmptyMask("no mask for \"" + name + "\"");
  return obs.masks.at(*match);
}

std::vector<std::string> FileMasks::known_objects(const sim::Observation&) const {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir_, ec)) {
    if (entry.path().extension() == ".png") out.push_back(entry.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

geometry::BinaryMask FileMasks::segment(const std::string& name, const sim::Observation& obs) const {
  const auto match = match_object(name, known_objects(obs));
  if (!match) throw EmptyMask("no mask file for \"" + name + "\" in " + dir_.string());
  geometry::BinaryMask m = geometry::read_png_mask(dir_ / (*match + ".png"));
  if (!m.same_shape(obs.rgb)) throw DimensionMismatch("mask for \"" + name + "\" does not match the image size");
  return m;
}

std::unique_ptr<vlm::VlmClient> make_client(const RunConfig& cfg) {
  if (cfg.vlm == VlmMode::oracle) {
    if (cfg.oracle_script.empty()) throw ConfigError("the oracle needs a script");
    return std::make_unique<vlm::OracleClient>(vlm::load_oracle_script(cfg.oracle_script));
  }
  const vlm::VlmConfig vc = cfg.vlm_config.empty() ? vlm::VlmConfig{} : vlm::load_vlm_config(cfg.vlm_config);
  return std::make_unique<vlm::WireClient>(vc);
}

TrajectoryLog run_task(const RunConfig& cfg) {
  auto client = make_client(cfg);
  return run_task(cfg, *client, SimGroundTruth{});
}

TrajectoryLog run_task(const RunConfig& cfg, vlm::VlmClient& client, const SegmentationProvider& segmentation) {
  const Prepared prep = prepare(cfg);
  TrajectoryLog log;
  log.instruction = prep.instruction;
  log.task_family = prep.family;
  log.scene = prep.scene;
  log.run_dir = cfg.out_dir;
  RunWriter writer(cfg.out_dir);
  Context ctx{cfg, client, segmentation, writer, log, sim::spawn(prep.scene), {}};
  writer.json("config.json", config_json(cfg));
  writer.json("scene.json", log.scene);

  const sim::Observation s0 = sim::render(ctx.state, log.scene);
  writer.png("s0.png", s0.rgb);
  const auto known = segmentation.known_objects(s0);
  vlm::ImagePart observation{"s0.png", std::make_shared<const geometry::RgbImage>(s0.rgb), std::nullopt};
  const vlm::Conversation conv =
      prompts::build_high_level_prompt({log.instruction, observation}, load_examples(cfg, prep.family, "high"));
  const auto accepted = query_with_retries(client, conv, cfg.max_retries, log.high_level, [&](const std::string& text) {
    prompts::HighLevelPlan plan = prompts::parse_high_level_response(text);
    for (const auto& s : plan.subtasks) {
      require_known(s.object_grasped, known);
      require_known(s.object_unattached, known);
    }
    log.plan = std::move(plan);
  });
  writer.json("high_level/queries.json", queries_json(log.high_level));
  for (std::size_t i = 0; i < log.high_level.size(); ++i) {
    writer.text("high_level/response_" + std::to_string(i) + ".txt", log.high_level[i].response);
  }
  if (!accepted) {
    log.plan.reset();
    log.failure = FailureKind::reasoning;
    log.failure_reason = "no valid task decomposition: " + log.high_level.back().error;
    finish(ctx);
    return log;
  }

  ctx.examples = load_examples(cfg, prep.family, "low");
  for (std::size_t k = 0; k < log.plan->subtasks.size(); ++k) {
    log.subtasks.push_back(run_subtask(ctx, k, canonical_names(log.plan->subtasks[k], known)));
    if (!log.subtasks.back().success) break;
  }
  finish(ctx);
  return log;
}

TrajectoryLog run_ablation(const RunConfig& cfg) {
  auto client = make_client(cfg);
  return run_ablation(cfg, *client, SimGroundTruth{});
}

TrajectoryLog run_ablation(const RunConfig& cfg, vlm::VlmClient& client, const SegmentationProvider& segmentation) {
  const auto& a = cfg.ablation;
  const int flags = int{a.disable_hierarchy} + int{a.disable_point_description} + int{a.disable_cot};
  if (flags != 1) throw ConfigError("an ablation run needs exactly one ablation flag, got " + std::to_string(flags));
  if (!a.disable_hierarchy) return run_task(cfg, client, segmentation);

  const Prepared prep = prepare(cfg);
  TrajectoryLog log;
  log.instruction = prep.instruction;
  log.task_family = prep.family;
  log.scene = prep.scene;
  log.merged = true;
  log.run_dir = cfg.out_dir;
  RunWriter writer(cfg.out_dir);
  Context ctx{cfg, client, segmentation, writer, log, sim::spawn(prep.scene), load_examples(cfg, prep.family, "merged")};
  writer.json("config.json", config_json(cfg));
  writer.json("scene.json", log.scene);

  SubtaskRecord rec;
  rec.subtask.instruction = log.instruction;
  const std::string dir = "subtask_0";
  ctx.state = sim::reset_to_neutral(ctx.state, log.scene);
  ctx.log.events.push_back({ActionEvent::Type::reset, motion::Point3::Zero(), {}});
  const sim::Observation obs = sim::render(ctx.state, log.scene);
  writer.png(dir + "/observation.png", obs.rgb);

  // Every visible object is marked, once in each role.
  std::vector<std::string> visible;
  std::map<std::string, geometry::BinaryMask> masks;
  for (const auto& name : segmentation.known_objects(obs)) {
    geometry::BinaryMask m = segmentation.segment(name, obs);
    if (geometry::count_foreground(m) == 0) continue;
    visible.push_back(name);
    masks.emplace(name, std::move(m));
  }
  std::vector<marks::MarkedObject> marked;
  for (const auto& n : visible) marked.push_back({n, &masks.at(n), marks::ObjectRole::grasped});
  for (const auto& n : visible) marked.push_back({n, &masks.at(n), marks::ObjectRole::unattached});
  const auto grid = marks::build_grid(log.scene.width, log.scene.height, cfg.grid_rows, cfg.grid_cols);
  const marks::MarkSet markset = marks::build_markset(marked, cfg.keypoints_per_object, grid, dir);
  const marks::AnnotatedImage annotated = marks::render_marks(obs.rgb, markset);
  rec.markset = markset;
  rec.annotated = std::make_shared<const geometry::RgbImage>(annotated.pixels);
  rec.annotated_image = writer.enabled() ? dir + "/annotated.png" : "";
  writer.png(dir + "/annotated.png", annotated.pixels);
  writer.json(dir + "/markset.json", markset);

  vlm::ImagePart part{dir + "/annotated.png", rec.annotated, markset};
  const vlm::Conversation conv = prompts::build_merged_prompt(log.instruction, part, ctx.examples, cfg.ablation);
  rec.request_text = log.instruction;
  const auto accepted = query_with_retries(client, conv, cfg.max_retries, rec.queries, [&](const std::string& text) {
    prompts::AffordanceResponse r = prompts::parse_low_level_response(text, markset, true);
    require_known(r.object_grasped, visible);
    require_known(r.object_unattached, visible);
    rec.response = std::move(r);
  });
  writer.json(dir + "/queries.json", queries_json(rec.queries));
  for (std::size_t i = 0; i < rec.queries.size(); ++i) {
    writer.text(dir + "/response_" + std::to_string(i) + ".txt", rec.queries[i].response);
  }
  if (!accepted) {
    rec.response.reset();
    fail(rec, FailureKind::reasoning, "no valid response after " + std::to_string(rec.queries.size()) +
                                          " attempts: " + rec.queries.back().error);
  } else {
    rec.accepted_response = *accepted;
    rec.subtask.object_grasped = rec.response->object_grasped;
    rec.subtask.object_unattached = rec.response->object_unattached;
    std::vector<sim::SuccessPredicate> all;
    for (const auto& stage : log.scene.stages) all.insert(all.end(), stage.begin(), stage.end());
    const geometry::BinaryMask* grasped =
        rec.subtask.object_grasped.empty() ? nullptr : &masks.at(*match_object(rec.subtask.object_grasped, visible));
    execute(ctx, rec, obs, grasped, all, dir);
  }
  log.subtasks.push_back(std::move(rec));
  finish(ctx);
  return log;
}

std::size_t harvest_in_context(const TrajectoryLog& log, const prompts::ExampleStore& store) {
  std::size_t n = 0;
  for (const auto& r : log.subtasks) {
    if (!r.success || !r.annotated) continue;
    char name[64];
    std::snprintf(name, sizeof name, "images/%016llx.png",
                  static_cast<unsigned long long>(vlm::image_hash(*r.annotated)));
    make_dirs(store.directory() / "images");
    geometry::write_png(store.directory() / name, *r.annotated);
    prompts::StoredExample ex;
    ex.image_path = name;
    ex.request = r.request_text;
    ex.response = r.accepted_response;
    ex.task_family = log.task_family;
    ex.success = true;
    ex.kind = log.merged ? "merged" : "low";
    store.append(ex);
    ++n;
  }
  return n;
}

std::size_t harvest_run_dir(const fs::path& run_dir, const prompts::ExampleStore& store) {
  const nlohmann::json summary = read_json(run_dir / "log.json");
  TrajectoryLog log;
  try {
    log.task_family = summary.at("task_family").get<std::string>();
    log.merged = summary.at("merged").get<bool>();
    for (const auto& s : summary.at("subtasks")) {
      if (!s.at("success").get<bool>()) continue;
      SubtaskRecord r;
      r.success = true;
      r.subtask = s.at("subtask").get<prompts::SubtaskSpec>();
      r.request_text = log.merged ? summary.at("instruction").get<std::string>() : prompts::subtask_json(r.subtask);
      r.annotated = std::make_shared<const geometry::RgbImage>(
          geometry::read_png_rgb(run_dir / s.at("annotated_image").get<std::string>()));
      const auto queries = read_json(run_dir / ("subtask_" + std::to_string(s.at("index").get<std::size_t>())) /
                                     "queries.json");
      r.accepted_response = queries.back().at("response").get<std::string>();
      log.subtasks.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedJson(run_dir.string() + "/log.json: " + e.what());
  }
  return harvest_in_context(log, store);
}

sim::SimState replay(const sim::SceneSpec& scene, const std::vector<ActionEvent>& events) {
  sim::SimState state = sim::spawn(scene);
  for (const auto& e : events) {
    switch (e.type) {
      case ActionEvent::Type::reset:
        state = sim::reset_to_neutral(state, scene);
        break;
      case ActionEvent::Type::stage:
        state = sim::begin_stage(state, e.tool_offset);
        break;
      case ActionEvent::Type::action:
        state = sim::step(state, e.action, scene);
        break;
    }
  }
  return state;
}

RunRecord record_of(const TrajectoryLog& log) {
  return {log.instruction, log.task_family, log.success, log.scene, log.events, log.final_state};
}

RunRecord load_run(const fs::path& run_dir) {
  RunRecord r;
  const nlohmann::json summary = read_json(run_dir / "log.json");
  r.instruction = summary.at("instruction").get<std::string>();
  r.task_family = summary.at("task_family").get<std::string>();
  r.success = summary.at("success").get<bool>();
  try {
    r.scene = read_json(run_dir / "scene.json").get<sim::SceneSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedJson(std::string("bad scene.json: ") + e.what());
  }
  r.events = read_events(run_dir / "actions.jsonl");
  r.final_state = sim::state_from_json(read_json(run_dir / "final_state.json"));
  return r;
}

nlohmann::json to_json(const DatasetManifest& m) {
  std::size_t total = 0;
  for (const auto& [task, n] : m.counts) total += n;
  return {{"counts", m.counts},
          {"total", total},
          {"episodes", m.episodes},
          {"warnings", m.warnings},
          {"skipped_failed", m.skipped}};
}

DatasetManifest export_dataset(const std::vector<RunRecord>& runs, const fs::path& out_dir,
                               const ExportOptions& options) {
  DatasetManifest manifest;
  make_dirs(out_dir / "episodes");
  for (const auto& run : runs) {
    if (!run.success && !options.include_failed) {
      ++manifest.skipped;
      continue;
    }
    const std::size_t index = manifest.counts[run.task_family]++;
    char id[96];
    std::snprintf(id, sizeof id, "%s_%04zu", run.task_family.c_str(), index);
    const std::string rel = std::string("episodes/") + id;
    const fs::path dir = out_dir / rel;
    make_dirs(dir / "frames");

    std::string steps;
    sim::SimState state = sim::spawn(run.scene);
    std::size_t t = 0;
    for (const auto& e : run.events) {
      if (e.type == ActionEvent::Type::reset) {
        state = sim::reset_to_neutral(state, run.scene);
        continue;
      }
      if (e.type == ActionEvent::Type::stage) {
        state = sim::begin_stage(state, e.tool_offset);
        continue;
      }
      const sim::Observation obs = sim::render(state, run.scene);
      char frame[32];
      std::snprintf(frame, sizeof frame, "frames/%05zu", t);
      geometry::write_png(dir / (std::string(frame) + ".png"), obs.rgb);
      geometry::write_pgm16(dir / (std::string(frame) + "_depth.pgm"), obs.depth);
      const auto& g = state.gripper;
      nlohmann::json rec;
      rec["step"] = t;
      rec["language"] = run.instruction;
      rec["observation"] = {{"rgb", std::string(frame) + ".png"}, {"depth", std::string(frame) + "_depth.pgm"}};
      rec["proprio"] = {{"position", {g.position.x(), g.position.y(), g.position.z()}},
                        {"yaw", g.yaw},
                        {"aperture", g.aperture},
                        {"closed", g.closed}};
      rec["action"] = motion::to_json(e.action);
      rec["success"] = run.success;
      steps += rec.dump() + "\n";
      state = sim::step(state, e.action, run.scene);
      ++t;
    }
    if (!(state == run.final_state)) throw ExecutionFailure("replay of " + rel + " diverged from its log");

    write_text(dir / "steps.jsonl", steps);
    write_events(dir / "events.jsonl", run.events);
    write_json(dir / "scene.json", run.scene);
    write_json(dir / "final_state.json", sim::to_json(run.final_state));
    write_json(dir / "episode.json", {{"language", run.instruction},
                                      {"task_family", run.task_family},
                                      {"success", run.success},
                                      {"steps", t}});
    manifest.episodes.push_back(rel);
  }
  for (const auto& [task, n] : manifest.counts) {
    if (n < options.min_per_task) {
      manifest.warnings.push_back("task \"" + task + "\" has " + std::to_string(n) + " episodes, fewer than " +
                                  std::to_string(options.min_per_task));
    }
  }
  write_json(out_dir / "manifest.json", to_json(manifest));
  return manifest;
}

sim::SimState replay_episode(const fs::path& episode_dir) {
  sim::SceneSpec scene;
  try {
    scene = read_json(episode_dir / "scene.json").get<sim::SceneSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedJson(std::string("bad scene.json: ") + e.what());
  }
  return replay(scene, read_events(episode_dir / "events.jsonl"));
}

}  // namespace keymark::pipeline
