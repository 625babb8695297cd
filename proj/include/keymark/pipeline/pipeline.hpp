#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "keymark/motion/motion.hpp"
#include "keymark/prompts/example_store.hpp"
#include "keymark/prompts/prompts.hpp"
#include "keymark/sim/sim.hpp"
#include "keymark/vlm/message.hpp"

namespace keymark::pipeline {

enum class VlmMode { wire, oracle };
enum class FailureKind { none, reasoning, execution };

std::string_view to_string(FailureKind kind);
FailureKind parse_failure_kind(std::string_view s);

struct RunConfig {
  std::filesystem::path scene;
  int variation{0};                     // pose jitter draw; 0 runs the scene as written
  std::string task;                     // instruction; empty takes the scene's own
  VlmMode vlm{VlmMode::oracle};
  std::filesystem::path oracle_script;  // required for the oracle
  std::filesystem::path vlm_config;     // optional for the wire client
  prompts::AblationConfig ablation;
  std::filesystem::path example_store;  // empty: no in-context examples
  std::string task_family;              // empty takes the scene's family
  std::size_t max_examples{prompts::kDefaultInContextExamples};
  std::size_t keypoints_per_object{8};
  int grid_rows{5};
  int grid_cols{5};
  int max_retries{2};                   // re-queries after an invalid response
  std::uint64_t seed{0};
  std::filesystem::path out_dir;        // run directory; empty writes nothing
  motion::MotionConfig motion;
  motion::LiftConfig lift;

  // ConfigError when the oracle has no script or a bound is out of range.
  void validate() const;
};

struct QueryRecord {
  nlohmann::json request;  // transcript of the conversation sent
  std::string response;    // raw text, before any parsing
  std::string error;       // why the response was rejected; empty when accepted
};

// A replayable execution event: gripper sent to neutral, a new motion phase
// with its function point offset, or one control action.
struct ActionEvent {
  enum class Type { reset, stage, action };
  Type type{Type::action};
  motion::Point3 tool_offset{motion::Point3::Zero()};
  motion::Action action{};
};

nlohmann::json to_json(const ActionEvent& e);
ActionEvent event_from_json(const nlohmann::json& j);

struct SubtaskRecord {
  std::size_t index{0};
  prompts::SubtaskSpec subtask;
  std::string annotated_image;  // path relative to the run directory; empty when nothing was written
  std::shared_ptr<const geometry::RgbImage> annotated;
  std::optional<marks::MarkSet> markset;
  std::string request_text;     // the subtask text placed next to the annotated image
  std::vector<QueryRecord> queries;
  std::optional<prompts::AffordanceResponse> response;
  std::string accepted_response;  // raw text of the response that parsed
  nlohmann::json instance;        // lifted keypoints
  nlohmann::json plan;            // compiled motion plan
  std::size_t actions{0};
  std::vector<sim::PredicateOutcome> outcomes;
  bool success{false};
  FailureKind failure{FailureKind::none};
  std::string failure_reason;
};

struct TrajectoryLog {
  std::string instruction;
  std::string task_family;
  bool merged{false};  // single query without the high-level stage
  sim::SceneSpec scene;  // the jittered scene that was run
  std::vector<QueryRecord> high_level;
  std::optional<prompts::HighLevelPlan> plan;
  std::vector<SubtaskRecord> subtasks;
  std::vector<ActionEvent> events;
  sim::SimState final_state;
  bool success{false};
  FailureKind failure{FailureKind::none};
  std::string failure_reason;
  std::filesystem::path run_dir;

  std::size_t low_level_queries() const;
};

nlohmann::json summary_json(const TrajectoryLog& log);

// Masks of named objects in an observation. EmptyMask when the object is not visible.
class SegmentationProvider {
 public:
  virtual ~SegmentationProvider() = default;
  // Names the provider can segment, used to validate the objects a plan mentions.
  virtual std::vector<std::string> known_objects(const sim::Observation& obs) const = 0;
  virtual geometry::BinaryMask segment(const std::string& name, const sim::Observation& obs) const = 0;
};

// Looks names up in the simulator's ground-truth masks, ignoring case.
class SimGroundTruth : public SegmentationProvider {
 public:
  std::vector<std::string> known_objects(const sim::Observation& obs) const override;
  geometry::BinaryMask segment(const std::string& name, const sim::Observation& obs) const override;
};

// Reads <dir>/<name>.png masks, for images that come from outside the simulator.
class FileMasks : public SegmentationProvider {
 public:
  explicit FileMasks(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::vector<std::string> known_objects(const sim::Observation& obs) const override;
  geometry::BinaryMask segment(const std::string& name, const sim::Observation& obs) const override;

 private:
  std::filesystem::path dir_;
};

std::unique_ptr<vlm::VlmClient> make_client(const RunConfig& cfg);

// Decomposes the task, then annotates, queries, compiles and executes each
// subtask in turn, stopping at the first failure.
TrajectoryLog run_task(const RunConfig& cfg);
TrajectoryLog run_task(const RunConfig& cfg, vlm::VlmClient& client, const SegmentationProvider& segmentation);

// Exactly one ablation flag must be set (ConfigError otherwise). Without the
// hierarchy every object is marked in both roles and one merged query drives a
// single execution judged against every stage; the text ablations run the
// normal loop with the trimmed prompts.
TrajectoryLog run_ablation(const RunConfig& cfg);
TrajectoryLog run_ablation(const RunConfig& cfg, vlm::VlmClient& client, const SegmentationProvider& segmentation);

// Appends one low-level example per successful subtask; annotated images are
// copied next to the store. Returns the number appended.
std::size_t harvest_in_context(const TrajectoryLog& log, const prompts::ExampleStore& store);
// Same, from a run directory written by run_task.
std::size_t harvest_run_dir(const std::filesystem::path& run_dir, const prompts::ExampleStore& store);

// Re-executes an event stream from the scene's spawn state.
sim::SimState replay(const sim::SceneSpec& scene, const std::vector<ActionEvent>& events);

std::vector<ActionEvent> read_events(const std::filesystem::path& jsonl);
void write_events(const std::filesystem::path& jsonl, const std::vector<ActionEvent>& events);

// A finished run as stored on disk, enough to replay and export it.
struct RunRecord {
  std::string instruction;
  std::string task_family;
  bool success{false};
  sim::SceneSpec scene;
  std::vector<ActionEvent> events;
  sim::SimState final_state;
};

RunRecord record_of(const TrajectoryLog& log);
RunRecord load_run(const std::filesystem::path& run_dir);

struct ExportOptions {
  bool include_failed{false};
  std::size_t min_per_task{50};
};

struct DatasetManifest {
  std::map<std::string, std::size_t> counts;  // episodes per task family
  std::vector<std::string> episodes;          // episode directories relative to the dataset root
  std::vector<std::string> warnings;
  std::size_t skipped{0};                     // failed runs left out
};

nlohmann::json to_json(const DatasetManifest& m);

// Replays every run and writes one directory per episode: steps.jsonl (one
// record per action with language, proprioception and observation paths),
// PNG colour and 16-bit PGM depth frames, the replay events and the final
// state. Throws ExecutionFailure when a replay disagrees with its log.
DatasetManifest export_dataset(const std::vector<RunRecord>& runs, const std::filesystem::path& out_dir,
                               const ExportOptions& options = {});

// Final state of an exported episode, re-executed from its own files.
sim::SimState replay_episode(const std::filesystem::path& episode_dir);

}  // namespace keymark::pipeline
