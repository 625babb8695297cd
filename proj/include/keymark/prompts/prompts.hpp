#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "keymark/marks/marks.hpp"
#include "keymark/vlm/message.hpp"

namespace keymark::prompts {

using marks::GridSpec;
using marks::MarkSet;
using marks::TileId;

struct TaskRequest {
  std::string instruction;
  vlm::ImagePart observation;
};

struct SubtaskSpec {
  std::string instruction;
  std::string object_grasped;
  std::string object_unattached;
  std::string motion_direction;
  friend bool operator==(const SubtaskSpec&, const SubtaskSpec&) = default;
};

struct HighLevelPlan {
  std::vector<SubtaskSpec> subtasks;
  friend bool operator==(const HighLevelPlan&, const HighLevelPlan&) = default;
};

enum class Height { same, above };
enum class TargetAngle { forward, backward, upside, downside, left, right };

std::string_view to_string(Height h);
std::string_view to_string(TargetAngle a);

// Empty strings / nullopt mean the field was left empty in the response.
struct AffordanceResponse {
  std::string grasp_keypoint;
  std::string function_keypoint;
  std::string target_keypoint;
  std::optional<TileId> pre_contact_tile;
  std::optional<TileId> post_contact_tile;
  std::optional<Height> pre_contact_height;
  std::optional<Height> post_contact_height;
  std::optional<TargetAngle> target_angle;
  // Only filled in merged (no high-level stage) mode.
  std::string object_grasped;
  std::string object_unattached;
  std::string rationale_text;

  // Equality ignores rationale_text.
  friend bool operator==(const AffordanceResponse& a, const AffordanceResponse& b);
};

struct AblationConfig {
  bool disable_hierarchy{false};
  bool disable_point_description{false};
  bool disable_cot{false};
};

struct InContextExample {
  vlm::ImagePart image;
  std::string request_text;
  std::string response_text;
};

// Prompt bodies. Column and row names follow the grid (a..e and 1..5 by default).
std::string rho_high();
std::string rho_low(const AblationConfig& ablation = {}, const GridSpec& grid = {});
std::string rho_merged(const AblationConfig& ablation = {}, const GridSpec& grid = {});

// The subtask dictionary exactly as placed in the low-level request.
std::string subtask_json(const SubtaskSpec& subtask);

// [rho_high], then one (request, image) / response pair per example, then
// [instruction, observation]. With no examples this is [rho_high, l, s0].
vlm::Conversation build_high_level_prompt(const TaskRequest& task, const std::vector<InContextExample>& examples);

// MarkMismatch when the annotated roles contradict the subtask's objects.
vlm::Conversation build_low_level_prompt(const SubtaskSpec& subtask, const vlm::ImagePart& annotated,
                                         const std::vector<InContextExample>& examples,
                                         const AblationConfig& ablation = {});

// Single low-level query straight from the task instruction, every object
// marked in both roles.
vlm::Conversation build_merged_prompt(const std::string& instruction, const vlm::ImagePart& annotated,
                                      const std::vector<InContextExample>& examples,
                                      const AblationConfig& ablation = {});

// Locates the JSON payload in free-form model output: fenced blocks first,
// then balanced bracket spans in order. `prefix` receives the prose before it.
nlohmann::json extract_json(std::string_view text, nlohmann::json::value_t expected, std::string* prefix = nullptr);

HighLevelPlan parse_high_level_response(std::string_view text);

// Validates labels against the mark set, tiles against its grid, options
// against their closed sets, and the emptiness rules. Which objects are
// present is read from the mark set's roles, or from the response's own
// object fields when `merged` is set.
AffordanceResponse parse_low_level_response(std::string_view text, const MarkSet& markset, bool merged = false);

std::string serialize(const HighLevelPlan& plan);
std::string serialize(const AffordanceResponse& response, bool merged = false);

void to_json(nlohmann::json& j, const SubtaskSpec& s);
void from_json(const nlohmann::json& j, SubtaskSpec& s);
nlohmann::ordered_json to_ordered_json(const AffordanceResponse& r, bool merged = false);

}  // namespace keymark::prompts
