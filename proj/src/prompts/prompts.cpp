#include "keymark/prompts/prompts.hpp"

#include <algorithm>
#include <cctype>

namespace keymark::prompts {

namespace assets {
extern const std::string_view high_level;
extern const std::string_view input_description;
extern const std::string_view explanation;
extern const std::string_view motion_output;
extern const std::string_view chain_of_thought;
extern const std::string_view merged_fields;
}  // namespace assets

namespace {

std::string replace_all(std::string text, std::string_view key, const std::string& value) {
  for (std::size_t pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

std::string with_grid_names(std::string_view tmpl, const GridSpec& grid) {
  std::string cols, cols_quoted, rows;
  for (int c = 0; c < grid.cols; ++c) {
    const std::string sep = c ? ", " : "";
    cols += sep + static_cast<char>('a' + c);
    cols_quoted += sep + "'" + static_cast<char>('a' + c) + "'";
  }
  for (int r = 1; r <= grid.rows; ++r) rows += (r > 1 ? ", " : "") + std::to_string(r);
  std::string text(tmpl);
  text = replace_all(std::move(text), "{{columns_quoted}}", cols_quoted);
  text = replace_all(std::move(text), "{{columns}}", cols);
  return replace_all(std::move(text), "{{rows}}", rows);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

void append_examples(vlm::Conversation& conv, const std::vector<InContextExample>& examples) {
  for (const auto& ex : examples) {
    conv.push_back({vlm::Role::user, {ex.request_text, ex.image}});
    conv.push_back({vlm::Role::assistant, {ex.response_text}});
  }
}

const std::array<std::string_view, 8> kLowLevelKeys{"grasp_keypoint",     "function_keypoint",  "target_keypoint",
                                                    "pre_contact_tile",   "post_contact_tile",  "pre_contact_height",
                                                    "post_contact_height", "target_angle"};

// Required string-or-null field; null and whitespace both read as empty.
std::string string_field(const nlohmann::json& obj, std::string_view key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw MissingField(std::string(key));
  if (it->is_null()) return {};
  if (!it->is_string()) throw InvalidOption(std::string(key), "expected a string");
  return trim(it->get<std::string>());
}

std::optional<Height> parse_height(const std::string& field, const std::string& value) {
  if (value.empty()) return std::nullopt;
  const std::string v = lower(value);
  if (v == "same") return Height::same;
  if (v == "above") return Height::above;
  throw InvalidOption(field, "\"" + value + "\" is not one of \"same\", \"above\"");
}

std::optional<TargetAngle> parse_angle(const std::string& value) {
  if (value.empty()) return std::nullopt;
  const std::string v = lower(value);
  for (auto a : {TargetAngle::forward, TargetAngle::backward, TargetAngle::upside, TargetAngle::downside,
                 TargetAngle::left, TargetAngle::right}) {
    if (v == to_string(a)) return a;
  }
  throw InvalidOption("target_angle", "\"" + value +
                                          "\" is not one of \"forward\", \"backward\", \"upside\", \"downside\", "
                                          "\"left\", \"right\"");
}

bool same_name(const std::string& a, const std::string& b) { return lower(trim(a)) == lower(trim(b)); }

void check_label(const MarkSet& ms, const std::string& field, const std::string& label, marks::ObjectRole role,
                 const std::string* object) {
  if (label.empty()) return;
  const auto* c = ms.find(label);
  if (!c || c->role != role) throw UnknownLabel(label, ms.labels(role));
  if (object && !object->empty() && !c->object.empty() && !same_name(c->object, *object)) {
    throw ConsistencyViolation(field + " " + label + " lies on \"" + c->object + "\", not on \"" + *object + "\"");
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConsistencyViolation(message);
}

}  // namespace

std::string_view to_string(Height h) { return h == Height::same ? "same" : "above"; }

std::string_view to_string(TargetAngle a) {
  switch (a) {
    case TargetAngle::forward:
      return "forward";
    case TargetAngle::backward:
      return "backward";
    case TargetAngle::upside:
      return "upside";
    case TargetAngle::downside:
      return "downside";
    case TargetAngle::left:
      return "left";
    case TargetAngle::right:
      return "right";
  }
  return "forward";
}

bool operator==(const AffordanceResponse& a, const AffordanceResponse& b) {
  return a.grasp_keypoint == b.grasp_keypoint && a.function_keypoint == b.function_keypoint &&
         a.target_keypoint == b.target_keypoint && a.pre_contact_tile == b.pre_contact_tile &&
         a.post_contact_tile == b.post_contact_tile && a.pre_contact_height == b.pre_contact_height &&
         a.post_contact_height == b.post_contact_height && a.target_angle == b.target_angle &&
         a.object_grasped == b.object_grasped && a.object_unattached == b.object_unattached;
}

std::string rho_high() { return std::string(assets::high_level); }

std::string rho_low(const AblationConfig& ablation, const GridSpec& grid) {
  std::string text = with_grid_names(assets::input_description, grid);
  if (!ablation.disable_point_description) text += "\n\n" + std::string(assets::explanation);
  text += "\n\n" + std::string(assets::motion_output);
  if (!ablation.disable_cot) text += "\n\n" + with_grid_names(assets::chain_of_thought, grid);
  return text;
}

std::string rho_merged(const AblationConfig& ablation, const GridSpec& grid) {
  return rho_low(ablation, grid) + "\n\n" + std::string(assets::merged_fields);
}

void to_json(nlohmann::json& j, const SubtaskSpec& s) {
  j = {{"instruction", s.instruction},
       {"object_grasped", s.object_grasped},
       {"object_unattached", s.object_unattached},
       {"motion_direction", s.motion_direction}};
}

void from_json(const nlohmann::json& j, SubtaskSpec& s) {
  if (!j.is_object()) throw MalformedJson("subtask entry is not a JSON object");
  auto field = [&](std::string_view key) {
    const auto it = j.find(key);
    if (it == j.end()) throw MissingField(std::string(key));
    if (it->is_null()) return std::string{};
    if (!it->is_string()) throw MalformedJson("subtask field \"" + std::string(key) + "\" is not a string");
    return trim(it->get<std::string>());
  };
  s.instruction = field("instruction");
  s.object_grasped = field("object_grasped");
  s.object_unattached = field("object_unattached");
  s.motion_direction = field("motion_direction");
}

std::string subtask_json(const SubtaskSpec& s) {
  nlohmann::ordered_json j;
  j["instruction"] = s.instruction;
  j["object_grasped"] = s.object_grasped;
  j["object_unattached"] = s.object_unattached;
  j["motion_direction"] = s.motion_direction;
  return j.dump(4);
}

vlm::Conversation build_high_level_prompt(const TaskRequest& task, const std::vector<InContextExample>& examples) {
  vlm::Conversation conv;
  conv.push_back({vlm::Role::user, {rho_high()}});
  append_examples(conv, examples);
  conv.push_back({vlm::Role::user, {task.instruction, task.observation}});
  return conv;
}

vlm::Conversation build_low_level_prompt(const SubtaskSpec& subtask, const vlm::ImagePart& annotated,
                                         const std::vector<InContextExample>& examples,
                                         const AblationConfig& ablation) {
  if (!annotated.markset) throw MarkMismatch("low-level prompt needs an annotated image with its mark set");
  const MarkSet& ms = *annotated.markset;
  if (subtask.object_grasped.empty() == ms.has_role(marks::ObjectRole::grasped)) {
    throw MarkMismatch(subtask.object_grasped.empty() ? "P marks drawn but the subtask grasps nothing"
                                                      : "no P marks for \"" + subtask.object_grasped + "\"");
  }
  if (subtask.object_unattached.empty() == ms.has_role(marks::ObjectRole::unattached)) {
    throw MarkMismatch(subtask.object_unattached.empty() ? "Q marks drawn but the subtask has no unattached object"
                                                         : "no Q marks for \"" + subtask.object_unattached + "\"");
  }
  vlm::Conversation conv;
  conv.push_back({vlm::Role::user, {rho_low(ablation, ms.grid)}});
  append_examples(conv, examples);
  conv.push_back({vlm::Role::user, {subtask_json(subtask), annotated}});
  return conv;
}

vlm::Conversation build_merged_prompt(const std::string& instruction, const vlm::ImagePart& annotated,
                                      const std::vector<InContextExample>& examples,
                                      const AblationConfig& ablation) {
  if (!annotated.markset) throw MarkMismatch("merged prompt needs an annotated image with its mark set");
  vlm::Conversation conv;
  conv.push_back({vlm::Role::user, {rho_merged(ablation, annotated.markset->grid)}});
  append_examples(conv, examples);
  nlohmann::ordered_json task;
  task["instruction"] = instruction;
  conv.push_back({vlm::Role::user, {task.dump(4), annotated}});
  return conv;
}

nlohmann::json extract_json(std::string_view text, nlohmann::json::value_t expected, std::string* prefix) {
  auto accept = [&](std::string_view candidate, std::size_t start) -> std::optional<nlohmann::json> {
    auto j = nlohmann::json::parse(candidate, nullptr, false);
    if (j.is_discarded() || j.type() != expected) return std::nullopt;
    if (prefix) *prefix = trim(text.substr(0, start));
    return j;
  };

  for (std::size_t open = text.find("```"); open != std::string_view::npos;) {
    const std::size_t line_end = text.find('\n', open + 3);
    if (line_end == std::string_view::npos) break;
    const std::size_t close = text.find("```", line_end);
    if (close == std::string_view::npos) break;
    if (auto j = accept(text.substr(line_end + 1, close - line_end - 1), open)) return *j;
    open = text.find("```", close + 3);
  }

  const char opener = expected == nlohmann::json::value_t::array ? '[' : '{';
  const char closer = expected == nlohmann::json::value_t::array ? ']' : '}';
  for (std::size_t start = text.find(opener); start != std::string_view::npos; start = text.find(opener, start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{' || c == '[') {
        ++depth;
      } else if (c == '}' || c == ']') {
        if (--depth == 0) {
          if (c == closer) {
            if (auto j = accept(text.substr(start, i - start + 1), start)) return *j;
          }
          break;
        }
      }
    }
  }
  throw MalformedJson(expected == nlohmann::json::value_t::array ? "no JSON list found in the response"
                                                                  : "no JSON dictionary found in the response");
}

HighLevelPlan parse_high_level_response(std::string_view text) {
  const nlohmann::json j = extract_json(text, nlohmann::json::value_t::array);
  if (j.empty()) throw EmptyPlan("the response lists no subtasks");
  HighLevelPlan plan;
  for (const auto& item : j) {
    SubtaskSpec s = item.get<SubtaskSpec>();
    require(!s.object_grasped.empty() || !s.object_unattached.empty(),
            "subtask \"" + s.instruction + "\" names neither object_grasped nor object_unattached");
    plan.subtasks.push_back(std::move(s));
  }
  return plan;
}

AffordanceResponse parse_low_level_response(std::string_view text, const MarkSet& markset, bool merged) {
  AffordanceResponse r;
  const nlohmann::json j = extract_json(text, nlohmann::json::value_t::object, &r.rationale_text);

  std::array<std::string, kLowLevelKeys.size()> v;
  for (std::size_t i = 0; i < kLowLevelKeys.size(); ++i) v[i] = string_field(j, kLowLevelKeys[i]);
  if (merged) {
    r.object_grasped = string_field(j, "object_grasped");
    r.object_unattached = string_field(j, "object_unattached");
  }

  r.grasp_keypoint = v[0];
  r.function_keypoint = v[1];
  r.target_keypoint = v[2];
  const std::string* grasped_name = merged ? &r.object_grasped : nullptr;
  const std::string* unattached_name = merged ? &r.object_unattached : nullptr;
  check_label(markset, "grasp_keypoint", r.grasp_keypoint, marks::ObjectRole::grasped, grasped_name);
  check_label(markset, "function_keypoint", r.function_keypoint, marks::ObjectRole::grasped, grasped_name);
  check_label(markset, "target_keypoint", r.target_keypoint, marks::ObjectRole::unattached, unattached_name);

  if (!v[3].empty()) r.pre_contact_tile = marks::parse_tile_name(v[3], markset.grid);
  if (!v[4].empty()) r.post_contact_tile = marks::parse_tile_name(v[4], markset.grid);
  r.pre_contact_height = parse_height("pre_contact_height", v[5]);
  r.post_contact_height = parse_height("post_contact_height", v[6]);
  r.target_angle = parse_angle(v[7]);

  const bool grasped = merged ? !r.object_grasped.empty() : markset.has_role(marks::ObjectRole::grasped);
  const bool unattached = merged ? !r.object_unattached.empty() : markset.has_role(marks::ObjectRole::unattached);
  require(grasped || unattached, "object_grasped and object_unattached are both empty");
  require(r.grasp_keypoint.empty() == !grasped,
          "grasp_keypoint must be empty if and only if object_grasped is empty");
  require(r.function_keypoint.empty() == (!grasped || !unattached),
          "function_keypoint must be empty if and only if object_grasped or object_unattached is empty");
  require(r.target_keypoint.empty() == !unattached,
          "target_keypoint must be empty if and only if object_unattached is empty");
  require(r.pre_contact_tile.has_value() == r.pre_contact_height.has_value(),
          "pre_contact_tile and pre_contact_height must be given together");
  require(r.post_contact_tile.has_value() == r.post_contact_height.has_value(),
          "post_contact_tile and post_contact_height must be given together");
  if (!r.target_keypoint.empty()) {
    require(r.pre_contact_tile && r.post_contact_tile,
            "pre_contact_tile and post_contact_tile are required when target_keypoint is set");
  }
  if (!r.function_keypoint.empty()) {
    require(r.target_angle.has_value(), "target_angle is required when function_keypoint is set");
  }
  return r;
}

nlohmann::ordered_json to_ordered_json(const AffordanceResponse& r, bool merged) {
  nlohmann::ordered_json j;
  if (merged) {
    j["object_grasped"] = r.object_grasped;
    j["object_unattached"] = r.object_unattached;
  }
  j["grasp_keypoint"] = r.grasp_keypoint;
  j["function_keypoint"] = r.function_keypoint;
  j["target_keypoint"] = r.target_keypoint;
  j["pre_contact_tile"] = r.pre_contact_tile ? marks::tile_name(*r.pre_contact_tile) : "";
  j["post_contact_tile"] = r.post_contact_tile ? marks::tile_name(*r.post_contact_tile) : "";
  j["pre_contact_height"] = r.pre_contact_height ? std::string(to_string(*r.pre_contact_height)) : "";
  j["post_contact_height"] = r.post_contact_height ? std::string(to_string(*r.post_contact_height)) : "";
  j["target_angle"] = r.target_angle ? std::string(to_string(*r.target_angle)) : "";
  return j;
}

std::string serialize(const AffordanceResponse& response, bool merged) {
  return to_ordered_json(response, merged).dump(4);
}

std::string serialize(const HighLevelPlan& plan) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& s : plan.subtasks) arr.push_back(nlohmann::ordered_json::parse(subtask_json(s)));
  return arr.dump(4);
}

}  // namespace keymark::prompts
