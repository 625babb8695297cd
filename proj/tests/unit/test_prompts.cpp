#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "keymark/geometry/image_io.hpp"
#include "keymark/prompts/example_store.hpp"
#include "keymark/prompts/prompts.hpp"

using namespace keymark;
using namespace keymark::prompts;
using marks::KeypointCandidate;
using marks::KeypointSource;
using marks::ObjectRole;

namespace {

std::string golden(const std::string& name) {
  std::ifstream in(std::string(KEYMARK_SOURCE_DIR) + "/tests/fixtures/golden/" + name);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  if (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

MarkSet synthetic_markset(bool grasped, bool unattached) {
  MarkSet ms;
  ms.grid = marks::build_grid(320, 240);
  ms.base_image_id = "obs";
  for (int i = 0; grasped && i < 9; ++i)
    ms.candidates.push_back({"P" + std::to_string(i), {10 + i, 10}, ObjectRole::grasped,
                             i == 8 ? KeypointSource::center : KeypointSource::boundary, "broom"});
  for (int i = 0; unattached && i < 9; ++i)
    ms.candidates.push_back({"Q" + std::to_string(i), {10 + i, 50}, ObjectRole::unattached,
                             i == 8 ? KeypointSource::center : KeypointSource::boundary, "trash"});
  return ms;
}

vlm::ImagePart image_part(const std::string& ref, std::optional<MarkSet> ms = std::nullopt) {
  return {ref, std::make_shared<const geometry::RgbImage>(320, 240, geometry::Rgb{1, 2, 3}), std::move(ms)};
}

std::vector<vlm::Part> flatten(const vlm::Conversation& conv) {
  std::vector<vlm::Part> out;
  for (const auto& m : conv) out.insert(out.end(), m.parts.begin(), m.parts.end());
  return out;
}

const char* kSweep = R"({"grasp_keypoint":"P1","function_keypoint":"P4","target_keypoint":"Q2","pre_contact_tile":"b3","post_contact_tile":"d3","pre_contact_height":"same","post_contact_height":"same","target_angle":"downside"})";

const char* kFig2Plan = R"([
  {"instruction": "Move the eyeglasses into the glasses case.", "object_grasped": "eyeglasses",
   "object_unattached": "glasses case", "motion_direction": "downward"},
  {"instruction": "Wipe the snack package to the right side of the table using the broom.",
   "object_grasped": "broom", "object_unattached": "snack package", "motion_direction": "from left to right"}
])";

}  // namespace

TEST_CASE("prompt bodies match the golden files") {
  CHECK(rho_high() == golden("rho_high.txt"));
  CHECK(rho_low() == golden("rho_low.txt"));
  CHECK(rho_low({false, true, false}) == golden("rho_low_no_description.txt"));
  CHECK(rho_low({false, false, true}) == golden("rho_low_no_cot.txt"));
}

TEST_CASE("ablations delete exactly their block") {
  const std::string full = rho_low();
  const std::string defs_start = "The motion consists of an optional grasping phase";
  const std::string output_start = "The response should be a dictionary in JSON form";
  const std::string cot_start = "Think about this problem step by step";

  std::string expect_no_desc = full;
  const auto a = expect_no_desc.find(defs_start);
  const auto b = expect_no_desc.find(output_start);
  REQUIRE(a != std::string::npos);
  expect_no_desc.erase(a, b - a);
  CHECK(rho_low({false, true, false}) == expect_no_desc);
  CHECK(rho_low({false, true, false}).find("The definitions of these points") == std::string::npos);

  const auto c = full.find(cot_start);
  REQUIRE(c != std::string::npos);
  CHECK(rho_low({false, false, true}) == full.substr(0, c - 2));
  CHECK(rho_low({false, false, true}).find(cot_start) == std::string::npos);
  CHECK(rho_low({false, true, true}) == expect_no_desc.substr(0, expect_no_desc.find(cot_start) - 2));
}

TEST_CASE("grid names follow the grid size") {
  const auto g = marks::build_grid(300, 300, 3, 4);
  const std::string text = rho_low({}, g);
  CHECK(text.find("columns marked as a, b, c, d from left to right and rows marked as 1, 2, 3 from bottom") !=
        std::string::npos);
  CHECK(text.find("'a', 'b', 'c', 'd' from left to right") != std::string::npos);
}

TEST_CASE("high-level prompt sequence") {
  const TaskRequest task{"Sweep the trash", image_part("s0.png")};
  const auto zero = build_high_level_prompt(task, {});
  const auto parts = flatten(zero);
  REQUIRE(parts.size() == 3);
  CHECK(std::get<std::string>(parts[0]) == rho_high());
  CHECK(std::get<std::string>(parts[1]) == "Sweep the trash");
  CHECK(std::get<vlm::ImagePart>(parts[2]).ref == "s0.png");

  const std::vector<InContextExample> ex{{image_part("e1.png"), "req one", "resp one"},
                                         {image_part("e2.png"), "req two", "resp two"}};
  const auto two = build_high_level_prompt(task, ex);
  REQUIRE(two.size() == 6);
  CHECK(std::get<std::string>(two[0].parts[0]) == rho_high());
  CHECK(two[1].role == vlm::Role::user);
  CHECK(std::get<std::string>(two[1].parts[0]) == "req one");
  CHECK(two[2].role == vlm::Role::assistant);
  CHECK(std::get<std::string>(two[2].parts[0]) == "resp one");
  CHECK(std::get<std::string>(two[4].parts[0]) == "resp two");
  CHECK(std::get<std::string>(two[5].parts[0]) == "Sweep the trash");
  CHECK(vlm::transcript_json(two).dump() == vlm::transcript_json(build_high_level_prompt(task, ex)).dump());
}

TEST_CASE("low-level prompt") {
  const SubtaskSpec s{"Sweep the trash to the right", "broom", "trash", "from left to right"};
  const auto annotated = image_part("annotated.png", synthetic_markset(true, true));
  const auto conv = build_low_level_prompt(s, annotated, {});
  REQUIRE(conv.size() == 2);
  const std::string body = std::get<std::string>(conv[0].parts[0]);
  CHECK(body.find("Red dots marked as P[i] on the image.") != std::string::npos);
  CHECK(body.find("The definitions of these points") != std::string::npos);
  CHECK(body.find("Think about this problem step by step") != std::string::npos);
  CHECK(std::get<std::string>(conv[1].parts[0]) == subtask_json(s));
  CHECK(subtask_json(s) ==
        "{\n    \"instruction\": \"Sweep the trash to the right\",\n    \"object_grasped\": \"broom\",\n"
        "    \"object_unattached\": \"trash\",\n    \"motion_direction\": \"from left to right\"\n}");

  const auto no_cot = build_low_level_prompt(s, annotated, {}, {false, false, true});
  CHECK(vlm::all_text(no_cot).find("Think about this problem step by step") == std::string::npos);

  CHECK_THROWS_AS(build_low_level_prompt(s, image_part("a.png", synthetic_markset(true, false)), {}), MarkMismatch);
  const SubtaskSpec press{"Press the button", "", "button", "downward"};
  CHECK_THROWS_AS(build_low_level_prompt(press, annotated, {}), MarkMismatch);
  CHECK_NOTHROW(build_low_level_prompt(press, image_part("a.png", synthetic_markset(false, true)), {}));
  CHECK_THROWS_AS(build_low_level_prompt(s, image_part("plain.png"), {}), MarkMismatch);
}

TEST_CASE("high-level parsing") {
  const auto plan = parse_high_level_response(kFig2Plan);
  REQUIRE(plan.subtasks.size() == 2);
  CHECK(plan.subtasks[0].object_grasped == "eyeglasses");
  CHECK(plan.subtasks[1].object_unattached == "snack package");
  CHECK(plan.subtasks[1].motion_direction == "from left to right");

  const std::string fenced = std::string("Here is the plan:\n```json\n") + kFig2Plan + "\n```\nDone.";
  CHECK(parse_high_level_response(fenced) == plan);
  CHECK(parse_high_level_response(serialize(plan)) == plan);

  CHECK_THROWS_AS(parse_high_level_response("[]"), EmptyPlan);
  CHECK_THROWS_AS(parse_high_level_response("no json here"), MalformedJson);
  CHECK_THROWS_AS(parse_high_level_response("[{\"instruction\": \"x\", \"object_grasped\": \"a\"}]"), MissingField);
  try {
    parse_high_level_response(R"([{"instruction":"x","object_grasped":"a","object_unattached":""}])");
    FAIL("expected MissingField");
  } catch (const MissingField& e) {
    CHECK(e.field == "motion_direction");
  }
}

TEST_CASE("low-level parsing examples") {
  const MarkSet ms = synthetic_markset(true, true);
  const auto r = parse_low_level_response(kSweep, ms);
  CHECK(r.grasp_keypoint == "P1");
  CHECK(r.function_keypoint == "P4");
  CHECK(r.target_keypoint == "Q2");
  CHECK(r.pre_contact_tile == TileId{1, 3});
  CHECK(r.post_contact_tile == TileId{3, 3});
  CHECK(r.pre_contact_height == Height::same);
  CHECK(r.target_angle == TargetAngle::downside);

  const std::string prose = "First I pick P1 on the handle {roughly}.\n";
  const auto with_prose = parse_low_level_response(prose + "```json\n" + kSweep + "\n```", ms);
  CHECK(with_prose == r);
  CHECK(with_prose.rationale_text == "First I pick P1 on the handle {roughly}.");
  CHECK(parse_low_level_response(prose + kSweep, ms) == r);

  std::string below = kSweep;
  below.replace(below.find("\"pre_contact_height\":\"same\""), 27, "\"pre_contact_height\":\"below\"");
  try {
    parse_low_level_response(below, ms);
    FAIL("expected InvalidOption");
  } catch (const InvalidOption& e) {
    CHECK(e.field == "pre_contact_height");
  }

  std::string empty_grasp = kSweep;
  empty_grasp.replace(empty_grasp.find("\"P1\""), 4, "\"\"");
  CHECK_THROWS_AS(parse_low_level_response(empty_grasp, ms), ConsistencyViolation);

  std::string unknown = kSweep;
  unknown.replace(unknown.find("\"Q2\""), 4, "\"Q9\"");
  CHECK_THROWS_AS(parse_low_level_response(unknown, ms), UnknownLabel);
  std::string wrong_role = kSweep;
  wrong_role.replace(wrong_role.find("\"P1\""), 4, "\"Q1\"");
  CHECK_THROWS_AS(parse_low_level_response(wrong_role, ms), UnknownLabel);

  std::string bad_tile = kSweep;
  bad_tile.replace(bad_tile.find("\"d3\""), 4, "\"g3\"");
  CHECK_THROWS_AS(parse_low_level_response(bad_tile, ms), TileOutOfRange);
  std::string malformed_tile = kSweep;
  malformed_tile.replace(malformed_tile.find("\"d3\""), 4, "\"3d\"");
  CHECK_THROWS_AS(parse_low_level_response(malformed_tile, ms), MalformedTile);

  std::string missing = kSweep;
  missing.replace(missing.find(",\"target_angle\":\"downside\""), 26, "");
  try {
    parse_low_level_response(missing, ms);
    FAIL("expected MissingField");
  } catch (const MissingField& e) {
    CHECK(e.field == "target_angle");
  }
  CHECK_THROWS_AS(parse_low_level_response("I could not decide.", ms), MalformedJson);

  const auto press = parse_low_level_response(
      R"({"grasp_keypoint":"","function_keypoint":null,"target_keypoint":"Q8","pre_contact_tile":"c3","post_contact_tile":"c3","pre_contact_height":"above","post_contact_height":"above","target_angle":""})",
      synthetic_markset(false, true));
  CHECK(press.grasp_keypoint.empty());
  CHECK(press.function_keypoint.empty());
  CHECK_FALSE(press.target_angle.has_value());
}

TEST_CASE("merged responses name their objects") {
  MarkSet ms = synthetic_markset(true, true);
  const std::string body =
      R"({"object_grasped":"broom","object_unattached":"trash","grasp_keypoint":"P1","function_keypoint":"P4","target_keypoint":"Q2","pre_contact_tile":"b3","post_contact_tile":"d3","pre_contact_height":"same","post_contact_height":"same","target_angle":"downside"})";
  const auto r = parse_low_level_response(body, ms, true);
  CHECK(r.object_grasped == "broom");
  CHECK(parse_low_level_response(serialize(r, true), ms, true) == r);
  CHECK_THROWS_AS(parse_low_level_response(kSweep, ms, true), MissingField);
  std::string wrong = body;
  wrong.replace(wrong.find("\"trash\""), 7, "\"broom\"");
  CHECK_THROWS_AS(parse_low_level_response(wrong, ms, true), ConsistencyViolation);
}

TEST_CASE("accepted responses satisfy the emptiness rules (1000 generated)") {
  std::mt19937_64 rng(1234);
  auto pick = [&](const std::vector<std::string>& options) {
    return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
  };
  const std::vector<std::string> labels{"", "", "P0", "P3", "P8", "Q1", "Q8", "P12", "X1"};
  const std::vector<std::string> tiles{"", "a1", "c3", "e5", "B2", "f1", "3c"};
  const std::vector<std::string> heights{"", "same", "above", "Above", "below"};
  const std::vector<std::string> angles{"", "forward", "backward", "upside", "downside", "left", "right", "up"};
  int accepted = 0;
  for (int i = 0; i < 1000; ++i) {
    const int shape = std::uniform_int_distribution<int>(0, 2)(rng);
    const bool g = shape != 1, u = shape != 0;
    const MarkSet ms = synthetic_markset(g, u);
    AffordanceResponse gen;
    nlohmann::ordered_json j;
    // Bias towards the consistent shape so a good share is accepted.
    const bool aim = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    j["grasp_keypoint"] = aim ? (g ? pick({"P0", "P3", "P8"}) : "") : pick(labels);
    j["function_keypoint"] = aim ? (g && u ? pick({"P1", "P5"}) : "") : pick(labels);
    j["target_keypoint"] = aim ? (u ? pick({"Q0", "Q8"}) : "") : pick(labels);
    const std::string pre = aim ? pick({"a1", "c3", "E5"}) : pick(tiles);
    const std::string post = aim ? pick({"b2", "d4"}) : pick(tiles);
    j["pre_contact_tile"] = pre;
    j["post_contact_tile"] = post;
    j["pre_contact_height"] = aim ? (pre.empty() ? "" : pick({"same", "above"})) : pick(heights);
    j["post_contact_height"] = aim ? (post.empty() ? "" : pick({"same", "above"})) : pick(heights);
    j["target_angle"] = aim ? pick({"forward", "left", "downside"}) : pick(angles);
    const std::string text = j.dump();
    try {
      const auto r = parse_low_level_response(text, ms);
      ++accepted;
      CHECK(r.grasp_keypoint.empty() == !g);
      CHECK(r.function_keypoint.empty() == (!g || !u));
      CHECK(r.target_keypoint.empty() == !u);
      CHECK(parse_low_level_response(serialize(r), ms) == r);
      CHECK(parse_low_level_response("```json\n" + text + "\n```", ms) == r);
    } catch (const UnknownLabel&) {
    } catch (const InvalidOption&) {
    } catch (const MalformedTile&) {
    } catch (const TileOutOfRange&) {
    } catch (const ConsistencyViolation&) {
    }
  }
  CHECK(accepted > 200);
}

TEST_CASE("JSON extraction") {
  std::string prefix;
  const auto j = extract_json("reason [not json] then [1, 2]", nlohmann::json::value_t::array, &prefix);
  CHECK(j == nlohmann::json::array({1, 2}));
  CHECK(prefix == "reason [not json] then");
  CHECK(extract_json(R"(x {"a": "}"} y)", nlohmann::json::value_t::object)["a"] == "}");
  CHECK(extract_json("```\n{\"k\": 1}\n```", nlohmann::json::value_t::object)["k"] == 1);
  CHECK_THROWS_AS(extract_json("{unclosed", nlohmann::json::value_t::object), MalformedJson);
}

TEST_CASE("example store selection") {
  const auto dir = std::filesystem::temp_directory_path() / "keymark_example_store";
  std::filesystem::remove_all(dir);
  ExampleStore store(dir / "examples.jsonl");
  CHECK(select_in_context_examples(store, "sweep").empty());

  std::filesystem::create_directories(dir);
  geometry::write_png(dir / "img.png", geometry::RgbImage(4, 4, geometry::Rgb{9, 9, 9}));
  for (int i = 0; i < 5; ++i) store.append({"img.png", "req" + std::to_string(i), "resp" + std::to_string(i), "sweep"});
  store.append({"img.png", "other", "other", "gift"});
  store.append({"img.png", "failed", "failed", "sweep", false});

  const auto two = select_in_context_examples(store, "sweep");
  REQUIRE(two.size() == 2);
  CHECK(two[0].request_text == "req4");
  CHECK(two[1].request_text == "req3");
  CHECK(two[0].image.image->width() == 4);
  CHECK(select_in_context_examples(store, "sweep", 3)[2].response_text == "resp2");
  CHECK(select_in_context_examples(store, "gift", 5).size() == 1);
  CHECK(select_in_context_examples(store, "sweep", 2, "high").empty());
  CHECK(store.load().size() == 7);
  std::filesystem::remove_all(dir);
}
