#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "keymark/vlm/message.hpp"

namespace keymark::vlm {

// A rule fires when every `contains` string occurs in the query text. The
// query is the last message carrying an image (the request proper), so retry
// feedback appended after it does not change which rule matches.
struct OracleRule {
  std::vector<std::string> contains;
  std::string kind{"any"};        // "high" (image without marks), "low" (annotated image) or "any"
  std::optional<int> attempt;     // 0 for the first try, 1 for the first retry, ...
  std::string response;
};

struct OracleScript {
  std::vector<OracleRule> rules;
  std::string default_response;
};

void from_json(const nlohmann::json& j, OracleRule& r);
void from_json(const nlohmann::json& j, OracleScript& s);
OracleScript load_oracle_script(const std::filesystem::path& path);

// Response templates are resolved against the mark set on the query image:
//   {{P.center}}                      label of the grasped-role center point
//   {{Q[lid].extreme:left}}           leftmost Q candidate on an object named like "lid"
//   {{P.nearest:Q.center}}            P candidate closest to another reference
//   {{P.farthest:Q.center}}           ... or farthest from it
//   {{tile:Q.center}}                 tile under a reference point
//   {{tile:Q.center@-60,0}}           tile under the point shifted by (du, dv) px, clamped to the image
// Unresolvable references expand to an empty string.
std::string resolve_templates(const std::string& text, const marks::MarkSet* markset);

// Pure rule evaluation; the first matching rule wins.
std::string oracle_query(const Conversation& messages, const OracleScript& script);

class OracleClient : public VlmClient {
 public:
  explicit OracleClient(OracleScript script) : script_(std::move(script)) {}
  std::string query(const Conversation& messages) override;

  // Transcript of every request seen, in order.
  const std::vector<nlohmann::json>& requests() const { return requests_; }

 private:
  OracleScript script_;
  std::vector<nlohmann::json> requests_;
};

}  // namespace keymark::vlm
