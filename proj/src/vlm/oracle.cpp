#include "keymark/vlm/oracle.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>

namespace keymark::vlm {

void from_json(const nlohmann::json& j, OracleRule& r) {
  r.contains = j.value("contains", std::vector<std::string>{});
  r.kind = j.value("kind", std::string("any"));
  if (r.kind != "any" && r.kind != "high" && r.kind != "low") {
    throw ConfigError("oracle rule kind must be any, high or low, got \"" + r.kind + "\"");
  }
  if (j.contains("attempt")) r.attempt = j.at("attempt").get<int>();
  r.response = j.at("response").get<std::string>();
}

void from_json(const nlohmann::json& j, OracleScript& s) {
  s.rules = j.value("rules", std::vector<OracleRule>{});
  s.default_response = j.value("default_response", std::string{});
}

OracleScript load_oracle_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open oracle script " + path.string());
  try {
    return nlohmann::json::parse(in).get<OracleScript>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad oracle script " + path.string() + ": " + e.what());
  }
}

namespace {

using marks::KeypointCandidate;
using marks::KeypointSource;
using marks::MarkSet;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

long d2(geometry::Pixel a, geometry::Pixel b) {
  const long du = a.u - b.u;
  const long dv = a.v - b.v;
  return du * du + dv * dv;
}

const KeypointCandidate* resolve_ref(std::string_view ref, const MarkSet& ms) {
  if (ref.empty() || (ref[0] != 'P' && ref[0] != 'Q')) return nullptr;
  const auto role = ref[0] == 'P' ? marks::ObjectRole::grasped : marks::ObjectRole::unattached;
  std::size_t pos = 1;
  std::string object;
  if (pos < ref.size() && ref[pos] == '[') {
    const auto close = ref.find(']', pos);
    if (close == std::string_view::npos) return nullptr;
    object = lower(std::string(ref.substr(pos + 1, close - pos - 1)));
    pos = close + 1;
  }
  if (pos >= ref.size() || ref[pos] != '.') return nullptr;
  const std::string_view sel = ref.substr(pos + 1);

  std::vector<const KeypointCandidate*> pool;
  for (const auto& c : ms.candidates) {
    if (c.role == role && (object.empty() || lower(c.object).find(object) != std::string::npos)) pool.push_back(&c);
  }
  if (pool.empty()) return nullptr;

  if (sel == "center") {
    for (const auto* c : pool)
      if (c->source == KeypointSource::center) return c;
    return nullptr;
  }
  if (sel.rfind("extreme:", 0) == 0) {
    const std::string_view dir = sel.substr(8);
    auto key = [&](const KeypointCandidate* c) -> int {
      if (dir == "left") return c->pixel.u;
      if (dir == "right") return -c->pixel.u;
      if (dir == "top") return c->pixel.v;
      return -c->pixel.v;
    };
    if (dir != "left" && dir != "right" && dir != "top" && dir != "bottom") return nullptr;
    return *std::min_element(pool.begin(), pool.end(), [&](auto a, auto b) { return key(a) < key(b); });
  }
  for (const std::string_view mode : {"nearest:", "farthest:"}) {
    if (sel.rfind(mode, 0) != 0) continue;
    const auto* anchor = resolve_ref(sel.substr(mode.size()), ms);
    if (!anchor) return nullptr;
    const bool nearest = mode == "nearest:";
    const KeypointCandidate* best = nullptr;
    for (const auto* c : pool) {
      if (!best) {
        best = c;
        continue;
      }
      const long dc = d2(c->pixel, anchor->pixel);
      const long db = d2(best->pixel, anchor->pixel);
      if (nearest ? dc < db : dc > db) best = c;
    }
    return best;
  }
  if (sel.rfind("index:", 0) == 0) {
    const std::string label = std::string(1, ref[0]) + std::string(sel.substr(6));
    for (const auto* c : pool)
      if (c->label == label) return c;
  }
  return nullptr;
}

std::string expand(std::string_view expr, const MarkSet* ms) {
  if (!ms) return {};
  if (expr.rfind("tile:", 0) == 0) {
    std::string_view ref = expr.substr(5);
    int du = 0;
    int dv = 0;
    if (const auto at = ref.rfind('@'); at != std::string_view::npos) {
      const std::string offset(ref.substr(at + 1));
      if (std::sscanf(offset.c_str(), "%d,%d", &du, &dv) != 2) return {};
      ref = ref.substr(0, at);
    }
    const auto* c = resolve_ref(ref, *ms);
    if (!c) return {};
    const geometry::Pixel p{std::clamp(c->pixel.u + du, 0, ms->grid.width - 1),
                            std::clamp(c->pixel.v + dv, 0, ms->grid.height - 1)};
    return marks::tile_name(marks::tile_at(ms->grid, p));
  }
  const auto* c = resolve_ref(expr, *ms);
  return c ? c->label : std::string{};
}

}  // namespace

std::string resolve_templates(const std::string& text, const marks::MarkSet* markset) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("{{", pos);
    if (open == std::string::npos) break;
    const auto close = text.find("}}", open + 2);
    if (close == std::string::npos) break;
    out.append(text, pos, open - pos);
    out += expand(std::string_view(text).substr(open + 2, close - open - 2), markset);
    pos = close + 2;
  }
  out.append(text, pos, std::string::npos);
  return out;
}

std::string oracle_query(const Conversation& messages, const OracleScript& script) {
  // The request proper is the last message with an image.
  std::size_t query = messages.empty() ? 0 : messages.size() - 1;
  const ImagePart* image = nullptr;
  for (std::size_t i = messages.size(); i-- > 0 && !image;) {
    for (const auto& p : messages[i].parts) {
      if (const auto* img = std::get_if<ImagePart>(&p)) {
        image = img;
        query = i;
      }
    }
  }
  int attempt = 0;
  for (std::size_t i = query + 1; i < messages.size(); ++i) attempt += messages[i].role == Role::assistant;

  std::string text;
  if (!messages.empty()) {
    for (const auto& p : messages[query].parts)
      if (const auto* t = std::get_if<std::string>(&p)) text += *t + "\n";
  }
  const bool annotated = image && image->markset;
  const marks::MarkSet* ms = annotated ? &*image->markset : nullptr;

  for (const auto& rule : script.rules) {
    if (rule.kind == "high" && annotated) continue;
    if (rule.kind == "low" && !annotated) continue;
    if (rule.attempt && *rule.attempt != attempt) continue;
    const bool all = std::all_of(rule.contains.begin(), rule.contains.end(),
                                 [&](const std::string& needle) { return text.find(needle) != std::string::npos; });
    if (all) return resolve_templates(rule.response, ms);
  }
  return resolve_templates(script.default_response, ms);
}

std::string OracleClient::query(const Conversation& messages) {
  requests_.push_back(transcript_json(messages));
  return oracle_query(messages, script_);
}

}  // namespace keymark::vlm
