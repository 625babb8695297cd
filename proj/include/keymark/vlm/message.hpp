#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "keymark/geometry/image.hpp"
#include "keymark/marks/marks.hpp"

namespace keymark::vlm {

enum class Role { system, user, assistant };
std::string_view to_string(Role role);

// An image travels with a stable reference (file path or observation id) and,
// for annotated images, the mark set drawn on it.
struct ImagePart {
  std::string ref;
  std::shared_ptr<const geometry::RgbImage> image;
  std::optional<marks::MarkSet> markset;
};

using Part = std::variant<std::string, ImagePart>;

struct Message {
  Role role{Role::user};
  std::vector<Part> parts;
};

using Conversation = std::vector<Message>;

// FNV-1a over width, height and raw RGB bytes.
std::uint64_t image_hash(const geometry::RgbImage& image);

// Text parts verbatim; images as {"image": ref, "sha": hex hash}. Stable
// across runs, so transcripts can be compared byte for byte.
nlohmann::json transcript_json(const Conversation& messages);

// All text parts joined with newlines, used for rule matching.
std::string all_text(const Conversation& messages);

// Mark set of the last image part that carries one.
const marks::MarkSet* last_markset(const Conversation& messages);

class VlmClient {
 public:
  virtual ~VlmClient() = default;
  virtual std::string query(const Conversation& messages) = 0;
};

}  // namespace keymark::vlm
