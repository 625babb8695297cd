#include "keymark/vlm/message.hpp"

#include <cstdio>

namespace keymark::vlm {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      return "assistant";
  }
  return "user";
}

std::uint64_t image_hash(const geometry::RgbImage& image) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (int shift = 0; shift < 32; shift += 8) mix(static_cast<std::uint8_t>(image.width() >> shift));
  for (int shift = 0; shift < 32; shift += 8) mix(static_cast<std::uint8_t>(image.height() >> shift));
  for (const auto& px : image.data()) {
    mix(px[0]);
    mix(px[1]);
    mix(px[2]);
  }
  return h;
}

nlohmann::json transcript_json(const Conversation& messages) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& m : messages) {
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& p : m.parts) {
      if (const auto* text = std::get_if<std::string>(&p)) {
        parts.push_back({{"text", *text}});
      } else {
        const auto& img = std::get<ImagePart>(p);
        char hex[17];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(img.image ? image_hash(*img.image) : 0));
        parts.push_back({{"image", img.ref}, {"sha", hex}});
      }
    }
    out.push_back({{"role", to_string(m.role)}, {"parts", parts}});
  }
  return out;
}

std::string all_text(const Conversation& messages) {
  std::string out;
  for (const auto& m : messages) {
    for (const auto& p : m.parts) {
      if (const auto* text = std::get_if<std::string>(&p)) {
        if (!out.empty()) out += '\n';
        out += *text;
      }
    }
  }
  return out;
}

const marks::MarkSet* last_markset(const Conversation& messages) {
  for (auto m = messages.rbegin(); m != messages.rend(); ++m) {
    for (auto p = m->parts.rbegin(); p != m->parts.rend(); ++p) {
      if (const auto* img = std::get_if<ImagePart>(&*p); img && img->markset) return &*img->markset;
    }
  }
  return nullptr;
}

}  // namespace keymark::vlm
