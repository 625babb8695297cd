#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "keymark/vlm/message.hpp"

namespace keymark::vlm {

struct VlmConfig {
  std::string endpoint{"https://api.openai.com/v1/chat/completions"};
  std::string model{"gpt-4o"};
  double temperature{0.0};
  int max_tokens{1024};
  double timeout_s{60.0};
  int retries{2};
  std::string api_key_env{"OPENAI_API_KEY"};
  int max_image_side{1024};
  double backoff_s{1.0};  // first backoff delay, doubled per retry

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

void to_json(nlohmann::json& j, const VlmConfig& c);
void from_json(const nlohmann::json& j, VlmConfig& c);
VlmConfig load_vlm_config(const std::filesystem::path& path);

// Box-filter downscale so the long side is at most max_side; smaller images are returned as is.
geometry::RgbImage downscale_to_fit(const geometry::RgbImage& image, int max_side);

// Chat-completion request body; images become base64 PNG data URLs.
nlohmann::json build_request_body(const Conversation& messages, const VlmConfig& cfg);

// Text of the first choice. Throws ApiError when the body has no such field.
std::string parse_completion(int status, const std::string& body);

class WireClient : public VlmClient {
 public:
  // The API key is read from cfg.api_key_env at construction; an unset variable
  // sends no Authorization header.
  explicit WireClient(VlmConfig cfg);
  std::string query(const Conversation& messages) override;

  const VlmConfig& config() const { return cfg_; }

 private:
  VlmConfig cfg_;
  std::string api_key_;
};

}  // namespace keymark::vlm
