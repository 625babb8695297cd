#include "keymark/vlm/wire.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>

#include "keymark/geometry/image_io.hpp"

namespace keymark::vlm {

void VlmConfig::validate() const {
  if (!(timeout_s > 0.0)) throw ConfigError("vlm timeout_s must be positive");
  if (retries < 0) throw ConfigError("vlm retries must be non-negative");
  if (max_tokens <= 0) throw ConfigError("vlm max_tokens must be positive");
  if (max_image_side < 16) throw ConfigError("vlm max_image_side must be at least 16");
  if (backoff_s < 0.0) throw ConfigError("vlm backoff_s must be non-negative");
  if (endpoint.empty()) throw ConfigError("vlm endpoint is empty");
}

void to_json(nlohmann::json& j, const VlmConfig& c) {
  j = {{"endpoint", c.endpoint},       {"model", c.model},       {"temperature", c.temperature},
       {"max_tokens", c.max_tokens},   {"timeout_s", c.timeout_s}, {"retries", c.retries},
       {"api_key_env", c.api_key_env}, {"max_image_side", c.max_image_side}, {"backoff_s", c.backoff_s}};
}

void from_json(const nlohmann::json& j, VlmConfig& c) {
  const VlmConfig d;
  c.endpoint = j.value("endpoint", d.endpoint);
  c.model = j.value("model", d.model);
  c.temperature = j.value("temperature", d.temperature);
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.timeout_s = j.value("timeout_s", d.timeout_s);
  c.retries = j.value("retries", d.retries);
  c.api_key_env = j.value("api_key_env", d.api_key_env);
  c.max_image_side = j.value("max_image_side", d.max_image_side);
  c.backoff_s = j.value("backoff_s", d.backoff_s);
  c.validate();
}

VlmConfig load_vlm_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vlm config " + path.string());
  try {
    return nlohmann::json::parse(in).get<VlmConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad vlm config " + path.string() + ": " + e.what());
  }
}

geometry::RgbImage downscale_to_fit(const geometry::RgbImage& image, int max_side) {
  const int w = image.width();
  const int h = image.height();
  const int side = std::max(w, h);
  if (side <= max_side) return image;
  const double s = static_cast<double>(max_side) / side;
  const int ow = std::max(1, static_cast<int>(std::lround(w * s)));
  const int oh = std::max(1, static_cast<int>(std::lround(h * s)));
  geometry::RgbImage out(ow, oh);
  for (int v = 0; v < oh; ++v) {
    const int v0 = v * h / oh;
    const int v1 = std::max(v0 + 1, (v + 1) * h / oh);
    for (int u = 0; u < ow; ++u) {
      const int u0 = u * w / ow;
      const int u1 = std::max(u0 + 1, (u + 1) * w / ow);
      std::array<long, 3> sum{};
      for (int y = v0; y < v1; ++y)
        for (int x = u0; x < u1; ++x)
          for (int c = 0; c < 3; ++c) sum[c] += image.at(x, y)[c];
      const long n = static_cast<long>(u1 - u0) * (v1 - v0);
      for (int c = 0; c < 3; ++c) out.at(u, v)[c] = static_cast<std::uint8_t>((sum[c] + n / 2) / n);
    }
  }
  return out;
}

nlohmann::json build_request_body(const Conversation& messages, const VlmConfig& cfg) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) {
    nlohmann::json content = nlohmann::json::array();
    for (const auto& part : m.parts) {
      if (const auto* text = std::get_if<std::string>(&part)) {
        content.push_back({{"type", "text"}, {"text", *text}});
        continue;
      }
      const auto& img = std::get<ImagePart>(part);
      if (!img.image) throw IoError("image part \"" + img.ref + "\" has no pixels");
      const auto png = geometry::encode_png(downscale_to_fit(*img.image, cfg.max_image_side));
      const std::string b64 = httplib::detail::base64_encode(std::string(png.begin(), png.end()));
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + b64}}}});
    }
    msgs.push_back({{"role", std::string(to_string(m.role))}, {"content", std::move(content)}});
  }
  return {{"model", cfg.model},
          {"temperature", cfg.temperature},
          {"max_tokens", cfg.max_tokens},
          {"messages", std::move(msgs)}};
}

std::string parse_completion(int status, const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ApiError(status, body);
  }
}

WireClient::WireClient(VlmConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
}

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ConfigError("vlm endpoint is not an http(s) URL: " + url);
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

}  // namespace

std::string WireClient::query(const Conversation& messages) {
  if (messages.empty()) throw ConfigError("vlm query needs at least one message");
  const auto ep = split_endpoint(cfg_.endpoint);
  const std::string body = build_request_body(messages, cfg_).dump();

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  double delay = cfg_.backoff_s;
  for (int attempt = 0;; ++attempt) {
    httplib::Client client(ep.base);
    client.set_connection_timeout(timeout_us);
    client.set_read_timeout(timeout_us);
    client.set_write_timeout(timeout_us);

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(ep.path, headers, body, "application/json");
    if (res) {
      if (res->status < 200 || res->status >= 300) throw ApiError(res->status, res->body);
      return parse_completion(res->status, res->body);
    }

    const auto err = res.error();
    const auto elapsed = std::chrono::steady_clock::now() - start;
    const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                           (err == httplib::Error::Read && elapsed >= timeout * 0.9);
    if (attempt >= cfg_.retries) {
      const std::string what = cfg_.endpoint + " after " + std::to_string(attempt + 1) + " attempt(s): " +
                               httplib::to_string(err);
      if (timed_out) throw Timeout("vlm request timed out at " + what);
      throw TransportError("vlm transport failure at " + what);
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    delay *= 2.0;
  }
}

}  // namespace keymark::vlm
