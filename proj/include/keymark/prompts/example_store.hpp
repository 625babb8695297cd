#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "keymark/prompts/prompts.hpp"

namespace keymark::prompts {

inline constexpr std::size_t kDefaultInContextExamples = 2;

struct StoredExample {
  std::string image_path;  // relative paths resolve against the store's directory
  std::string request;
  std::string response;
  std::string task_family;
  bool success{true};
  std::string kind{"low"};  // "low" or "high": which prompt the pair belongs to
  friend bool operator==(const StoredExample&, const StoredExample&) = default;
};

void to_json(nlohmann::json& j, const StoredExample& e);
void from_json(const nlohmann::json& j, StoredExample& e);

// Append-only JSONL file. One writer at a time; readers see whole lines.
class ExampleStore {
 public:
  explicit ExampleStore(std::filesystem::path path);

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path directory() const { return path_.parent_path(); }

  void append(const StoredExample& example) const;
  // Oldest first, in file order. A missing file is an empty store.
  std::vector<StoredExample> load() const;

 private:
  std::filesystem::path path_;
};

// Newest successful examples of a family and kind, newest first, images loaded.
std::vector<InContextExample> select_in_context_examples(const ExampleStore& store, const std::string& task_family,
                                                         std::size_t max_n = kDefaultInContextExamples,
                                                         const std::string& kind = "low");

}  // namespace keymark::prompts
