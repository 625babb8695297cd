#include "keymark/prompts/example_store.hpp"

#include <fstream>
#include <memory>

#include "keymark/geometry/image_io.hpp"

namespace keymark::prompts {

void to_json(nlohmann::json& j, const StoredExample& e) {
  j = {{"image_path", e.image_path}, {"request", e.request},   {"response", e.response},
       {"task_family", e.task_family}, {"success", e.success}, {"kind", e.kind}};
}

void from_json(const nlohmann::json& j, StoredExample& e) {
  e.image_path = j.at("image_path").get<std::string>();
  e.request = j.at("request").get<std::string>();
  e.response = j.at("response").get<std::string>();
  e.task_family = j.at("task_family").get<std::string>();
  e.success = j.at("success").get<bool>();
  e.kind = j.value("kind", std::string("low"));
}

ExampleStore::ExampleStore(std::filesystem::path path) : path_(std::move(path)) {}

void ExampleStore::append(const StoredExample& example) const {
  if (!directory().empty()) std::filesystem::create_directories(directory());
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot open example store " + path_.string());
  out << nlohmann::json(example).dump() << '\n';
  if (!out) throw IoError("failed appending to " + path_.string());
}

std::vector<StoredExample> ExampleStore::load() const {
  std::vector<StoredExample> out;
  std::ifstream in(path_);
  if (!in) return out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<StoredExample>());
    } catch (const nlohmann::json::exception& e) {
      throw MalformedJson(path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<InContextExample> select_in_context_examples(const ExampleStore& store, const std::string& task_family,
                                                         std::size_t max_n, const std::string& kind) {
  const auto all = store.load();
  std::vector<InContextExample> out;
  for (auto it = all.rbegin(); it != all.rend() && out.size() < max_n; ++it) {
    if (!it->success || it->task_family != task_family || it->kind != kind) continue;
    std::filesystem::path image = it->image_path;
    if (image.is_relative()) image = store.directory() / image;
    vlm::ImagePart part;
    part.ref = it->image_path;
    part.image = std::make_shared<const geometry::RgbImage>(geometry::read_png_rgb(image));
    out.push_back({std::move(part), it->request, it->response});
  }
  return out;
}

}  // namespace keymark::prompts
