#include "reltree/prompts.hpp"

#include <filesystem>
#include <regex>
#include <set>

#include "reltree/error.hpp"
#include "reltree/io.hpp"

namespace reltree {

namespace {
#include "prompt_defaults.inc"
}  // namespace

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.criterion_generation = kCriterionGeneration;
  t.node_name_generation = kNodeNameGeneration;
  t.relation_assignment = kRelationAssignment;
  t.single_shot_tree = kSingleShotTree;
  t.missing_relation_placement = kMissingRelationPlacement;
  t.coherence = kCoherence;
  t.classification = kClassification;
  return t;
}

PromptTemplates PromptTemplates::from_directory(const std::string& directory) {
  namespace fs = std::filesystem;
  PromptTemplates t = defaults();
  const std::pair<const char*, std::string*> files[] = {
      {"criterion_generation.txt", &t.criterion_generation},
      {"node_name_generation.txt", &t.node_name_generation},
      {"relation_assignment.txt", &t.relation_assignment},
      {"single_shot_tree.txt", &t.single_shot_tree},
      {"missing_relation_placement.txt", &t.missing_relation_placement},
      {"coherence.txt", &t.coherence},
      {"classification.txt", &t.classification},
  };
  for (const auto& [name, slot] : files) {
    const fs::path path = fs::path(directory) / name;
    if (fs::exists(path)) *slot = io::read_file(path.string());
  }
  return t;
}

std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  static const std::regex kPlaceholder(R"(\[([A-Z][A-Z0-9_]*)\])");
  const std::string source(tmpl);
  std::set<std::string> missing;
  for (auto it = std::sregex_iterator(source.begin(), source.end(), kPlaceholder); it != std::sregex_iterator(); ++it) {
    if (!values.contains((*it)[1].str())) missing.insert((*it)[1].str());
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw ValidationError("template placeholders without values: " + names);
  }
  std::string out;
  out.reserve(source.size());
  std::size_t pos = 0;
  while (pos < source.size()) {
    const std::size_t open = source.find('[', pos);
    if (open == std::string::npos) break;
    const std::size_t close = source.find(']', open);
    if (close == std::string::npos) break;
    auto hit = values.find(source.substr(open + 1, close - open - 1));
    if (hit == values.end()) {
      out.append(source, pos, open + 1 - pos);
      pos = open + 1;
      continue;
    }
    out.append(source, pos, open - pos);
    out += hit->second;
    pos = close + 1;
  }
  out.append(source, pos, std::string::npos);
  return out;
}

nlohmann::ordered_json extract_json(std::string_view response) {
  std::string_view body = response;
  const std::size_t fence = response.find("```");
  if (fence != std::string_view::npos) {
    std::size_t start = response.find('\n', fence);
    const std::size_t end = start == std::string_view::npos ? std::string_view::npos : response.find("```", start);
    if (start != std::string_view::npos && end != std::string_view::npos) {
      body = response.substr(start + 1, end - start - 1);
    }
  }
  try {
    return nlohmann::ordered_json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("response is not valid JSON: ") + e.what(), std::string(response));
  }
}

std::vector<std::string> fenced_blocks(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t fence = text.find("```", pos);
    if (fence == std::string_view::npos) break;
    const std::size_t start = text.find('\n', fence);
    if (start == std::string_view::npos) break;
    const std::size_t end = text.find("```", start);
    if (end == std::string_view::npos) break;
    out.emplace_back(text.substr(start + 1, end - start - 1));
    pos = end + 3;
  }
  return out;
}

}  // namespace reltree
