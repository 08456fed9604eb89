#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace reltree {

/// Text templates with bracketed placeholders such as [CRITERION_NAME].
/// Defaults ship in the prompts/ directory and are compiled in.
struct PromptTemplates {
  std::string criterion_generation;
  std::string node_name_generation;
  std::string relation_assignment;
  std::string single_shot_tree;
  std::string missing_relation_placement;
  std::string coherence;
  std::string classification;  // uses {context} {head} {tail} {options}

  static PromptTemplates defaults();

  /// Defaults overridden by any `<name>.txt` file found in `directory`.
  static PromptTemplates from_directory(const std::string& directory);
};

/// Replaces every [KEY] with its value. Throws ValidationError when the
/// template holds an upper-case bracketed placeholder with no value.
[[nodiscard]] std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// Parses the first fenced code block when one exists, else the whole body.
/// Throws ParseError carrying the raw response.
[[nodiscard]] nlohmann::ordered_json extract_json(std::string_view response);

/// Bodies of all ``` fenced blocks, in order.
[[nodiscard]] std::vector<std::string> fenced_blocks(std::string_view text);

}  // namespace reltree
