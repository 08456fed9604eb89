#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace reltree {

struct Relation {
  std::string name;
  std::string description;

  friend bool operator==(const Relation&, const Relation&) = default;
};

/// The predefined relation set. NA is an ordinary entry flagged by `na_label`.
class RelationSchema {
 public:
  RelationSchema() = default;

  /// Validates uniqueness, non-empty descriptions and NA membership.
  /// Throws ValidationError naming the offending entry.
  RelationSchema(std::vector<Relation> relations, std::string na_label);

  [[nodiscard]] const std::vector<Relation>& relations() const noexcept { return relations_; }
  [[nodiscard]] const std::string& na_label() const noexcept { return na_label_; }
  [[nodiscard]] std::size_t size() const noexcept { return relations_.size(); }

  [[nodiscard]] bool contains(std::string_view name) const;
  [[nodiscard]] bool is_na(std::string_view name) const { return name == na_label_; }
  [[nodiscard]] const Relation& at(std::string_view name) const;

  /// Relations other than NA, in schema order.
  [[nodiscard]] std::vector<Relation> positive_relations() const;

  friend bool operator==(const RelationSchema&, const RelationSchema&) = default;

 private:
  std::vector<Relation> relations_;
  std::string na_label_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// One classification unit: a text path plus an entity pair.
struct Instance {
  std::string id;
  std::vector<std::string> context;
  std::string head;
  std::string tail;
  std::optional<std::string> gold;
  std::optional<std::string> bag_id;

  friend bool operator==(const Instance&, const Instance&) = default;
};

[[nodiscard]] RelationSchema load_schema(std::string_view document);
[[nodiscard]] RelationSchema load_schema_file(const std::string& path);
[[nodiscard]] nlohmann::json schema_to_json(const RelationSchema& schema);
[[nodiscard]] std::string save_schema(const RelationSchema& schema);

/// Parses a JSON-lines dataset. Blank lines are ignored. Errors carry the
/// 1-based line number; nothing after a failing line is read.
[[nodiscard]] std::vector<Instance> load_dataset(std::string_view stream,
                                                 const RelationSchema& schema);
[[nodiscard]] std::vector<Instance> load_dataset_file(const std::string& path,
                                                      const RelationSchema& schema);
[[nodiscard]] nlohmann::json instance_to_json(const Instance& instance);
[[nodiscard]] std::string save_dataset(const std::vector<Instance>& instances);

/// Instance indices grouped by bag id, in first-appearance order of the bag.
/// Instances without a bag id are skipped.
[[nodiscard]] std::vector<std::pair<std::string, std::vector<std::size_t>>> group_bags(
    const std::vector<Instance>& instances);

}  // namespace reltree
