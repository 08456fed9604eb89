#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "reltree/schema.hpp"

namespace reltree {

using NodeId = std::string;

inline constexpr std::string_view kValidRelationsName = "valid relations";
inline constexpr std::string_view kNoValidRelationName = "no valid relation";

struct TreeNode {
  NodeId id;
  std::string name;
  std::string description;
  int level = 0;  // derived from structure on construction
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  std::optional<std::string> relation;  // set on leaves

  [[nodiscard]] bool is_leaf() const noexcept { return children.empty(); }
};

/// Immutable rooted tree whose leaves carry schema relations.
///
/// Construction checks only that the node set forms a tree (unique ids, one
/// root, consistent parent/child links, everything reachable). The remaining
/// invariants (level-1 shape, coverage, depth) are reported by validate(),
/// so malformed trees can still be loaded and diagnosed.
class RelationTree {
 public:
  RelationTree() = default;
  RelationTree(std::vector<TreeNode> nodes, int depth_limit);

  [[nodiscard]] int depth_limit() const noexcept { return depth_limit_; }
  [[nodiscard]] const NodeId& root_id() const noexcept { return root_; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }

  [[nodiscard]] bool contains(std::string_view id) const;
  [[nodiscard]] const TreeNode& node(std::string_view id) const;

  /// Children in stored order. A leaf yields itself, which keeps the
  /// verification-set construction total at the bottom level.
  [[nodiscard]] std::vector<NodeId> children_of(std::string_view id) const;

  /// True when `ancestor` lies on the root path of `id` (inclusive).
  [[nodiscard]] bool is_ancestor_or_self(std::string_view ancestor, std::string_view id) const;

  /// Root-to-node id sequence.
  [[nodiscard]] std::vector<NodeId> path_to(std::string_view id) const;

  /// Leaves carrying `relation`, in stored order.
  [[nodiscard]] const std::vector<NodeId>& leaves_for(std::string_view relation) const;

  /// The level-1 node with the given name, if present.
  [[nodiscard]] std::optional<NodeId> level_one_node(std::string_view name) const;

  /// Display name; leaves show their relation.
  [[nodiscard]] const std::string& display_name(std::string_view id) const;

 private:
  std::vector<TreeNode> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, std::vector<NodeId>> leaves_by_relation_;
  NodeId root_;
  int depth_limit_ = 0;
};

/// Incremental construction helper used by builders and tests.
class TreeDraft {
 public:
  explicit TreeDraft(std::string root_name = "root", std::string root_description = "all relations");

  [[nodiscard]] const NodeId& root() const noexcept { return nodes_.front().id; }

  NodeId add_intermediate(const NodeId& parent, std::string name, std::string description = {});
  NodeId add_leaf(const NodeId& parent, const std::string& relation, std::string description = {});

  [[nodiscard]] TreeNode& node(const NodeId& id);
  [[nodiscard]] bool contains(const NodeId& id) const { return index_.contains(id); }
  [[nodiscard]] const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }

  /// Detaches and drops a subtree.
  void remove_subtree(const NodeId& id);

  [[nodiscard]] RelationTree finish(int depth_limit) const;

 private:
  NodeId add(const NodeId& parent, std::string name, std::string description,
             std::optional<std::string> relation);

  std::vector<TreeNode> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t next_id_ = 0;
};

/// Every root-to-leaf path (as node ids) ending at a leaf carrying
/// `relation`, ordered lexicographically by the node names along the path.
/// Throws ValidationError when no leaf carries the relation.
[[nodiscard]] std::vector<std::vector<NodeId>> paths_to_relation(const RelationTree& tree,
                                                                 std::string_view relation);

struct Finding {
  enum class Kind {
    missing_relation,
    hallucinated_relation,
    level_one_shape,
    na_placement,
    depth_overflow,
    sibling_name_clash,
    leaf_without_relation,
    intermediate_with_relation,
  };
  Kind kind;
  NodeId node;
  std::string message;
};

[[nodiscard]] std::string_view to_string(Finding::Kind kind);

struct ValidationReport {
  std::vector<Finding> findings;

  [[nodiscard]] bool ok() const noexcept { return findings.empty(); }
  [[nodiscard]] bool has(Finding::Kind kind) const;
  [[nodiscard]] std::string summary() const;
};

[[nodiscard]] ValidationReport validate(const RelationTree& tree, const RelationSchema& schema);

/// Root is reported on its own: nodes = 1 + intermediate_count + leaf_count.
struct TreeStats {
  int depth = 0;  // number of occupied levels
  std::vector<std::size_t> nodes_per_level;
  std::size_t leaf_count = 0;
  std::size_t intermediate_count = 0;
  std::size_t parent_count = 0;    // nodes with at least one child, root included
  std::size_t non_root_count = 0;
  double avg_children = 0.0;       // non_root_count / parent_count
};

[[nodiscard]] TreeStats stats(const RelationTree& tree);

/// Ordered labeled tree edit distance (unit insert/delete/relabel) over node names.
[[nodiscard]] std::size_t tree_edit_distance(const RelationTree& a, const RelationTree& b);

/// 100 * (1 - distance / max(|a|, |b|)).
[[nodiscard]] double tree_edit_similarity(const RelationTree& a, const RelationTree& b);

[[nodiscard]] RelationTree load_tree(std::string_view document);
[[nodiscard]] RelationTree load_tree_file(const std::string& path);
[[nodiscard]] nlohmann::json tree_to_json(const RelationTree& tree);
[[nodiscard]] std::string save_tree(const RelationTree& tree);

/// Plain-text indented rendering, one node per line.
[[nodiscard]] std::string dump_tree(const RelationTree& tree);

}  // namespace reltree
