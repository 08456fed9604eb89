#include "reltree/tree.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <set>
#include <sstream>

#include "reltree/error.hpp"
#include "reltree/io.hpp"

namespace reltree {

using nlohmann::json;

RelationTree::RelationTree(std::vector<TreeNode> nodes, int depth_limit)
    : nodes_(std::move(nodes)), depth_limit_(depth_limit) {
  if (depth_limit_ < 1) throw ValidationError("depth_limit must be positive");
  if (nodes_.empty()) throw ValidationError("tree has no nodes");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id.empty()) throw ValidationError("node #" + std::to_string(i) + " has an empty id");
    if (!index_.emplace(nodes_[i].id, i).second) {
      throw ValidationError("duplicate node id '" + nodes_[i].id + "'");
    }
  }
  std::optional<std::size_t> root;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const TreeNode& n = nodes_[i];
    if (!n.parent) {
      if (root) throw ValidationError("multiple roots: '" + nodes_[*root].id + "' and '" + n.id + "'");
      root = i;
      continue;
    }
    auto p = index_.find(*n.parent);
    if (p == index_.end()) throw ValidationError("node '" + n.id + "' has unknown parent '" + *n.parent + "'");
    const auto& siblings = nodes_[p->second].children;
    if (std::count(siblings.begin(), siblings.end(), n.id) != 1) {
      throw ValidationError("parent '" + *n.parent + "' does not list child '" + n.id + "' exactly once");
    }
  }
  if (!root) throw ValidationError("tree has no root");
  root_ = nodes_[*root].id;

  for (const TreeNode& n : nodes_) {
    for (const NodeId& c : n.children) {
      auto it = index_.find(c);
      if (it == index_.end()) throw ValidationError("node '" + n.id + "' lists unknown child '" + c + "'");
      if (nodes_[it->second].parent != n.id) {
        throw ValidationError("child '" + c + "' does not point back to parent '" + n.id + "'");
      }
    }
  }

  // Breadth-first from the root assigns levels and proves reachability.
  std::vector<bool> seen(nodes_.size(), false);
  std::deque<std::size_t> queue{*root};
  seen[*root] = true;
  nodes_[*root].level = 0;
  std::size_t visited = 0;
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    ++visited;
    for (const NodeId& c : nodes_[i].children) {
      const std::size_t j = index_.at(c);
      if (seen[j]) throw ValidationError("cycle through node '" + c + "'");
      seen[j] = true;
      nodes_[j].level = nodes_[i].level + 1;
      queue.push_back(j);
    }
  }
  if (visited != nodes_.size()) throw ValidationError("tree has nodes unreachable from the root");

  for (const TreeNode& n : nodes_) {
    if (n.is_leaf() && n.relation) leaves_by_relation_[*n.relation].push_back(n.id);
  }
}

bool RelationTree::contains(std::string_view id) const { return index_.contains(std::string(id)); }

const TreeNode& RelationTree::node(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw ValidationError("unknown node id '" + std::string(id) + "'");
  return nodes_[it->second];
}

std::vector<NodeId> RelationTree::children_of(std::string_view id) const {
  const TreeNode& n = node(id);
  if (n.is_leaf()) return {n.id};
  return n.children;
}

bool RelationTree::is_ancestor_or_self(std::string_view ancestor, std::string_view id) const {
  const TreeNode* cur = &node(id);
  while (true) {
    if (cur->id == ancestor) return true;
    if (!cur->parent) return false;
    cur = &node(*cur->parent);
  }
}

std::vector<NodeId> RelationTree::path_to(std::string_view id) const {
  std::vector<NodeId> path;
  const TreeNode* cur = &node(id);
  while (true) {
    path.push_back(cur->id);
    if (!cur->parent) break;
    cur = &node(*cur->parent);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

const std::vector<NodeId>& RelationTree::leaves_for(std::string_view relation) const {
  static const std::vector<NodeId> kEmpty;
  auto it = leaves_by_relation_.find(std::string(relation));
  return it == leaves_by_relation_.end() ? kEmpty : it->second;
}

std::optional<NodeId> RelationTree::level_one_node(std::string_view name) const {
  for (const NodeId& c : node(root_).children) {
    if (node(c).name == name) return c;
  }
  return std::nullopt;
}

const std::string& RelationTree::display_name(std::string_view id) const { return node(id).name; }

// ---------------------------------------------------------------------------

TreeDraft::TreeDraft(std::string root_name, std::string root_description) {
  TreeNode root;
  root.id = "n" + std::to_string(next_id_++);
  root.name = std::move(root_name);
  root.description = std::move(root_description);
  index_.emplace(root.id, 0);
  nodes_.push_back(std::move(root));
}

NodeId TreeDraft::add(const NodeId& parent, std::string name, std::string description,
                      std::optional<std::string> relation) {
  TreeNode n;
  n.id = "n" + std::to_string(next_id_++);
  n.name = std::move(name);
  n.description = std::move(description);
  n.parent = parent;
  n.relation = std::move(relation);
  TreeNode& p = node(parent);
  p.children.push_back(n.id);
  n.level = p.level + 1;
  index_.emplace(n.id, nodes_.size());
  NodeId id = n.id;
  nodes_.push_back(std::move(n));
  return id;
}

NodeId TreeDraft::add_intermediate(const NodeId& parent, std::string name, std::string description) {
  return add(parent, std::move(name), std::move(description), std::nullopt);
}

NodeId TreeDraft::add_leaf(const NodeId& parent, const std::string& relation, std::string description) {
  return add(parent, relation, std::move(description), relation);
}

TreeNode& TreeDraft::node(const NodeId& id) {
  auto it = index_.find(id);
  if (it == index_.end()) throw ValidationError("unknown draft node '" + id + "'");
  return nodes_[it->second];
}

void TreeDraft::remove_subtree(const NodeId& id) {
  if (id == root()) throw ValidationError("cannot remove the root");
  std::set<NodeId> doomed;
  std::vector<NodeId> stack{id};
  while (!stack.empty()) {
    NodeId cur = stack.back();
    stack.pop_back();
    doomed.insert(cur);
    for (const NodeId& c : node(cur).children) stack.push_back(c);
  }
  const NodeId parent = *node(id).parent;
  auto& siblings = node(parent).children;
  siblings.erase(std::remove(siblings.begin(), siblings.end(), id), siblings.end());
  std::erase_if(nodes_, [&](const TreeNode& n) { return doomed.contains(n.id); });
  index_.clear();
  for (std::size_t i = 0; i < nodes_.size(); ++i) index_.emplace(nodes_[i].id, i);
}

RelationTree TreeDraft::finish(int depth_limit) const { return RelationTree(nodes_, depth_limit); }

// ---------------------------------------------------------------------------

std::vector<std::vector<NodeId>> paths_to_relation(const RelationTree& tree, std::string_view relation) {
  const auto& leaves = tree.leaves_for(relation);
  if (leaves.empty()) {
    throw ValidationError("relation '" + std::string(relation) + "' is carried by no leaf");
  }
  std::vector<std::pair<std::vector<std::string>, std::vector<NodeId>>> keyed;
  for (const NodeId& leaf : leaves) {
    std::vector<NodeId> path = tree.path_to(leaf);
    std::vector<std::string> names;
    for (const NodeId& id : path) names.push_back(tree.node(id).name);
    keyed.emplace_back(std::move(names), std::move(path));
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::vector<NodeId>> out;
  for (auto& [names, path] : keyed) out.push_back(std::move(path));
  return out;
}

std::string_view to_string(Finding::Kind kind) {
  switch (kind) {
    case Finding::Kind::missing_relation: return "missing_relation";
    case Finding::Kind::hallucinated_relation: return "hallucinated_relation";
    case Finding::Kind::level_one_shape: return "level_one_shape";
    case Finding::Kind::na_placement: return "na_placement";
    case Finding::Kind::depth_overflow: return "depth_overflow";
    case Finding::Kind::sibling_name_clash: return "sibling_name_clash";
    case Finding::Kind::leaf_without_relation: return "leaf_without_relation";
    case Finding::Kind::intermediate_with_relation: return "intermediate_with_relation";
  }
  return "unknown";
}

bool ValidationReport::has(Finding::Kind kind) const {
  return std::any_of(findings.begin(), findings.end(), [&](const Finding& f) { return f.kind == kind; });
}

std::string ValidationReport::summary() const {
  std::ostringstream out;
  for (const Finding& f : findings) {
    out << to_string(f.kind) << " [" << f.node << "]: " << f.message << '\n';
  }
  return out.str();
}

ValidationReport validate(const RelationTree& tree, const RelationSchema& schema) {
  ValidationReport report;
  auto add = [&](Finding::Kind kind, const NodeId& id, std::string message) {
    report.findings.push_back({kind, id, std::move(message)});
  };

  for (const TreeNode& n : tree.nodes()) {
    if (n.is_leaf() && !n.relation && n.id != tree.root_id()) {
      add(Finding::Kind::leaf_without_relation, n.id, "leaf '" + n.name + "' carries no relation");
    }
    if (!n.is_leaf() && n.relation) {
      add(Finding::Kind::intermediate_with_relation, n.id,
          "intermediate '" + n.name + "' carries relation '" + *n.relation + "'");
    }
    if (n.relation && !schema.contains(*n.relation)) {
      add(Finding::Kind::hallucinated_relation, n.id, "relation '" + *n.relation + "' is not in the schema");
    }
    if (n.level > tree.depth_limit() - 1) {
      add(Finding::Kind::depth_overflow, n.id,
          "node '" + n.name + "' at level " + std::to_string(n.level) + " exceeds depth limit " +
              std::to_string(tree.depth_limit()));
    }
    std::set<std::string> names;
    for (const NodeId& c : n.children) {
      if (!names.insert(tree.node(c).name).second) {
        add(Finding::Kind::sibling_name_clash, c, "duplicate child name '" + tree.node(c).name + "' under '" + n.name + "'");
      }
    }
  }

  for (const Relation& rel : schema.relations()) {
    if (tree.leaves_for(rel.name).empty()) {
      add(Finding::Kind::missing_relation, tree.root_id(), "relation '" + rel.name + "' is carried by no leaf");
    }
  }

  // Level 1: "no valid relation" (NA only) plus "valid relations" whenever
  // the schema has positive relations.
  const TreeNode& root = tree.node(tree.root_id());
  const auto valid = tree.level_one_node(kValidRelationsName);
  const auto no_valid = tree.level_one_node(kNoValidRelationName);
  const bool has_positive = schema.size() > 1;
  const std::size_t expected = has_positive ? 2 : 1;
  if (root.children.size() != expected || !no_valid || (has_positive && !valid)) {
    add(Finding::Kind::level_one_shape, root.id,
        "level 1 must hold exactly '" + std::string(kValidRelationsName) + "' and '" +
            std::string(kNoValidRelationName) + "'");
  }
  for (const TreeNode& n : tree.nodes()) {
    if (!n.relation) continue;
    const bool under_no_valid = no_valid && tree.is_ancestor_or_self(*no_valid, n.id);
    if (schema.is_na(*n.relation) != under_no_valid) {
      add(Finding::Kind::na_placement, n.id,
          schema.is_na(*n.relation) ? "NA leaf outside '" + std::string(kNoValidRelationName) + "'"
                                    : "relation '" + *n.relation + "' under '" + std::string(kNoValidRelationName) + "'");
    }
  }
  return report;
}

TreeStats stats(const RelationTree& tree) {
  TreeStats s;
  for (const TreeNode& n : tree.nodes()) {
    const auto level = static_cast<std::size_t>(n.level);
    if (s.nodes_per_level.size() <= level) s.nodes_per_level.resize(level + 1, 0);
    ++s.nodes_per_level[level];
    if (n.is_leaf()) {
      ++s.leaf_count;
    } else {
      ++s.parent_count;
      if (n.id != tree.root_id()) ++s.intermediate_count;
    }
    if (n.id != tree.root_id()) ++s.non_root_count;
  }
  s.depth = static_cast<int>(s.nodes_per_level.size());
  s.avg_children = s.parent_count == 0 ? 0.0
                                       : static_cast<double>(s.non_root_count) / static_cast<double>(s.parent_count);
  return s;
}

// ---------------------------------------------------------------------------
// Zhang-Shasha ordered tree edit distance.

namespace {

struct PostorderTree {
  std::vector<std::string> labels;   // postorder, 1-based (index 0 unused)
  std::vector<std::size_t> leftmost; // leftmost leaf descendant, 1-based
  std::vector<std::size_t> keyroots;
};

PostorderTree postorder(const RelationTree& tree) {
  PostorderTree out;
  out.labels.emplace_back();
  out.leftmost.push_back(0);
  // Iterative postorder: (node, child cursor, leftmost of first child).
  struct Frame {
    const TreeNode* node;
    std::size_t next_child;
    std::size_t leftmost;
  };
  std::vector<Frame> stack{{&tree.node(tree.root_id()), 0, 0}};
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_child < top.node->children.size()) {
      const TreeNode* child = &tree.node(top.node->children[top.next_child]);
      ++top.next_child;
      stack.push_back({child, 0, 0});
      continue;
    }
    out.labels.push_back(top.node->name);
    const std::size_t index = out.labels.size() - 1;
    const std::size_t lm = top.node->children.empty() ? index : top.leftmost;
    out.leftmost.push_back(lm);
    stack.pop_back();
    if (!stack.empty() && stack.back().next_child == 1) stack.back().leftmost = lm;
  }
  const std::size_t n = out.labels.size() - 1;
  std::set<std::size_t> seen_lm;
  for (std::size_t i = n; i >= 1; --i) {
    if (seen_lm.insert(out.leftmost[i]).second) out.keyroots.push_back(i);
  }
  std::sort(out.keyroots.begin(), out.keyroots.end());
  return out;
}

}  // namespace

std::size_t tree_edit_distance(const RelationTree& a, const RelationTree& b) {
  const PostorderTree ta = postorder(a);
  const PostorderTree tb = postorder(b);
  const std::size_t n = ta.labels.size() - 1;
  const std::size_t m = tb.labels.size() - 1;
  std::vector<std::vector<std::size_t>> treedist(n + 1, std::vector<std::size_t>(m + 1, 0));
  std::vector<std::vector<std::size_t>> fd(n + 2, std::vector<std::size_t>(m + 2, 0));

  for (std::size_t i : ta.keyroots) {
    for (std::size_t j : tb.keyroots) {
      const std::size_t li = ta.leftmost[i];
      const std::size_t lj = tb.leftmost[j];
      // Row x - li + 1 holds the forest ta[li..x]; row 0 is the empty forest.
      fd[0][0] = 0;
      for (std::size_t x = li; x <= i; ++x) fd[x - li + 1][0] = fd[x - li][0] + 1;
      for (std::size_t y = lj; y <= j; ++y) fd[0][y - lj + 1] = fd[0][y - lj] + 1;
      for (std::size_t x = li; x <= i; ++x) {
        const std::size_t r = x - li + 1;
        for (std::size_t y = lj; y <= j; ++y) {
          const std::size_t c = y - lj + 1;
          const std::size_t del = fd[r - 1][c] + 1;
          const std::size_t ins = fd[r][c - 1] + 1;
          if (ta.leftmost[x] == li && tb.leftmost[y] == lj) {
            const std::size_t rel = fd[r - 1][c - 1] + (ta.labels[x] == tb.labels[y] ? 0 : 1);
            fd[r][c] = std::min({del, ins, rel});
            treedist[x][y] = fd[r][c];
          } else {
            const std::size_t sub = fd[ta.leftmost[x] - li][tb.leftmost[y] - lj] + treedist[x][y];
            fd[r][c] = std::min({del, ins, sub});
          }
        }
      }
    }
  }
  return treedist[n][m];
}

double tree_edit_similarity(const RelationTree& a, const RelationTree& b) {
  const double norm = static_cast<double>(std::max(a.size(), b.size()));
  if (norm == 0.0) return 100.0;
  return 100.0 * (1.0 - static_cast<double>(tree_edit_distance(a, b)) / norm);
}

// ---------------------------------------------------------------------------

RelationTree load_tree(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("tree is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("depth_limit") || !doc["depth_limit"].is_number_integer()) {
    throw ValidationError("tree document needs an integer 'depth_limit'");
  }
  if (!doc.contains("nodes") || !doc["nodes"].is_array()) {
    throw ValidationError("tree document needs a 'nodes' array");
  }
  std::vector<TreeNode> nodes;
  for (const auto& rec : doc["nodes"]) {
    if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string()) {
      throw ValidationError("tree node lacks a string 'id'");
    }
    TreeNode n;
    n.id = rec["id"].get<std::string>();
    n.name = rec.value("name", std::string{});
    n.description = rec.value("description", std::string{});
    if (rec.contains("parent") && !rec["parent"].is_null()) n.parent = rec["parent"].get<std::string>();
    if (rec.contains("children")) n.children = rec["children"].get<std::vector<std::string>>();
    if (rec.contains("relation") && !rec["relation"].is_null()) n.relation = rec["relation"].get<std::string>();
    nodes.push_back(std::move(n));
  }
  return RelationTree(std::move(nodes), doc["depth_limit"].get<int>());
}

RelationTree load_tree_file(const std::string& path) { return load_tree(io::read_file(path)); }

json tree_to_json(const RelationTree& tree) {
  json nodes = json::array();
  for (const TreeNode& n : tree.nodes()) {
    json rec = {{"id", n.id},
                {"name", n.name},
                {"description", n.description},
                {"parent", n.parent ? json(*n.parent) : json(nullptr)},
                {"children", n.children}};
    if (n.relation) rec["relation"] = *n.relation;
    nodes.push_back(std::move(rec));
  }
  return {{"depth_limit", tree.depth_limit()}, {"nodes", std::move(nodes)}};
}

std::string save_tree(const RelationTree& tree) { return tree_to_json(tree).dump(2) + "\n"; }

std::string dump_tree(const RelationTree& tree) {
  std::ostringstream out;
  std::vector<NodeId> stack{tree.root_id()};
  while (!stack.empty()) {
    const TreeNode& n = tree.node(stack.back());
    stack.pop_back();
    out << std::string(static_cast<std::size_t>(n.level) * 2, ' ') << n.name;
    if (n.relation && *n.relation != n.name) out << " [" << *n.relation << "]";
    out << '\n';
    for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
  }
  return out.str();
}

}  // namespace reltree
