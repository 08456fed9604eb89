#include "reltree/tree_builder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <future>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "reltree/error.hpp"
#include "reltree/random.hpp"

namespace reltree {

using ojson = nlohmann::ordered_json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string relations_block(const std::vector<Relation>& relations) {
  ojson obj = ojson::object();
  for (const auto& r : relations) obj[r.name] = r.description;
  return obj.dump(2);
}

}  // namespace

void BuildConfig::check() const {
  if (depth_limit < 3) throw ValidationError("depth_limit must be at least 3");
  if (!criteria.empty() && static_cast<int>(criteria.size()) != depth_limit - 3) {
    throw ValidationError("criteria schedule needs depth_limit - 3 = " + std::to_string(depth_limit - 3) +
                          " entries, got " + std::to_string(criteria.size()));
  }
  if (min_children < 1 || max_children < min_children) throw ValidationError("invalid child-count bounds");
  if (max_repair_retries < 0) throw ValidationError("max_repair_retries must be non-negative");
  if (max_in_flight < 1) throw ValidationError("max_in_flight must be at least 1");
}

TreeBuilder::TreeBuilder(LlmGateway& gateway, BuildConfig config, PromptTemplates templates)
    : gateway_(gateway), config_(std::move(config)), templates_(std::move(templates)) {
  config_.check();
}

template <class Parse>
auto TreeBuilder::ask(const std::string& prompt, const std::string& purpose, Parse&& parse) {
  std::string request = prompt;
  std::string last_error;
  std::string last_raw;
  for (int attempt = 0; attempt <= config_.max_repair_retries; ++attempt) {
    const Completion reply = gateway_.complete({request, purpose, false, config_.seed});
    try {
      return parse(reply.text);
    } catch (const ParseError& e) {
      last_error = e.what();
      last_raw = reply.text;
      request = prompt + "\n\nYour previous answer was rejected: " + last_error +
                "\nAnswer again, strictly following the required output format.\n";
    }
  }
  throw ParseError(purpose + ": no usable response after " + std::to_string(config_.max_repair_retries + 1) +
                       " attempts (" + last_error + ")",
                   last_raw);
}

CriteriaResult TreeBuilder::generate_criteria(const RelationSchema& schema) {
  const std::string prompt =
      fill_template(templates_.criterion_generation, {{"RELATION_WITH_DESC", relations_block(schema.positive_relations())}});
  return ask(prompt, "criterion-generation", [](const std::string& text) {
    const ojson doc = extract_json(text);
    if (!doc.is_object()) throw ParseError("criteria response must be a JSON object", text);
    if (!doc.contains("classification criteria") || !doc["classification criteria"].is_object()) {
      throw ParseError("missing 'classification criteria' object", text);
    }
    if (!doc.contains("top2 criteria") || !doc["top2 criteria"].is_array()) {
      throw ParseError("missing 'top2 criteria' array", text);
    }
    CriteriaResult out;
    std::set<std::string> seen;
    for (const auto& [name, body] : doc["classification criteria"].items()) {
      Criterion c;
      c.name = trim(name);
      if (c.name.empty()) throw ParseError("criterion with an empty name", text);
      if (!seen.insert(lower(c.name)).second) throw ParseError("duplicate criterion '" + c.name + "'", text);
      if (body.is_object()) {
        if (body.contains("explanation") && body["explanation"].is_string()) c.explanation = body["explanation"];
        if (body.contains("possible category names") && body["possible category names"].is_array()) {
          for (const auto& cat : body["possible category names"]) {
            if (cat.is_string()) c.example_categories.push_back(cat.get<std::string>());
          }
        }
      } else if (body.is_string()) {
        c.explanation = body.get<std::string>();
      }
      out.criteria.push_back(std::move(c));
    }
    if (out.criteria.size() < 2) throw ParseError("fewer than 2 criteria", text);
    for (const auto& pick : doc["top2 criteria"]) {
      if (!pick.is_string()) throw ParseError("'top2 criteria' entries must be strings", text);
      const std::string want = lower(trim(pick.get<std::string>()));
      auto it = std::find_if(out.criteria.begin(), out.criteria.end(),
                             [&](const Criterion& c) { return lower(c.name) == want; });
      if (it == out.criteria.end()) throw ParseError("top-2 pick '" + pick.get<std::string>() + "' is not a listed criterion", text);
      if (std::find(out.top2.begin(), out.top2.end(), it->name) == out.top2.end()) out.top2.push_back(it->name);
    }
    if (out.top2.size() != 2) throw ParseError("'top2 criteria' must name two distinct criteria", text);
    return out;
  });
}

std::vector<ChildSpec> TreeBuilder::partition_node(const std::string& node_name, const Criterion& criterion,
                                                   const std::vector<Relation>& relations) {
  if (relations.empty()) throw ValidationError("cannot partition node '" + node_name + "' without relations");
  if (relations.size() == 1) return {{relations.front().name, relations.front().description}};

  const int n = static_cast<int>(relations.size());
  std::string examples;
  for (std::size_t i = 0; i < criterion.example_categories.size() && i < 3; ++i) {
    examples += (i ? ", " : "") + ("\"" + criterion.example_categories[i] + "\"");
  }
  if (examples.empty()) examples = "\"" + criterion.name + " 1\"";
  const std::string prompt = fill_template(
      templates_.node_name_generation,
      {{"CRITERION_NAME", criterion.name},
       {"CRITERION_EXPLANATION", criterion.explanation.empty() ? criterion.name : criterion.explanation},
       {"CRITERION_EXAMPLES", examples},
       {"MIN_CHILDREN", std::to_string(std::min(config_.min_children, n))},
       {"MAX_CHILDREN", std::to_string(std::min(config_.max_children, n))},
       {"RELATION_WITH_DESC", relations_block(relations)}});

  auto parse = [](const std::string& text) {
    const ojson doc = extract_json(text);
    if (!doc.is_object()) throw ParseError("partition response must be a JSON object of name: description", text);
    std::vector<ChildSpec> children;
    std::set<std::string> seen;
    for (const auto& [name, desc] : doc.items()) {
      ChildSpec c{trim(name), desc.is_string() ? desc.get<std::string>() : desc.dump()};
      if (c.name.empty()) throw ParseError("child with an empty name", text);
      if (!seen.insert(lower(c.name)).second) throw ParseError("duplicate child name '" + c.name + "'", text);
      children.push_back(std::move(c));
    }
    if (children.empty()) throw ParseError("empty partition", text);
    return children;
  };

  const std::string purpose = "partition:" + node_name;
  std::vector<ChildSpec> children = ask(prompt, purpose, parse);
  const auto count = static_cast<int>(children.size());
  if (count < 2 || count > 2 * config_.max_children) {
    // Soft bounds: one extra request, then accept whatever parses.
    const std::string retry = prompt + "\n\nYour previous answer had " + std::to_string(count) +
                              " clusters; provide between " + std::to_string(std::min(config_.min_children, n)) +
                              " and " + std::to_string(std::min(config_.max_children, n)) + ".\n";
    children = ask(retry, purpose + ":recount", parse);
  }
  return children;
}

std::vector<std::string> TreeBuilder::assign_relation(const Relation& relation, const std::vector<ChildSpec>& children,
                                                      const Criterion& criterion) {
  if (children.empty()) throw ValidationError("no children to assign '" + relation.name + "' to");
  ojson instances = ojson::object();
  for (const auto& c : children) instances[c.name] = c.description;
  const std::string prompt = fill_template(templates_.relation_assignment,
                                           {{"CRITERION_NAME", criterion.name},
                                            {"REL_NAME", relation.name},
                                            {"REL_DESC", relation.description},
                                            {"CRITERION_INSTANCES", instances.dump(2)}});
  return ask(prompt, "assign:" + relation.name, [&](const std::string& text) {
    const ojson doc = extract_json(text);
    if (!doc.is_array()) throw ParseError("assignment must be a JSON array", text);
    std::vector<std::string> picks;
    for (const auto& item : doc) {
      if (!item.is_string()) throw ParseError("assignment entries must be strings", text);
      const std::string want = lower(trim(item.get<std::string>()));
      auto it = std::find_if(children.begin(), children.end(), [&](const ChildSpec& c) { return lower(c.name) == want; });
      if (it == children.end()) {
        std::string allowed;
        for (const auto& c : children) allowed += (allowed.empty() ? "" : ", ") + ("\"" + c.name + "\"");
        throw ParseError("'" + item.get<std::string>() + "' is not one of: " + allowed, text);
      }
      if (std::find(picks.begin(), picks.end(), it->name) == picks.end()) picks.push_back(it->name);
    }
    if (picks.empty()) throw ParseError("assignment is empty", text);
    return picks;
  });
}

namespace {

std::string path_label(const TreeDraft& draft, NodeId id) {
  std::vector<std::string> names;
  const auto& nodes = draft.nodes();
  while (true) {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const TreeNode& n) { return n.id == id; });
    names.push_back(it->name);
    if (!it->parent) break;
    id = *it->parent;
  }
  std::string out;
  for (auto it = names.rbegin(); it != names.rend(); ++it) out += (out.empty() ? "" : " > ") + *it;
  return out;
}

struct Skeleton {
  TreeDraft draft;
  std::optional<NodeId> valid;
};

Skeleton make_skeleton(const RelationSchema& schema) {
  Skeleton s{TreeDraft("root", "all predefined relations"), std::nullopt};
  const Relation& na = schema.at(schema.na_label());
  if (schema.size() > 1) {
    s.valid = s.draft.add_intermediate(s.draft.root(), std::string(kValidRelationsName),
                                       "a predefined relation holds between the head and tail entities");
  }
  const NodeId no_valid = s.draft.add_intermediate(s.draft.root(), std::string(kNoValidRelationName),
                                                   "no predefined relation holds between the entities");
  s.draft.add_leaf(no_valid, na.name, na.description);
  return s;
}

}  // namespace

BuildResult TreeBuilder::build_levelwise(const RelationSchema& schema) {
  BuildResult result;
  Skeleton skel = make_skeleton(schema);
  TreeDraft& draft = skel.draft;
  const std::vector<Relation> positives = schema.positive_relations();
  const int criteria_levels = config_.depth_limit - 3;

  std::vector<Criterion> schedule;
  if (!positives.empty() && criteria_levels > 0 && positives.size() > 1) {
    CriteriaResult generated = generate_criteria(schema);
    result.criteria = generated.criteria;
    auto find = [&](const std::string& name) -> std::optional<Criterion> {
      for (const auto& c : generated.criteria) {
        if (lower(c.name) == lower(name)) return c;
      }
      return std::nullopt;
    };
    if (!config_.criteria.empty()) {
      for (const auto& name : config_.criteria) {
        auto c = find(name);
        if (!c) {
          result.log.push_back("criterion '" + name + "' was not generated; using it without an explanation");
          c = Criterion{name, name, {}};
        }
        schedule.push_back(*c);
      }
    } else {
      std::vector<std::string> order = generated.top2;
      for (const auto& c : generated.criteria) {
        if (std::find(order.begin(), order.end(), c.name) == order.end()) order.push_back(c.name);
      }
      for (int i = 0; i < criteria_levels; ++i) schedule.push_back(*find(order[static_cast<std::size_t>(i) % order.size()]));
      if (static_cast<std::size_t>(criteria_levels) > order.size()) {
        result.log.push_back("criteria schedule longer than generated list; criteria reused cyclically");
      }
    }
    for (const auto& c : schedule) result.schedule.push_back(c.name);
  }

  struct Pending {
    NodeId node;
    std::vector<Relation> relations;
  };
  std::vector<Pending> frontier;
  if (skel.valid) {
    if (positives.size() == 1) {
      draft.add_leaf(*skel.valid, positives.front().name, positives.front().description);
    } else {
      frontier.push_back({*skel.valid, positives});
    }
  }

  for (int level = 2; level <= config_.depth_limit - 2 && !frontier.empty(); ++level) {
    const Criterion& criterion = schedule[static_cast<std::size_t>(level - 2)];
    std::vector<Pending> next;
    for (const Pending& item : frontier) {
      const std::string where = path_label(draft, item.node);
      try {
        const std::vector<ChildSpec> children = partition_node(draft.node(item.node).name, criterion, item.relations);
        std::vector<std::vector<std::string>> picks(item.relations.size());
        for (std::size_t start = 0; start < item.relations.size();
             start += static_cast<std::size_t>(config_.max_in_flight)) {
          const std::size_t stop = std::min(item.relations.size(), start + static_cast<std::size_t>(config_.max_in_flight));
          if (stop - start == 1) {
            picks[start] = assign_relation(item.relations[start], children, criterion);
            continue;
          }
          std::vector<std::future<std::vector<std::string>>> batch;
          for (std::size_t i = start; i < stop; ++i) {
            batch.push_back(std::async(std::launch::async, [&, i] {
              return assign_relation(item.relations[i], children, criterion);
            }));
          }
          for (std::size_t i = start; i < stop; ++i) picks[i] = batch[i - start].get();
        }
        std::vector<std::vector<Relation>> buckets(children.size());
        for (std::size_t r = 0; r < item.relations.size(); ++r) {
          for (const auto& name : picks[r]) {
            auto it = std::find_if(children.begin(), children.end(), [&](const ChildSpec& c) { return c.name == name; });
            buckets[static_cast<std::size_t>(it - children.begin())].push_back(item.relations[r]);
          }
        }
        std::set<std::string> cluster_names;
        for (std::size_t c = 0; c < children.size(); ++c) {
          if (buckets[c].size() > 1) cluster_names.insert(children[c].name);
        }
        for (std::size_t c = 0; c < children.size(); ++c) {
          if (buckets[c].empty()) {
            result.log.push_back("dropped empty child '" + children[c].name + "' under " + where);
          } else if (buckets[c].size() == 1 && !cluster_names.contains(buckets[c].front().name)) {
            const Relation& only = buckets[c].front();
            const auto& siblings = draft.node(item.node).children;
            const bool taken = std::any_of(siblings.begin(), siblings.end(),
                                           [&](const NodeId& s) { return draft.node(s).name == only.name; });
            if (taken) {
              result.log.push_back("relation '" + only.name + "' assigned twice under " + where + "; kept once");
              continue;
            }
            draft.add_leaf(item.node, only.name, only.description);
          } else {
            const NodeId child = draft.add_intermediate(item.node, children[c].name, children[c].description);
            next.push_back({child, buckets[c]});
          }
        }
      } catch (const Error&) {
        rethrow_with_context("building under " + where);
      }
    }
    frontier = std::move(next);
  }
  for (const Pending& item : frontier) {
    for (const Relation& r : item.relations) draft.add_leaf(item.node, r.name, r.description);
  }

  result.tree = draft.finish(config_.depth_limit);
  const ValidationReport report = validate(result.tree, schema);
  if (!report.ok()) throw ValidationError("level-wise build produced an invalid tree:\n" + report.summary());
  return result;
}

namespace {

void insert_generated(TreeDraft& draft, const NodeId& parent, const ojson& value, std::vector<std::string>& log) {
  if (value.is_string()) {
    draft.add_leaf(parent, trim(value.get<std::string>()));
  } else if (value.is_array()) {
    for (const auto& item : value) insert_generated(draft, parent, item, log);
  } else if (value.is_object()) {
    for (const auto& [key, child] : value.items()) {
      const NodeId id = draft.add_intermediate(parent, trim(key));
      insert_generated(draft, id, child, log);
    }
  } else {
    log.push_back("ignored non-structural value in generated tree: " + value.dump());
  }
}

// Children of `id` that are intermediate nodes, depth-first, with their path labels.
void collect_intermediates(TreeDraft& draft, const NodeId& id, const std::string& label,
                           std::vector<std::pair<NodeId, std::string>>& out) {
  out.emplace_back(id, label);
  for (const NodeId& c : draft.node(id).children) {
    if (!draft.node(c).relation) collect_intermediates(draft, c, label + " > " + draft.node(c).name, out);
  }
}

}  // namespace

BuildResult TreeBuilder::build_singleshot(const RelationSchema& schema) {
  BuildResult result;
  Skeleton skel = make_skeleton(schema);
  TreeDraft& draft = skel.draft;
  const std::vector<Relation> positives = schema.positive_relations();
  if (!skel.valid) {
    result.tree = draft.finish(config_.depth_limit);
    return result;
  }
  const NodeId valid = *skel.valid;
  const int max_levels = std::max(1, config_.depth_limit - 3);

  // Step 1: one-shot tree.
  const std::string prompt = fill_template(
      templates_.single_shot_tree,
      {{"RELATION_WITH_DESC", relations_block(positives)}, {"MAX_LEVELS", std::to_string(max_levels)}});
  const ojson generated = ask(prompt, "single-shot-tree", [](const std::string& text) {
    ojson doc = extract_json(text);
    if (!doc.is_object() && !doc.is_array()) throw ParseError("tree must be a JSON object or array", text);
    return doc;
  });
  insert_generated(draft, valid, generated, result.log);

  // Step 2: drop leaves that are not positive schema relations, then duplicates and empty intermediates.
  std::set<std::string> positive_names;
  for (const auto& r : positives) positive_names.insert(r.name);
  auto under_valid = [&](NodeId cur) {
    while (cur != valid) {
      const auto& p = draft.node(cur).parent;
      if (!p) return false;
      cur = *p;
    }
    return true;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (const TreeNode& n : draft.nodes()) {
      if (n.id == valid || !under_valid(n.id)) continue;
      std::string reason;
      if (n.relation && !positive_names.contains(*n.relation)) {
        reason = "removed hallucinated relation '" + *n.relation + "'";
      } else if (!n.relation && n.children.empty()) {
        reason = "removed empty intermediate '" + n.name + "'";
      } else {
        const auto& siblings = draft.node(*n.parent).children;
        const auto self = std::find(siblings.begin(), siblings.end(), n.id);
        const bool repeated = std::any_of(siblings.begin(), self, [&](const NodeId& s) {
          return draft.node(s).name == n.name;
        });
        if (repeated) reason = "removed duplicate sibling '" + n.name + "'";
      }
      if (reason.empty()) continue;
      const NodeId doomed = n.id;
      result.log.push_back(reason);
      draft.remove_subtree(doomed);
      changed = true;
      break;
    }
  }

  // Collapse intermediates below the deepest allowed intermediate level.
  const int deepest_intermediate = config_.depth_limit - 2;
  changed = true;
  while (changed) {
    changed = false;
    for (const TreeNode& n : draft.nodes()) {
      if (n.relation || n.level != deepest_intermediate) continue;
      const bool has_inner = std::any_of(n.children.begin(), n.children.end(),
                                         [&](const NodeId& c) { return !draft.node(c).relation; });
      if (!has_inner) continue;
      std::vector<std::string> leaves;
      std::vector<NodeId> stack(n.children.begin(), n.children.end());
      while (!stack.empty()) {
        const TreeNode& cur = draft.node(stack.back());
        stack.pop_back();
        if (cur.relation) {
          if (std::find(leaves.begin(), leaves.end(), *cur.relation) == leaves.end()) leaves.push_back(*cur.relation);
        } else {
          stack.insert(stack.end(), cur.children.rbegin(), cur.children.rend());
        }
      }
      const NodeId id = n.id;
      const std::vector<NodeId> old_children = n.children;
      for (const NodeId& c : old_children) draft.remove_subtree(c);
      for (const auto& rel : leaves) draft.add_leaf(id, rel, schema.at(rel).description);
      result.log.push_back("collapsed subtree below '" + draft.node(id).name + "' to respect the depth limit");
      changed = true;
      break;
    }
  }

  // Step 3: place every missing relation.
  for (const Relation& rel : positives) {
    bool present = false;
    for (const TreeNode& n : draft.nodes()) present = present || (n.relation && *n.relation == rel.name);
    if (present) continue;
    std::vector<std::pair<NodeId, std::string>> candidates;
    collect_intermediates(draft, valid, std::string(kValidRelationsName), candidates);
    std::erase_if(candidates, [&](const auto& c) {
      if (draft.node(c.first).level > deepest_intermediate) return true;
      const auto& kids = draft.node(c.first).children;
      return std::any_of(kids.begin(), kids.end(), [&](const NodeId& k) { return draft.node(k).name == rel.name; });
    });
    std::string list;
    for (const auto& c : candidates) list += "- " + c.second + "\n";
    const std::string placement = fill_template(templates_.missing_relation_placement,
                                                {{"REL_NAME", rel.name}, {"REL_DESC", rel.description}, {"NODE_LIST", list}});
    const NodeId target = ask(placement, "place:" + rel.name, [&](const std::string& text) {
      std::string answer = trim(text);
      if (const auto nl = answer.find('\n'); nl != std::string::npos) answer = trim(answer.substr(0, nl));
      while (!answer.empty() && (answer.front() == '-' || answer.front() == '"' || answer.front() == '`' ||
                                 answer.front() == ' ')) {
        answer.erase(answer.begin());
      }
      while (!answer.empty() && (answer.back() == '"' || answer.back() == '`' || answer.back() == '.')) answer.pop_back();
      const std::string want = lower(answer);
      for (const auto& c : candidates) {
        if (lower(c.second) == want) return c.first;
      }
      std::optional<NodeId> by_name;
      int hits = 0;
      for (const auto& c : candidates) {
        if (lower(draft.node(c.first).name) == want) {
          by_name = c.first;
          ++hits;
        }
      }
      if (hits == 1) return *by_name;
      throw ParseError("'" + answer + "' is not one of the candidate node paths", text);
    });
    draft.add_leaf(target, rel.name, rel.description);
    result.log.push_back("placed missing relation '" + rel.name + "' under '" + draft.node(target).name + "'");
  }

  result.tree = draft.finish(config_.depth_limit);
  const ValidationReport report = validate(result.tree, schema);
  if (!report.ok()) throw ValidationError("single-shot build produced an invalid tree:\n" + report.summary());
  return result;
}

// ---------------------------------------------------------------------------

std::vector<CoherenceRow> score_coherence(const RelationTree& tree, LlmGateway& gateway, const PromptTemplates& templates) {
  if (!gateway.supports_token_probabilities()) {
    throw CapabilityError("coherence scoring needs first-token probabilities from backend '" + gateway.backend_id() + "'");
  }
  std::map<int, std::pair<std::size_t, double>> by_level;
  for (const TreeNode& parent : tree.nodes()) {
    if (parent.level < 1) continue;
    for (const NodeId& c : parent.children) {
      const std::string prompt =
          fill_template(templates.coherence, {{"CHILD_NODE", tree.node(c).name}, {"PARENT_NODE", parent.name}});
      const Completion reply = gateway.complete({prompt, "coherence", true, std::nullopt});
      double yes = 0.0;
      for (const auto& [token, p] : reply.first_token_probabilities) {
        if (lower(trim(token)) == "yes") yes += p;
      }
      auto& slot = by_level[parent.level];
      ++slot.first;
      slot.second += std::min(1.0, yes);
    }
  }
  std::vector<CoherenceRow> rows;
  for (const auto& [level, acc] : by_level) {
    rows.push_back({level, acc.first, 100.0 * acc.second / static_cast<double>(acc.first)});
  }
  return rows;
}

std::string format_coherence(const std::vector<CoherenceRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "" << "Coherence (%)\n";
  for (const auto& r : rows) {
    std::ostringstream label;
    label << "Level " << r.parent_level << " → " << r.parent_level + 1;
    out << std::left << std::setw(18) << label.str() << std::fixed << std::setprecision(2) << r.percent << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

namespace {

std::string between(std::string_view text, std::string_view open, std::string_view close) {
  const auto a = text.find(open);
  if (a == std::string_view::npos) return {};
  const auto b = text.find(close, a + open.size());
  if (b == std::string_view::npos) return {};
  return std::string(text.substr(a + open.size(), b - a - open.size()));
}

std::string fenced(const ojson& value) { return "```json\n" + value.dump(2) + "\n```"; }

}  // namespace

Completion OfflineBuildGateway::complete(const ChatRequest& request) {
  const std::string& p = request.prompt;
  Completion reply;
  const std::vector<std::string> blocks = fenced_blocks(p);

  if (p.find("top2 criteria") != std::string::npos && p.find("classification criteria") != std::string::npos) {
    static const std::pair<const char*, const char*> kCriteria[] = {
        {"Domain", "the subject area the relation belongs to"},
        {"Entity Type", "the types of the head and tail entities"},
        {"Polarity", "whether the relation is directed from head to tail or reversed"},
        {"Temporality", "whether the relation holds permanently or for a period"},
        {"Cardinality", "how many tail entities a head entity typically has"},
        {"Granularity", "how specific the relation is"},
        {"Formality", "whether the relation is legal, official or informal"},
        {"Spatiality", "whether the relation concerns location"},
        {"Agency", "whether the head entity acts intentionally"},
        {"Provenance", "whether the relation describes origin or creation"},
    };
    ojson crit = ojson::object();
    for (const auto& [name, expl] : kCriteria) {
      crit[name] = {{"explanation", expl}, {"possible category names", {std::string(name) + " A", std::string(name) + " B"}}};
    }
    reply.text = fenced({{"classification criteria", crit}, {"top2 criteria", {"Domain", "Entity Type"}}});
  } else if (p.find("categorize these relations into") != std::string::npos && !blocks.empty()) {
    const ojson rels = ojson::parse(blocks.back());
    const std::string criterion = between(p, "based on their ", "s, where");
    const std::string range = between(p, "into ", " clusters");
    const int max_children = std::max(2, std::atoi(range.substr(range.find('-') + 1).c_str()));
    std::vector<std::string> names;
    for (const auto& [name, desc] : rels.items()) names.push_back(name);
    const std::size_t n = names.size();
    const std::size_t k = std::clamp<std::size_t>((n + 2) / 3, 2, static_cast<std::size_t>(max_children));
    std::vector<std::pair<std::uint64_t, std::string>> keyed;
    for (const auto& name : names) keyed.emplace_back(hash_combine(seed_, fnv1a(criterion + "|" + name)), name);
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::vector<std::string>> groups(std::min(k, n));
    for (std::size_t i = 0; i < keyed.size(); ++i) groups[i % groups.size()].push_back(keyed[i].second);
    ojson out = ojson::object();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::string members;
      for (const auto& m : groups[g]) members += (members.empty() ? "" : "; ") + m;
      out[lower(criterion) + " group " + std::to_string(g + 1)] = "Covers: " + members;
    }
    reply.text = fenced(out);
  } else if (p.find("NON-EMPTY JSON array") != std::string::npos && !blocks.empty()) {
    const std::string rel = between(p, "relation label \"", "\" based on");
    const ojson children = ojson::parse(blocks.front());
    std::string pick;
    for (const auto& [name, desc] : children.items()) {
      const std::string d = desc.is_string() ? desc.get<std::string>() : std::string{};
      const std::string members = d.rfind("Covers: ", 0) == 0 ? d.substr(8) : d;
      std::size_t pos = 0;
      while (pos <= members.size()) {
        const std::size_t end = std::min(members.find("; ", pos), members.size());
        if (members.substr(pos, end - pos) == rel) pick = name;
        pos = end + 2;
      }
      if (!pick.empty()) break;
    }
    if (pick.empty() && !children.empty()) pick = children.begin().key();
    reply.text = fenced(ojson::array({pick}));
  } else if (p.find("hierarchical relation tree whose intermediate nodes") != std::string::npos && !blocks.empty()) {
    const ojson rels = ojson::parse(blocks.back());
    std::vector<std::pair<std::uint64_t, std::string>> keyed;
    for (const auto& [name, desc] : rels.items()) keyed.emplace_back(hash_combine(seed_, fnv1a(name)), name);
    std::sort(keyed.begin(), keyed.end());
    const std::size_t groups = std::max<std::size_t>(1, (keyed.size() + 3) / 4);
    ojson tree = ojson::object();
    for (std::size_t i = 0; i < keyed.size(); ++i) {
      tree["concept " + std::to_string(i % groups + 1)].push_back(keyed[i].second);
    }
    reply.text = fenced(tree);
  } else if (p.find("is absent from the hierarchical relation tree") != std::string::npos) {
    const std::string list = between(p, "Candidate Nodes:\n", "\nOutput Format:");
    const std::string first = list.substr(0, list.find('\n'));
    reply.text = first.rfind("- ", 0) == 0 ? first.substr(2) : first;
  } else if (p.find("coherent with the node") != std::string::npos) {
    const double yes = 0.6 + 0.35 * static_cast<double>(hash_combine(seed_, fnv1a(p)) % 1000) / 1000.0;
    reply.text = "Yes";
    reply.first_token_probabilities = {{"Yes", yes}, {"No", 1.0 - yes}};
  } else {
    throw BackendError("offline build gateway does not recognise this prompt");
  }
  reply.input_tokens = estimate_tokens(p);
  reply.output_tokens = estimate_tokens(reply.text);
  return reply;
}

}  // namespace reltree
