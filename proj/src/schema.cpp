#include "reltree/schema.hpp"

#include <set>
#include <sstream>

#include "reltree/error.hpp"
#include "reltree/io.hpp"

namespace reltree {

using nlohmann::json;

RelationSchema::RelationSchema(std::vector<Relation> relations, std::string na_label)
    : relations_(std::move(relations)), na_label_(std::move(na_label)) {
  for (std::size_t i = 0; i < relations_.size(); ++i) {
    const Relation& rel = relations_[i];
    if (rel.name.empty()) {
      throw ValidationError("relation #" + std::to_string(i) + " has an empty name");
    }
    if (rel.description.empty()) {
      throw ValidationError("relation '" + rel.name + "' has an empty description");
    }
    if (!index_.emplace(rel.name, i).second) {
      throw ValidationError("duplicate relation name '" + rel.name + "'");
    }
  }
  if (na_label_.empty()) throw ValidationError("na_label is missing");
  if (!index_.contains(na_label_)) {
    throw ValidationError("na_label '" + na_label_ + "' is not one of the relations");
  }
}

bool RelationSchema::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const Relation& RelationSchema::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown relation '" + std::string(name) + "'");
  return relations_[it->second];
}

std::vector<Relation> RelationSchema::positive_relations() const {
  std::vector<Relation> out;
  for (const auto& rel : relations_) {
    if (rel.name != na_label_) out.push_back(rel);
  }
  return out;
}

RelationSchema load_schema(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("schema is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("schema must be a JSON object");
  if (!doc.contains("relations") || !doc["relations"].is_array()) {
    throw ValidationError("schema is missing the 'relations' array");
  }
  if (!doc.contains("na_label") || !doc["na_label"].is_string()) {
    throw ValidationError("schema is missing 'na_label'");
  }
  std::vector<Relation> relations;
  std::size_t i = 0;
  for (const auto& entry : doc["relations"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string()) {
      throw ValidationError("relation #" + std::to_string(i) + " lacks a string 'name'");
    }
    Relation rel{entry["name"].get<std::string>(), ""};
    if (entry.contains("description") && entry["description"].is_string()) {
      rel.description = entry["description"].get<std::string>();
    }
    relations.push_back(std::move(rel));
    ++i;
  }
  return RelationSchema(std::move(relations), doc["na_label"].get<std::string>());
}

RelationSchema load_schema_file(const std::string& path) { return load_schema(io::read_file(path)); }

json schema_to_json(const RelationSchema& schema) {
  json rels = json::array();
  for (const auto& rel : schema.relations()) {
    rels.push_back({{"name", rel.name}, {"description", rel.description}});
  }
  return {{"relations", std::move(rels)}, {"na_label", schema.na_label()}};
}

std::string save_schema(const RelationSchema& schema) { return schema_to_json(schema).dump(2) + "\n"; }

namespace {

Instance parse_instance(const json& rec, const RelationSchema& schema) {
  if (!rec.is_object()) throw ValidationError("record is not a JSON object");
  auto require_string = [&](const char* key) {
    if (!rec.contains(key) || !rec[key].is_string()) {
      throw ValidationError(std::string("missing string field '") + key + "'");
    }
    std::string value = rec[key].get<std::string>();
    if (value.empty()) throw ValidationError(std::string("field '") + key + "' is empty");
    return value;
  };
  Instance inst;
  inst.id = require_string("id");
  inst.head = require_string("head");
  inst.tail = require_string("tail");
  if (!rec.contains("context") || !rec["context"].is_array() || rec["context"].empty()) {
    throw ValidationError("field 'context' must be a non-empty array of strings");
  }
  for (const auto& doc : rec["context"]) {
    if (!doc.is_string()) throw ValidationError("context entries must be strings");
    inst.context.push_back(doc.get<std::string>());
  }
  if (rec.contains("gold") && !rec["gold"].is_null()) {
    if (!rec["gold"].is_string()) throw ValidationError("field 'gold' must be a string");
    std::string gold = rec["gold"].get<std::string>();
    if (!schema.contains(gold)) throw ValidationError("unknown gold relation '" + gold + "'");
    inst.gold = std::move(gold);
  }
  if (rec.contains("bag_id") && !rec["bag_id"].is_null()) {
    if (!rec["bag_id"].is_string()) throw ValidationError("field 'bag_id' must be a string");
    inst.bag_id = rec["bag_id"].get<std::string>();
  }
  return inst;
}

}  // namespace

std::vector<Instance> load_dataset(std::string_view stream, const RelationSchema& schema) {
  std::vector<Instance> out;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= stream.size()) {
    const std::size_t end = std::min(stream.find('\n', pos), stream.size());
    std::string_view line = stream.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == stream.size()) break;
      continue;
    }
    try {
      Instance inst = parse_instance(json::parse(line), schema);
      if (!seen.insert(inst.id).second) throw ValidationError("duplicate instance id '" + inst.id + "'");
      out.push_back(std::move(inst));
    } catch (const json::parse_error& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == stream.size()) break;
  }
  return out;
}

std::vector<Instance> load_dataset_file(const std::string& path, const RelationSchema& schema) {
  return load_dataset(io::read_file(path), schema);
}

json instance_to_json(const Instance& inst) {
  json rec = {{"id", inst.id}, {"context", inst.context}, {"head", inst.head}, {"tail", inst.tail}};
  if (inst.gold) rec["gold"] = *inst.gold;
  if (inst.bag_id) rec["bag_id"] = *inst.bag_id;
  return rec;
}

std::string save_dataset(const std::vector<Instance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += instance_to_json(inst).dump();
    out += '\n';
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> group_bags(
    const std::vector<Instance>& instances) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> bags;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!instances[i].bag_id) continue;
    auto [it, fresh] = slot.emplace(*instances[i].bag_id, bags.size());
    if (fresh) bags.emplace_back(*instances[i].bag_id, std::vector<std::size_t>{});
    bags[it->second].second.push_back(i);
  }
  return bags;
}

}  // namespace reltree
