#include "reltree/train_expand.hpp"

#include <algorithm>
#include <sstream>

#include "reltree/error.hpp"
#include "reltree/inference.hpp"
#include "reltree/random.hpp"
#include "reltree/selector.hpp"

namespace reltree {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::d1: return "D1";
    case Provenance::d2_v1: return "D2-v1";
    case Provenance::d2_v2: return "D2-v2";
    case Provenance::d2_v3: return "D2-v3";
  }
  return "?";
}

std::vector<std::vector<NodeId>> gold_path(const RelationTree& tree, const std::string& relation, PathPolicy policy) {
  auto paths = paths_to_relation(tree, relation);
  if (policy == PathPolicy::canonical) paths.resize(1);
  return paths;
}

std::vector<TrainingSample> expand_d1(const std::string& instance_id, const std::vector<NodeId>& path,
                                      const RelationTree& tree) {
  std::vector<TrainingSample> out;
  for (std::size_t l = 1; l < path.size(); ++l) {
    TrainingSample s;
    s.instance_id = instance_id;
    s.options = tree.node(path[l - 1]).children;
    s.target = path[l];
    s.provenance = Provenance::d1;
    s.level = static_cast<int>(l);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TrainingSample> expand_d2(const TrainingSample& d1, const NodeId& next, const RelationTree& tree,
                                      std::uint64_t rng_seed) {
  std::vector<NodeId> siblings;
  for (const NodeId& o : d1.options) {
    if (o != d1.target) siblings.push_back(o);
  }
  if (siblings.empty()) return {};
  Rng rng(rng_seed);
  const NodeId r2nd = siblings[rng.below(siblings.size())];

  const OptionSet base = OptionSet::from_ids(tree, d1.options);
  const auto sets = build_verification_sets(tree, base, d1.target, r2nd);
  const Provenance tags[] = {Provenance::d2_v1, Provenance::d2_v2, Provenance::d2_v3};
  const NodeId targets[] = {next, d1.target, next};
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i < 3; ++i) {
    TrainingSample s;
    s.instance_id = d1.instance_id;
    s.options = sets[i].options.ids();
    s.target = targets[i];
    s.provenance = tags[i];
    s.level = d1.level;
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json ExpansionSummary::to_json() const {
  nlohmann::json c = nlohmann::json::object();
  for (Provenance p : {Provenance::d1, Provenance::d2_v1, Provenance::d2_v2, Provenance::d2_v3}) {
    auto it = counts.find(p);
    c[std::string(to_string(p))] = it == counts.end() ? 0 : it->second;
  }
  return {{"instances", instances}, {"counts", c}, {"levels_without_sibling", levels_without_sibling}};
}

std::string ExpansionSummary::histogram() const {
  std::ostringstream out;
  std::size_t total = 0;
  for (Provenance p : {Provenance::d1, Provenance::d2_v1, Provenance::d2_v2, Provenance::d2_v3}) {
    auto it = counts.find(p);
    const std::size_t n = it == counts.end() ? 0 : it->second;
    total += n;
    out << std::string(to_string(p)) << std::string(8 - to_string(p).size(), ' ') << n << '\n';
  }
  out << "total   " << total << '\n';
  out << "levels without a sibling (no D2): " << levels_without_sibling << '\n';
  return out.str();
}

ExpansionResult expand_dataset(const std::vector<Instance>& dataset, const RelationTree& tree, std::uint64_t seed,
                               PathPolicy policy) {
  ExpansionResult result;
  for (Provenance p : {Provenance::d1, Provenance::d2_v1, Provenance::d2_v2, Provenance::d2_v3}) {
    result.summary.counts[p] = 0;
  }
  for (const Instance& inst : dataset) {
    if (!inst.gold) throw ValidationError("instance '" + inst.id + "' has no gold relation");
    try {
      const std::uint64_t stream = hash_combine(seed, fnv1a(inst.id));
      std::uint64_t draw = 0;
      for (const auto& path : gold_path(tree, *inst.gold, policy)) {
        const auto d1 = expand_d1(inst.id, path, tree);
        std::vector<TrainingSample> d2;
        for (std::size_t i = 0; i < d1.size(); ++i) {
          const NodeId& next = i + 2 < path.size() ? path[i + 2] : path[i + 1];
          auto extra = expand_d2(d1[i], next, tree, hash_combine(stream, draw++));
          if (extra.empty()) ++result.summary.levels_without_sibling;
          d2.insert(d2.end(), extra.begin(), extra.end());
        }
        for (const auto& s : d1) ++result.summary.counts[s.provenance];
        for (const auto& s : d2) ++result.summary.counts[s.provenance];
        result.samples.insert(result.samples.end(), d1.begin(), d1.end());
        result.samples.insert(result.samples.end(), d2.begin(), d2.end());
      }
    } catch (const Error&) {
      rethrow_with_context("instance '" + inst.id + "'");
    }
    ++result.summary.instances;
  }
  return result;
}

std::string training_file(const ExpansionResult& result, const std::vector<Instance>& dataset,
                          const RelationTree& tree, const std::string& classification_template) {
  std::map<std::string, const Instance*> by_id;
  for (const Instance& inst : dataset) by_id.emplace(inst.id, &inst);
  std::string out;
  for (const TrainingSample& s : result.samples) {
    auto it = by_id.find(s.instance_id);
    if (it == by_id.end()) throw ValidationError("sample refers to unknown instance '" + s.instance_id + "'");
    nlohmann::ordered_json line;
    line["prompt"] = render_prompt(*it->second, OptionSet::from_ids(tree, s.options), classification_template);
    line["target"] = tree.display_name(s.target);
    line["provenance"] = std::string(to_string(s.provenance));
    line["level"] = s.level;
    line["instance_id"] = s.instance_id;
    out += line.dump();
    out += '\n';
  }
  return out;
}

}  // namespace reltree
