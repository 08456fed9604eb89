#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltree/schema.hpp"
#include "reltree/tree.hpp"

namespace reltree {

enum class Provenance { d1, d2_v1, d2_v2, d2_v3 };

[[nodiscard]] std::string_view to_string(Provenance p);

struct TrainingSample {
  std::string instance_id;
  std::vector<NodeId> options;
  NodeId target;
  Provenance provenance = Provenance::d1;
  int level = 0;
};

enum class PathPolicy { canonical, all };

/// Root-to-leaf paths for `relation`: the name-lexicographic first one, or
/// every one under PathPolicy::all.
[[nodiscard]] std::vector<std::vector<NodeId>> gold_path(const RelationTree& tree, const std::string& relation,
                                                         PathPolicy policy = PathPolicy::canonical);

/// One sample per path level 1..len-1: the gold node among its siblings.
[[nodiscard]] std::vector<TrainingSample> expand_d1(const std::string& instance_id, const std::vector<NodeId>& path,
                                                    const RelationTree& tree);

/// Verification-view samples for one D1 sample with a seeded random sibling
/// as r2nd. `next` is the gold node one level down (the gold node itself at
/// a leaf). Returns nothing when the gold node has no sibling.
[[nodiscard]] std::vector<TrainingSample> expand_d2(const TrainingSample& d1, const NodeId& next,
                                                    const RelationTree& tree, std::uint64_t rng_seed);

struct ExpansionSummary {
  std::size_t instances = 0;
  std::map<Provenance, std::size_t> counts;
  std::size_t levels_without_sibling = 0;

  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] std::string histogram() const;
};

struct ExpansionResult {
  std::vector<TrainingSample> samples;
  ExpansionSummary summary;
};

/// D1 followed by D2 for every instance, in dataset order. Each instance
/// draws from its own stream seeded by (seed, instance id).
[[nodiscard]] ExpansionResult expand_dataset(const std::vector<Instance>& dataset, const RelationTree& tree,
                                             std::uint64_t seed, PathPolicy policy = PathPolicy::canonical);

/// JSON lines {prompt, target, provenance, level, instance_id}, prompts
/// rendered with the classification template used at inference.
[[nodiscard]] std::string training_file(const ExpansionResult& result, const std::vector<Instance>& dataset,
                                        const RelationTree& tree, const std::string& classification_template);

}  // namespace reltree
