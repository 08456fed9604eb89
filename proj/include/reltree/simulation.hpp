#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltree/evaluation.hpp"
#include "reltree/inference.hpp"
#include "reltree/schema.hpp"
#include "reltree/selector.hpp"
#include "reltree/tree.hpp"

namespace reltree {

/// Balanced tree under "valid relations": `branching` children per node
/// down to level depth-1, where the leaves sit. NA hangs alone under
/// "no valid relation". Relations are named r001, r002, ...
struct SyntheticTreeSpec {
  int branching = 4;
  int depth = 5;
  std::string na_label = "NA";

  void check() const;
};

[[nodiscard]] RelationTree synthetic_tree(const SyntheticTreeSpec& spec);
[[nodiscard]] RelationSchema synthetic_schema(const SyntheticTreeSpec& spec);

/// `count` instances whose gold is NA with probability `na_fraction`,
/// otherwise a uniformly drawn positive relation.
[[nodiscard]] std::vector<Instance> synthetic_dataset(const RelationSchema& schema, std::size_t count,
                                                      double na_fraction, std::uint64_t seed);

struct SimulationConfig {
  SyntheticTreeSpec tree;
  SyntheticConfig selector;
  PtvConfig ptv;
  std::size_t instances = 5000;
  double na_fraction = 0.1;
  std::uint64_t seed = 42;
  int concurrency = 1;
  int sweep_max_k = 0;                // 0 disables the k sweep
  std::size_t sweep_instances = 0;    // 0 means `instances`

  void check() const;
  [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct SystemSummary {
  std::string label;
  double accuracy = 0.0;  // percent of traces ending at the gold relation
  double micro_f1 = 0.0;
  std::vector<LevelDiagnostics> levels;
  UsageTotals usage;
  double avg_latency_seconds = 0.0;
};

struct SweepRow {
  int k = 0;
  double accuracy = 0.0;
  std::int64_t calls = 0;
  double calls_per_instance = 0.0;
};

struct SimulationReport {
  SimulationConfig config;
  SystemSummary plain;
  SystemSummary ptv;
  std::vector<SweepRow> sweep;

  [[nodiscard]] double margin() const noexcept { return ptv.accuracy - plain.accuracy; }
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  [[nodiscard]] std::string text() const;
};

[[nodiscard]] SystemSummary summarize_run(const std::string& label, const std::vector<InstanceResult>& results,
                                          const RelationTree& tree, const std::string& na_label);

/// Paired plain/PtV runs over one synthetic dataset; both use the same selector streams.
[[nodiscard]] SimulationReport simulate(const SimulationConfig& config);

}  // namespace reltree
