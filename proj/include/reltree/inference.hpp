#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltree/schema.hpp"
#include "reltree/selector.hpp"
#include "reltree/tree.hpp"

namespace reltree {

struct PtvConfig {
  int max_rounds = 3;  // M
  int k = 2;           // verification breadth
  bool verification_enabled = true;
  int alignment_threshold = 2;  // votes needed when k = 2

  void check() const;

  /// Votes required for `sets` verification sets: `alignment_threshold` for
  /// the three sets of k = 2, 1 for a single set, otherwise a strict majority.
  [[nodiscard]] int threshold_for(std::size_t sets) const;

  [[nodiscard]] nlohmann::json to_json() const;
};

struct VerificationSet {
  OptionSet options;
  std::vector<NodeId> replaced;  // nodes spliced out for their children
};

/// One set per top-i replacement, then (for two or more) the all-replaced
/// set. Children are spliced in place; a leaf is replaced by itself.
[[nodiscard]] std::vector<VerificationSet> build_verification_sets(const RelationTree& tree, const OptionSet& options,
                                                                   const std::vector<NodeId>& top);

/// The three sets of the k = 2 case: r1st replaced, r2nd replaced, both.
[[nodiscard]] std::vector<VerificationSet> build_verification_sets(const RelationTree& tree, const OptionSet& options,
                                                                   const NodeId& r1st, const NodeId& r2nd);

/// Vote of an auxiliary node. When r1st was replaced in the set the vote
/// needs aux among children_of(r1st), otherwise aux == r1st.
[[nodiscard]] bool aligned(const RelationTree& tree, const NodeId& aux, const NodeId& r1st, bool r1st_replaced);

/// k = 2 views: 1 and 3 replace r1st, 2 does not.
[[nodiscard]] bool aligned(const RelationTree& tree, const NodeId& aux, const NodeId& r1st, int view);

struct VerificationStep {
  VerificationSet set;
  Selection selection;
  bool vote = false;
};

struct PtvRound {
  OptionSet options;
  Selection prediction;
  std::vector<VerificationStep> verifications;
  int votes = 0;
  int threshold = 0;
  bool accepted = false;
};

struct LevelTrace {
  int level = 0;
  OptionSet options;
  std::vector<PtvRound> rounds;
  NodeId chosen;
  /// "predicted" (plain), "accepted", "fallback" (rounds exhausted),
  /// "forced" (single option) or "remaining" (others all removed).
  std::string outcome;
  double confidence = 1.0;
};

struct InferenceTrace {
  std::string instance_id;
  std::optional<std::string> gold;
  std::optional<std::string> bag_id;
  bool ptv = false;
  std::vector<LevelTrace> levels;
  NodeId final_leaf;
  std::string final_relation;
  double confidence = 1.0;  // product of the per-level confidences
  UsageTotals usage;

  [[nodiscard]] std::vector<NodeId> chosen_path() const;
};

[[nodiscard]] nlohmann::ordered_json trace_to_json(const InferenceTrace& trace);
[[nodiscard]] InferenceTrace trace_from_json(const nlohmann::json& doc);

/// Top-down walk taking the selector's best at every level.
[[nodiscard]] InferenceTrace classify_plain(const Instance& instance, const RelationTree& tree, Selector& selector);

/// One level of prediction-then-verification over `options`.
[[nodiscard]] LevelTrace ptv_level(const Instance& instance, const RelationTree& tree, const OptionSet& options,
                                   Selector& selector, const PtvConfig& cfg);

[[nodiscard]] InferenceTrace classify_ptv(const Instance& instance, const RelationTree& tree, Selector& selector,
                                          const PtvConfig& cfg);

/// Relation scores from the per-option scores of every internal node: a leaf
/// scores the product along its path, a relation the max over its leaves,
/// and the result is renormalized to sum to 1. Throws CapabilityError when
/// the selector reports no scores.
[[nodiscard]] std::map<std::string, double> score_distribution(const Instance& instance, const RelationTree& tree,
                                                               Selector& selector);

struct RunOptions {
  bool ptv = true;
  PtvConfig ptv_config;
  int concurrency = 1;
  bool skip_errors = false;
  bool with_scores = false;  // also compute score_distribution per instance
};

struct InstanceResult {
  std::optional<InferenceTrace> trace;
  std::optional<std::map<std::string, double>> distribution;
  std::string error;  // set when the instance was skipped
  double latency_seconds = 0.0;
};

/// Classifies every instance on a worker pool; results keep input order.
/// Without `skip_errors` the first failure (lowest index) is re-thrown.
[[nodiscard]] std::vector<InstanceResult> run_inference(const std::vector<Instance>& instances,
                                                        const RelationTree& tree, Selector& selector,
                                                        const RunOptions& options);

}  // namespace reltree
