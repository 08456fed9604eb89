#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reltree/gateway.hpp"
#include "reltree/prompts.hpp"
#include "reltree/schema.hpp"
#include "reltree/tree.hpp"

namespace reltree {

/// A textual basis for splitting relations, e.g. "Domain".
struct Criterion {
  std::string name;
  std::string explanation;
  std::vector<std::string> example_categories;
};

struct CriteriaResult {
  std::vector<Criterion> criteria;
  std::vector<std::string> top2;  // names, as they appear in `criteria`
};

struct ChildSpec {
  std::string name;
  std::string description;
};

struct BuildConfig {
  int depth_limit = 5;
  /// Criterion names applied to levels 2, 3, ...; needs depth_limit - 3
  /// entries. Empty means: the generated top-2 first, then the remaining
  /// generated criteria in listed order.
  std::vector<std::string> criteria;
  int min_children = 10;
  int max_children = 12;
  std::uint64_t seed = 42;
  int max_repair_retries = 3;
  int max_in_flight = 1;  // concurrent assignment calls per node

  /// Throws ValidationError on inconsistent settings.
  void check() const;
};

struct BuildResult {
  RelationTree tree;
  std::vector<Criterion> criteria;
  std::vector<std::string> schedule;
  std::vector<std::string> log;
};

struct CoherenceRow {
  int parent_level = 0;
  std::size_t pairs = 0;
  double percent = 0.0;
};

/// Drives tree construction through an LLM gateway. Every structured
/// response is re-requested with the parse error appended, up to
/// `max_repair_retries` times, before a ParseError is raised.
class TreeBuilder {
 public:
  TreeBuilder(LlmGateway& gateway, BuildConfig config = {}, PromptTemplates templates = PromptTemplates::defaults());

  [[nodiscard]] CriteriaResult generate_criteria(const RelationSchema& schema);

  /// Splits a node's relations into named children. A single relation
  /// passes through as its own child without a gateway call.
  [[nodiscard]] std::vector<ChildSpec> partition_node(const std::string& node_name, const Criterion& criterion,
                                                      const std::vector<Relation>& relations);

  /// Child names (deduplicated, in answer order) that should hold `relation`.
  [[nodiscard]] std::vector<std::string> assign_relation(const Relation& relation,
                                                         const std::vector<ChildSpec>& children,
                                                         const Criterion& criterion);

  [[nodiscard]] BuildResult build_levelwise(const RelationSchema& schema);

  /// Whole tree from one response, then hallucinated leaves removed and
  /// missing relations placed one by one.
  [[nodiscard]] BuildResult build_singleshot(const RelationSchema& schema);

  [[nodiscard]] const BuildConfig& config() const noexcept { return config_; }

 private:
  template <class Parse>
  auto ask(const std::string& prompt, const std::string& purpose, Parse&& parse);

  LlmGateway& gateway_;
  BuildConfig config_;
  PromptTemplates templates_;
};

/// Mean P("Yes")*100 over parent-child pairs, grouped by parent level
/// (levels >= 1). Throws CapabilityError when the gateway cannot report
/// first-token probabilities.
[[nodiscard]] std::vector<CoherenceRow> score_coherence(const RelationTree& tree, LlmGateway& gateway,
                                                        const PromptTemplates& templates = PromptTemplates::defaults());

[[nodiscard]] std::string format_coherence(const std::vector<CoherenceRow>& rows);

/// Deterministic stand-in for a tree-construction model. It recognises the
/// default builder prompts, clusters relations by a seeded hash and always
/// answers coherence queries with a probability. Useful for offline runs.
class OfflineBuildGateway final : public LlmGateway {
 public:
  explicit OfflineBuildGateway(std::uint64_t seed = 42) : seed_(seed) {}
  Completion complete(const ChatRequest& request) override;
  [[nodiscard]] std::string backend_id() const override { return "offline-build"; }
  [[nodiscard]] bool supports_token_probabilities() const override { return true; }

 private:
  std::uint64_t seed_;
};

}  // namespace reltree
