#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltree/gateway.hpp"
#include "reltree/schema.hpp"
#include "reltree/tree.hpp"

namespace reltree {

struct Option {
  NodeId id;
  std::string name;
  friend bool operator==(const Option&, const Option&) = default;
};

/// Options offered to the selector. `view` 0 is the base set R_l; view i
/// (1-based) is the i-th verification set.
struct OptionSet {
  std::vector<Option> options;
  int view = 0;

  static OptionSet from_ids(const RelationTree& tree, const std::vector<NodeId>& ids, int view = 0);

  /// Throws ValidationError when empty or when ids repeat.
  void check() const;

  [[nodiscard]] std::size_t size() const noexcept { return options.size(); }
  [[nodiscard]] bool contains(const NodeId& id) const;
  [[nodiscard]] std::vector<NodeId> ids() const;

  /// FNV-1a over the ordered ids; independent of `view`.
  [[nodiscard]] std::uint64_t hash() const;
  [[nodiscard]] std::string hash_hex() const;

  friend bool operator==(const OptionSet&, const OptionSet&) = default;
};

[[nodiscard]] std::string view_name(int view);

struct Selection {
  std::vector<NodeId> ranking;       // best first
  std::vector<double> confidences;   // parallel to ranking
  std::map<NodeId, double> per_option_scores;  // empty unless the backend exposes scores
  bool synthetic_confidence = false;  // rank-derived defaults, not model scores
  std::vector<UsageRecord> calls;     // one per backend call; empty for forced choices

  [[nodiscard]] UsageTotals usage() const;

  [[nodiscard]] const NodeId& best() const { return ranking.front(); }
  [[nodiscard]] std::optional<NodeId> suboptimal() const {
    return ranking.size() > 1 ? std::optional<NodeId>(ranking[1]) : std::nullopt;
  }
  [[nodiscard]] double confidence_best() const { return confidences.empty() ? 1.0 : confidences.front(); }

  /// Throws BackendError when the selection breaks its contract for `options`.
  void check(const OptionSet& options) const;
};

/// Rank-derived confidences: 0.6, 0.3, then the remainder split evenly.
[[nodiscard]] std::vector<double> rank_default_confidences(std::size_t ranked, std::size_t option_count);

/// Backend contract. `ranked` is how many ranked options the caller needs
/// (1 = best only, 2 = best and suboptimal, k for top-k verification);
/// implementations may return more. Must be safe under concurrent calls.
class Selector {
 public:
  virtual ~Selector() = default;
  virtual Selection select(const Instance& instance, const OptionSet& options, int ranked) = 0;
  [[nodiscard]] virtual bool has_scores() const { return false; }
  [[nodiscard]] virtual std::string id() const = 0;
};

/// Renders documents as "Document i: ..." and the options as a numbered list.
/// Throws ValidationError when the template lacks one of the four placeholders.
[[nodiscard]] std::string render_prompt(const Instance& instance, const OptionSet& options, const std::string& tmpl);

/// Cuts documents from their tail so the estimated token count of the context
/// stays within `max_tokens`. Each document keeps an equal share of the budget.
[[nodiscard]] std::vector<std::string> truncate_context(const std::vector<std::string>& context, std::int64_t max_tokens);

/// Ordinal label: 1st, 2nd, 3rd, 4th, ...
[[nodiscard]] std::string ordinal(std::size_t n);

/// Replays a script. Entries are matched on instance id ("*" matches any)
/// and on either `option_hash` (hex), an `options` list (ids or names in
/// order) or nothing (fallback). Repeated matches advance through the
/// matching entries and then repeat the last one.
///
/// Entry: {"instance_id", "option_hash"|"options", "best", "suboptimal",
///         "ranking": [...], "scores": {option: score}}
class ScriptedSelector final : public Selector {
 public:
  struct Entry {
    std::string instance_id;
    std::optional<std::string> option_hash;
    std::optional<std::vector<std::string>> options;
    std::vector<std::string> ranking;  // ids or names
    std::map<std::string, double> scores;
  };

  /// `classification_template` only feeds the token estimates in usage records.
  explicit ScriptedSelector(std::vector<Entry> entries, std::string classification_template = {});
  ScriptedSelector(ScriptedSelector&& other) noexcept
      : entries_(std::move(other.entries_)),
        template_(std::move(other.template_)),
        cursor_(std::move(other.cursor_)),
        has_scores_(other.has_scores_) {}
  static ScriptedSelector from_json(const nlohmann::json& doc, std::string classification_template = {});
  static ScriptedSelector from_file(const std::string& path, std::string classification_template = {});

  Selection select(const Instance& instance, const OptionSet& options, int ranked) override;
  [[nodiscard]] bool has_scores() const override { return has_scores_; }
  [[nodiscard]] std::string id() const override { return "scripted"; }

 private:
  std::vector<Entry> entries_;
  std::string template_;
  std::map<std::string, std::size_t> cursor_;
  bool has_scores_ = false;
  std::mutex mutex_;
};

/// Probability of picking the gold-consistent option, per level and per
/// origin (base prediction vs verification view).
struct AccuracyTable {
  double base = 0.7;
  double verification = 0.9;
  std::map<int, double> base_by_level;
  std::map<int, double> verification_by_level;

  [[nodiscard]] double at(int level, bool verification_view) const;
  void check() const;
  static AccuracyTable from_json(const nlohmann::json& doc);
  [[nodiscard]] nlohmann::json to_json() const;
};

struct SyntheticConfig {
  AccuracyTable accuracy;
  double confusion = 0.5;  // P(suboptimal is gold-consistent | best is wrong)
  std::uint64_t seed = 42;
};

/// Stochastic stand-in for a model. An option is gold-consistent when it
/// lies on any gold path of the instance. Each call draws from a stream
/// derived from (seed, instance id, option set, view), so results do not
/// depend on call order or concurrency, and a plain run and the prediction
/// step of a PtV run see the same draw on the same option set.
/// Per-option scores: best ~ U(0.6, 0.95) when correct, else U(0.5, 0.75);
/// the suboptimal takes 70% of the remainder, the rest share 30%.
class SyntheticSelector final : public Selector {
 public:
  SyntheticSelector(const RelationTree& tree, SyntheticConfig config, std::string classification_template = {});

  Selection select(const Instance& instance, const OptionSet& options, int ranked) override;
  [[nodiscard]] bool has_scores() const override { return true; }
  [[nodiscard]] std::string id() const override { return "synthetic"; }

  /// True when `node` lies on some root-to-leaf path of `relation`.
  [[nodiscard]] bool gold_consistent(const NodeId& node, const std::string& relation) const;

 private:
  const RelationTree& tree_;
  SyntheticConfig config_;
  std::string template_;
};

/// Asks a chat model for a ranked answer "1st: <name>; 2nd: <name>".
/// Names match case-insensitively, first listed option wins on duplicates.
/// An unusable answer is retried once with the allowed names appended;
/// a second failure raises ParseError.
class LlmSelector final : public Selector {
 public:
  LlmSelector(LlmGateway& gateway, std::string classification_template, std::int64_t context_budget = 0,
              std::optional<std::uint64_t> seed = std::nullopt);

  Selection select(const Instance& instance, const OptionSet& options, int ranked) override;
  [[nodiscard]] std::string id() const override { return "llm:" + gateway_.backend_id(); }

  /// Parses a ranked answer against the options; nullopt entries are unmatched.
  [[nodiscard]] static std::vector<std::optional<NodeId>> parse_ranked(const std::string& answer,
                                                                       const OptionSet& options, int ranked);

 private:
  LlmGateway& gateway_;
  std::string template_;
  std::int64_t context_budget_;
  std::optional<std::uint64_t> seed_;
};

/// Forwards to another selector and copies each call's usage into a ledger.
class MeteredSelector final : public Selector {
 public:
  MeteredSelector(Selector& inner, UsageLedger& ledger) : inner_(inner), ledger_(ledger) {}
  Selection select(const Instance& instance, const OptionSet& options, int ranked) override;
  [[nodiscard]] bool has_scores() const override { return inner_.has_scores(); }
  [[nodiscard]] std::string id() const override { return inner_.id(); }

 private:
  Selector& inner_;
  UsageLedger& ledger_;
};

}  // namespace reltree
