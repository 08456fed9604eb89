#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltree/inference.hpp"
#include "reltree/tree.hpp"

namespace reltree {

struct PredictionRecord {
  std::string instance_id;
  std::string predicted;
  std::string gold;
  double confidence = 1.0;
  std::optional<std::map<std::string, double>> distribution;
  std::optional<std::string> bag_id;
  std::optional<std::string> trace_ref;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// Throws ValidationError on out-of-range confidence or a distribution not summing to 1.
void check_record(const PredictionRecord& record);

[[nodiscard]] nlohmann::ordered_json record_to_json(const PredictionRecord& record);
[[nodiscard]] PredictionRecord record_from_json(const nlohmann::json& doc);
[[nodiscard]] std::vector<PredictionRecord> load_records(std::string_view jsonl);
[[nodiscard]] std::string save_records(const std::vector<PredictionRecord>& records);

/// Throws ValidationError when the trace has no gold relation.
[[nodiscard]] PredictionRecord record_from_trace(const InferenceTrace& trace,
                                                 std::optional<std::map<std::string, double>> distribution = {});

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

/// F1 in percent; 0 whenever a denominator is 0.
[[nodiscard]] double f1_percent(const Confusion& c);

/// Positive classes only: a wrong positive prediction is one FP and, when
/// the gold is positive, one FN.
[[nodiscard]] Confusion micro_confusion(const std::vector<PredictionRecord>& records, const std::string& na_label);
[[nodiscard]] Confusion binary_confusion(const std::vector<PredictionRecord>& records, const std::string& na_label);

[[nodiscard]] double micro_f1(const std::vector<PredictionRecord>& records, const std::string& na_label);
[[nodiscard]] double binary_f1(const std::vector<PredictionRecord>& records, const std::string& na_label);

/// Positive candidate of a record under thresholding: the argmax positive
/// relation of its distribution, else its own positive prediction with its
/// confidence. nullopt when the record can only ever predict NA.
[[nodiscard]] std::optional<std::pair<std::string, double>> positive_candidate(const PredictionRecord& record,
                                                                               const std::string& na_label);

/// Predictions when every candidate scoring at least `threshold` is kept.
[[nodiscard]] std::vector<PredictionRecord> apply_threshold(const std::vector<PredictionRecord>& records,
                                                            const std::string& na_label, double threshold);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;  // percent
  double recall = 0.0;     // percent
  double f1 = 0.0;         // percent
};

/// One point per distinct candidate score, highest threshold first.
[[nodiscard]] std::vector<PrPoint> pr_curve(const std::vector<PredictionRecord>& records, const std::string& na_label);

[[nodiscard]] double max_f1(const std::vector<PredictionRecord>& records, const std::string& na_label);

/// Trapezoids over recall along pr_curve, starting from (0, first precision).
[[nodiscard]] double auc(const std::vector<PredictionRecord>& records, const std::string& na_label);

/// Precision among the K most confident positive predictions (ties by instance id).
[[nodiscard]] double precision_at_k(const std::vector<PredictionRecord>& records, std::size_t k,
                                    const std::string& na_label);

/// One record per bag, in order of first appearance. Throws ValidationError
/// on a missing bag id or a bag whose golds disagree.
[[nodiscard]] std::vector<PredictionRecord> bag_aggregate(const std::vector<PredictionRecord>& records,
                                                          const std::string& na_label);

struct LevelDiagnostics {
  int level = 0;
  std::size_t total = 0;
  std::size_t cp = 0;
  std::size_t wp = 0;
  std::size_t sc = 0;
  double accuracy = 0.0;            // percent
  double propagation_ratio = 0.0;   // percent of errors with a wrong parent
  bool ratio_defined = false;       // false when the level has no errors
  double cp_percent = 0.0;
  double wp_percent = 0.0;
  double sc_percent = 0.0;
};

/// Per-level outcome of each trace. A node is correct when it lies on any
/// gold path. Traces that already reached a leaf keep their final outcome at
/// deeper levels: a correct leaf counts as CP, a wrong one as WP.
[[nodiscard]] std::vector<LevelDiagnostics> level_diagnostics(const std::vector<InferenceTrace>& traces,
                                                              const RelationTree& tree);

struct BagSection {
  std::size_t bags = 0;
  double micro_f1 = 0.0;
  double binary_f1 = 0.0;
};

struct EvalReport {
  std::size_t records = 0;
  double micro_f1 = 0.0;
  double binary_f1 = 0.0;
  double max_f1 = 0.0;
  double auc = 0.0;
  std::map<std::size_t, double> p_at_k;
  std::optional<BagSection> bag;
  std::vector<LevelDiagnostics> levels;

  [[nodiscard]] nlohmann::ordered_json to_json() const;
  /// Plain-text tables: headline metrics, score-based metrics, bag level, per level.
  [[nodiscard]] std::string text() const;
};

struct EvalOptions {
  std::vector<std::size_t> ks = {500, 1000};
  bool bag = false;
  const std::vector<InferenceTrace>* traces = nullptr;  // enables level diagnostics
  const RelationTree* tree = nullptr;
};

[[nodiscard]] EvalReport evaluate(const std::vector<PredictionRecord>& records, const std::string& na_label,
                                  const EvalOptions& options = {});

[[nodiscard]] std::string format_diagnostics(const std::vector<LevelDiagnostics>& levels);

/// Side-by-side %CP/%WP/%SC per level for two systems.
[[nodiscard]] std::string format_diagnostics_pair(const std::string& label_a, const std::vector<LevelDiagnostics>& a,
                                                  const std::string& label_b, const std::vector<LevelDiagnostics>& b);

struct EfficiencyRow {
  std::string label;
  double avg_input_tokens = 0.0;  // per call
  std::int64_t calls = 0;
  double avg_latency_seconds = 0.0;  // per instance
};

[[nodiscard]] std::string format_efficiency(const std::vector<EfficiencyRow>& rows);

using Metric = std::function<double(const std::vector<PredictionRecord>&)>;

struct BootstrapResult {
  double observed_a = 0.0;
  double observed_b = 0.0;
  double observed_delta = 0.0;
  double ci_low = 0.0;   // 2.5th percentile of the resampled delta
  double ci_high = 0.0;  // 97.5th percentile
  double p_value = 0.0;  // share of resamples where a does not beat b
  std::size_t resamples = 0;

  [[nodiscard]] nlohmann::ordered_json to_json() const;
};

/// Paired resampling of instances present in both record sets.
[[nodiscard]] BootstrapResult paired_bootstrap(const std::vector<PredictionRecord>& a,
                                               const std::vector<PredictionRecord>& b, const Metric& metric,
                                               std::size_t resamples = 1000, std::uint64_t seed = 42);

}  // namespace reltree
