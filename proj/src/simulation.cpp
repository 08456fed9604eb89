#include "reltree/simulation.hpp"

#include <cstdio>
#include <iomanip>
#include <sstream>

#include "reltree/error.hpp"
#include "reltree/prompts.hpp"
#include "reltree/random.hpp"

namespace reltree {

using ojson = nlohmann::ordered_json;

void SyntheticTreeSpec::check() const {
  if (branching < 2) throw ValidationError("synthetic tree branching must be at least 2");
  if (depth < 3) throw ValidationError("synthetic tree depth must be at least 3");
  std::size_t leaves = 1;
  for (int l = 2; l < depth; ++l) {
    leaves *= static_cast<std::size_t>(branching);
    if (leaves > 100000) throw ValidationError("synthetic tree would exceed 100000 leaves");
  }
  if (na_label.empty()) throw ValidationError("synthetic tree needs an NA label");
}

namespace {

std::string relation_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "r%03zu", i);
  return buf;
}

std::string fixed2(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << v;
  return out.str();
}

}  // namespace

RelationTree synthetic_tree(const SyntheticTreeSpec& spec) {
  spec.check();
  TreeDraft draft;
  const NodeId valid = draft.add_intermediate(draft.root(), std::string(kValidRelationsName), "relations that hold");
  const NodeId none = draft.add_intermediate(draft.root(), std::string(kNoValidRelationName), "no relation holds");
  draft.add_leaf(none, spec.na_label, "no relation");

  std::size_t next_relation = 1;
  std::vector<std::pair<NodeId, std::string>> frontier{{valid, ""}};
  for (int level = 2; level < spec.depth; ++level) {
    const bool leaf_level = level == spec.depth - 1;
    std::vector<std::pair<NodeId, std::string>> next;
    for (const auto& [parent, prefix] : frontier) {
      for (int c = 1; c <= spec.branching; ++c) {
        const std::string path = prefix.empty() ? std::to_string(c) : prefix + "." + std::to_string(c);
        if (leaf_level) {
          draft.add_leaf(parent, relation_name(next_relation++), "synthetic relation " + path);
        } else {
          next.emplace_back(draft.add_intermediate(parent, "group " + path, "synthetic group " + path), path);
        }
      }
    }
    frontier = std::move(next);
  }
  return draft.finish(spec.depth);
}

RelationSchema synthetic_schema(const SyntheticTreeSpec& spec) {
  spec.check();
  std::size_t leaves = 1;
  for (int l = 2; l < spec.depth; ++l) leaves *= static_cast<std::size_t>(spec.branching);
  std::vector<Relation> relations;
  for (std::size_t i = 1; i <= leaves; ++i) relations.push_back({relation_name(i), "synthetic relation"});
  relations.push_back({spec.na_label, "no relation"});
  return RelationSchema(std::move(relations), spec.na_label);
}

std::vector<Instance> synthetic_dataset(const RelationSchema& schema, std::size_t count, double na_fraction,
                                        std::uint64_t seed) {
  if (!(na_fraction >= 0.0 && na_fraction <= 1.0)) throw ValidationError("na_fraction must lie in [0, 1]");
  const auto positives = schema.positive_relations();
  if (positives.empty() && na_fraction < 1.0) throw ValidationError("schema has no positive relation");
  Rng rng(seed);
  std::vector<Instance> out;
  out.reserve(count);
  char id[32];
  for (std::size_t i = 0; i < count; ++i) {
    Instance inst;
    std::snprintf(id, sizeof id, "sim-%06zu", i + 1);
    inst.id = id;
    inst.head = "head entity " + std::to_string(i + 1);
    inst.tail = "tail entity " + std::to_string(i + 1);
    inst.context = {"A synthetic passage mentioning " + inst.head + ".",
                    "A second synthetic passage mentioning " + inst.tail + "."};
    inst.gold = rng.bernoulli(na_fraction) ? schema.na_label() : positives[rng.below(positives.size())].name;
    out.push_back(std::move(inst));
  }
  return out;
}

void SimulationConfig::check() const {
  tree.check();
  selector.accuracy.check();
  if (!(selector.confusion >= 0.0 && selector.confusion <= 1.0)) throw ValidationError("confusion must lie in [0, 1]");
  ptv.check();
  if (instances == 0) throw ValidationError("simulation needs at least one instance");
  if (!(na_fraction >= 0.0 && na_fraction <= 1.0)) throw ValidationError("na_fraction must lie in [0, 1]");
  if (concurrency < 1) throw ValidationError("concurrency must be at least 1");
  if (sweep_max_k < 0) throw ValidationError("sweep_max_k must not be negative");
}

ojson SimulationConfig::to_json() const {
  ojson out;
  out["tree"] = {{"branching", tree.branching}, {"depth", tree.depth}, {"na_label", tree.na_label}};
  out["accuracy"] = selector.accuracy.to_json();
  out["confusion"] = selector.confusion;
  out["ptv"] = ptv.to_json();
  out["instances"] = instances;
  out["na_fraction"] = na_fraction;
  out["seed"] = seed;
  out["sweep_max_k"] = sweep_max_k;
  out["sweep_instances"] = sweep_instances;
  return out;
}

SystemSummary summarize_run(const std::string& label, const std::vector<InstanceResult>& results,
                            const RelationTree& tree, const std::string& na_label) {
  SystemSummary s;
  s.label = label;
  std::vector<InferenceTrace> traces;
  std::vector<PredictionRecord> records;
  double latency = 0.0;
  std::size_t correct = 0;
  for (const auto& r : results) {
    latency += r.latency_seconds;
    if (!r.trace) continue;
    traces.push_back(*r.trace);
    records.push_back(record_from_trace(*r.trace));
    s.usage += r.trace->usage;
    if (r.trace->final_relation == r.trace->gold) ++correct;
  }
  if (!results.empty()) {
    s.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(results.size());
    s.avg_latency_seconds = latency / static_cast<double>(results.size());
  }
  s.micro_f1 = micro_f1(records, na_label);
  s.levels = level_diagnostics(traces, tree);
  return s;
}

SimulationReport simulate(const SimulationConfig& config) {
  config.check();
  SimulationReport rep;
  rep.config = config;
  const RelationTree tree = synthetic_tree(config.tree);
  const RelationSchema schema = synthetic_schema(config.tree);
  const auto data = synthetic_dataset(schema, config.instances, config.na_fraction, config.seed);
  const std::string tmpl = PromptTemplates::defaults().classification;

  SyntheticConfig sc = config.selector;
  sc.seed = hash_combine(config.seed, 0x5e1ec7);
  SyntheticSelector selector(tree, sc, tmpl);

  RunOptions run;
  run.concurrency = config.concurrency;
  run.ptv_config = config.ptv;
  run.ptv = false;
  rep.plain = summarize_run("w/o PtV", run_inference(data, tree, selector, run), tree, schema.na_label());
  run.ptv = true;
  rep.ptv = summarize_run("w/ PtV", run_inference(data, tree, selector, run), tree, schema.na_label());

  if (config.sweep_max_k > 0) {
    std::vector<Instance> subset = data;
    if (config.sweep_instances && config.sweep_instances < subset.size()) subset.resize(config.sweep_instances);
    for (int k = 1; k <= config.sweep_max_k; ++k) {
      run.ptv_config.k = k;
      const auto s = summarize_run("k=" + std::to_string(k), run_inference(subset, tree, selector, run), tree,
                                   schema.na_label());
      rep.sweep.push_back({k, s.accuracy, s.usage.calls,
                           static_cast<double>(s.usage.calls) / static_cast<double>(subset.size())});
    }
  }
  return rep;
}

namespace {

ojson summary_json(const SystemSummary& s) {
  ojson out;
  out["label"] = s.label;
  out["accuracy"] = s.accuracy;
  out["micro_f1"] = s.micro_f1;
  ojson levels = ojson::array();
  for (const auto& l : s.levels) {
    levels.push_back({{"level", l.level},
                      {"accuracy", l.accuracy},
                      {"error_propagation_ratio", l.propagation_ratio},
                      {"ratio_defined", l.ratio_defined},
                      {"CP", l.cp_percent},
                      {"WP", l.wp_percent},
                      {"SC", l.sc_percent}});
  }
  out["per_level"] = levels;
  out["usage"] = {{"calls", s.usage.calls}, {"input_tokens", s.usage.input_tokens}, {"output_tokens", s.usage.output_tokens}};
  return out;
}

EfficiencyRow efficiency(const SystemSummary& s) {
  EfficiencyRow r;
  r.label = s.label;
  r.calls = s.usage.calls;
  r.avg_input_tokens = s.usage.calls ? static_cast<double>(s.usage.input_tokens) / static_cast<double>(s.usage.calls) : 0.0;
  r.avg_latency_seconds = s.avg_latency_seconds;
  return r;
}

}  // namespace

ojson SimulationReport::to_json() const {
  ojson out;
  out["config"] = config.to_json();
  out["plain"] = summary_json(plain);
  out["ptv"] = summary_json(ptv);
  out["margin"] = margin();
  ojson sweep_rows = ojson::array();
  for (const auto& r : sweep) {
    sweep_rows.push_back({{"k", r.k}, {"accuracy", r.accuracy}, {"calls", r.calls}, {"calls_per_instance", r.calls_per_instance}});
  }
  out["k_sweep"] = sweep_rows;
  return out;
}

std::string SimulationReport::text() const {
  std::ostringstream out;
  out << "Final accuracy: w/o PtV " << fixed2(plain.accuracy) << ", w/ PtV " << fixed2(ptv.accuracy) << " (margin "
      << (margin() >= 0 ? "+" : "") << fixed2(margin()) << ")\n\n";

  out << "Level | Acc. w/o PtV | Acc. w/ PtV | Ratio w/o PtV | Ratio w/ PtV\n";
  out << "------+--------------+-------------+---------------+-------------\n";
  for (std::size_t i = 0; i < std::max(plain.levels.size(), ptv.levels.size()); ++i) {
    auto cell = [&](const std::vector<LevelDiagnostics>& v, bool ratio) {
      if (i >= v.size()) return std::string("-");
      return fixed2(ratio ? v[i].propagation_ratio : v[i].accuracy);
    };
    out << std::left << std::setw(5) << (i + 1) << " | " << std::setw(12) << cell(plain.levels, false) << " | "
        << std::setw(11) << cell(ptv.levels, false) << " | " << std::setw(13) << cell(plain.levels, true) << " | "
        << cell(ptv.levels, true) << "\n";
  }
  out << "\n" << format_diagnostics_pair(plain.label, plain.levels, ptv.label, ptv.levels);
  out << "\n" << format_efficiency({efficiency(plain), efficiency(ptv)});
  if (plain.usage.calls > 0) {
    out << "Call inflation: " << fixed2(static_cast<double>(ptv.usage.calls) / static_cast<double>(plain.usage.calls))
        << "x\n";
  }
  if (!sweep.empty()) {
    out << "\nk  | Accuracy | #LLM Calls | Calls/instance\n";
    out << "---+----------+------------+---------------\n";
    for (const auto& r : sweep) {
      out << std::left << std::setw(2) << r.k << " | " << std::setw(8) << fixed2(r.accuracy) << " | " << std::setw(10)
          << r.calls << " | " << fixed2(r.calls_per_instance) << "\n";
    }
  }
  return out.str();
}

}  // namespace reltree
