#include "reltree/cli.hpp"

#include <algorithm>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "reltree/error.hpp"
#include "reltree/evaluation.hpp"
#include "reltree/inference.hpp"
#include "reltree/io.hpp"
#include "reltree/prompts.hpp"
#include "reltree/schema.hpp"
#include "reltree/selector.hpp"
#include "reltree/simulation.hpp"
#include "reltree/train_expand.hpp"
#include "reltree/tree.hpp"
#include "reltree/tree_builder.hpp"

namespace reltree {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

RunManifest::RunManifest(std::string command)
    : command_(std::move(command)), started_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const std::string& path) {
  if (path.empty()) return;
  inputs_.emplace_back(path, io::file_sha256(path));
}

ojson RunManifest::to_json() const {
  ojson out;
  out["command"] = command_;
  out["config"] = config_;
  out["seeds"] = seeds_;
  ojson in = ojson::object();
  for (const auto& [path, digest] : inputs_) in[path] = digest;
  out["inputs"] = in;
  ojson outs = ojson::object();
  for (const auto& path : outputs_) outs[path] = io::file_sha256(path);
  out["outputs"] = outs;
  out["usage"] = {{"calls", usage_.calls}, {"input_tokens", usage_.input_tokens}, {"output_tokens", usage_.output_tokens}};
  out["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  if (!latencies_.empty()) {
    std::vector<double> s = latencies_;
    std::sort(s.begin(), s.end());
    auto pct = [&](double q) { return s[static_cast<std::size_t>(q * static_cast<double>(s.size() - 1))]; };
    double sum = 0.0;
    for (double v : s) sum += v;
    out["latency_seconds"] = {{"instances", s.size()},
                              {"mean", sum / static_cast<double>(s.size())},
                              {"p50", pct(0.5)},
                              {"p95", pct(0.95)},
                              {"max", s.back()}};
  }
  return out;
}

void RunManifest::write(const std::string& path) const { io::write_file_atomic(path, to_json().dump(2) + "\n"); }

namespace {

// Settings shared by every subcommand; flags override the config file.
struct Common {
  std::string config_path;
  std::string manifest_path;
  std::uint64_t seed = 42;
  bool seed_given = false;
  int concurrency = 1;
  json config = json::object();

  void load() {
    if (!config_path.empty()) {
      try {
        config = json::parse(io::read_file(config_path));
      } catch (const json::exception& e) {
        throw ValidationError("config '" + config_path + "': " + e.what());
      }
      if (!config.is_object()) throw ValidationError("config '" + config_path + "' must be a JSON object");
      if (!seed_given && config.contains("seed")) seed = config["seed"].get<std::uint64_t>();
    }
  }
  [[nodiscard]] json section(const std::string& name) const {
    return config.contains(name) && config[name].is_object() ? config[name] : json::object();
  }
  [[nodiscard]] PromptTemplates templates() const {
    if (config.contains("prompts_dir")) return PromptTemplates::from_directory(config["prompts_dir"].get<std::string>());
    return PromptTemplates::defaults();
  }
  [[nodiscard]] TokenPricing pricing() const {
    TokenPricing p;
    const json s = section("pricing");
    p.input_per_million = s.value("input_per_million", p.input_per_million);
    p.output_per_million = s.value("output_per_million", p.output_per_million);
    return p;
  }
  [[nodiscard]] RemoteConfig remote() const { return RemoteConfig::from_json(section("remote")); }

  void finish(RunManifest& manifest, std::ostream& out) const {
    std::string path = manifest_path;
    if (path.empty() && !manifest.outputs().empty()) path = manifest.outputs().front() + ".manifest.json";
    if (path.empty()) return;
    manifest.write(path);
    out << "manifest: " << path << "\n";
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--manifest", c.manifest_path, "run manifest path (default: <first output>.manifest.json)");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s; c.seed_given = true; }, "master seed (default 42)");
  cmd->add_option("--concurrency", c.concurrency, "worker threads")->check(CLI::PositiveNumber);
}

std::string join(const std::vector<std::string>& args) {
  std::string out;
  for (const auto& a : args) out += (out.empty() ? "" : " ") + a;
  return out;
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

ojson ledger_document(const UsageLedger& ledger) {
  const auto totals = ledger.totals();
  ojson calls = ojson::array();
  for (const auto& r : ledger.records()) {
    calls.push_back({{"backend", r.backend}, {"purpose", r.purpose}, {"input_tokens", r.input_tokens},
                     {"output_tokens", r.output_tokens}});
  }
  ojson out;
  out["totals"] = {{"calls", totals.calls}, {"input_tokens", totals.input_tokens}, {"output_tokens", totals.output_tokens}};
  out["calls"] = calls;
  return out;
}

std::vector<InferenceTrace> load_traces(const std::string& path) {
  std::vector<InferenceTrace> out;
  std::istringstream in(io::read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trace_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error&) {
      rethrow_with_context(path + ":" + std::to_string(line_no));
    }
  }
  return out;
}

std::string tree_stats_text(const RelationTree& tree) {
  const TreeStats s = stats(tree);
  std::ostringstream out;
  out << "Depth (levels)      " << s.depth << "\n";
  out << "Nodes per level     ";
  for (std::size_t l = 0; l < s.nodes_per_level.size(); ++l) out << (l ? " / " : "") << s.nodes_per_level[l];
  out << "\n";
  out << "Leaf nodes          " << s.leaf_count << "\n";
  out << "Intermediate nodes  " << s.intermediate_count << "\n";
  out << "Non-root nodes      " << s.non_root_count << "\n";
  out << "Parent nodes        " << s.parent_count << "\n";
  out << "Avg. children       " << fixed(s.avg_children) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------

struct BuildArgs {
  std::string schema, out, mode = "levelwise", backend = "offline", script, usage_out;
  int depth = 0;
  std::vector<std::string> criteria;
  int min_children = 0, max_children = 0;
};

int cmd_build(const BuildArgs& a, Common& c, const std::string& command, std::ostream& out) {
  c.load();
  RunManifest manifest(command);
  manifest.add_input(a.schema);
  if (!c.config_path.empty()) manifest.add_input(c.config_path);
  const RelationSchema schema = load_schema_file(a.schema);

  BuildConfig cfg;
  const json b = c.section("build");
  cfg.depth_limit = b.value("depth_limit", cfg.depth_limit);
  cfg.criteria = b.value("criteria", cfg.criteria);
  cfg.min_children = b.value("min_children", cfg.min_children);
  cfg.max_children = b.value("max_children", cfg.max_children);
  cfg.max_repair_retries = b.value("max_repair_retries", cfg.max_repair_retries);
  cfg.max_in_flight = b.value("max_in_flight", c.concurrency);
  if (a.depth) cfg.depth_limit = a.depth;
  if (!a.criteria.empty()) cfg.criteria = a.criteria;
  if (a.min_children) cfg.min_children = a.min_children;
  if (a.max_children) cfg.max_children = a.max_children;
  if (c.concurrency > 1) cfg.max_in_flight = c.concurrency;
  cfg.seed = c.seed;
  cfg.check();

  std::unique_ptr<LlmGateway> gateway;
  if (a.backend == "offline") {
    gateway = std::make_unique<OfflineBuildGateway>(c.seed);
  } else if (a.backend == "scripted") {
    if (a.script.empty()) throw ValidationError("--backend scripted needs --script");
    manifest.add_input(a.script);
    gateway = std::make_unique<ScriptedGateway>(ScriptedGateway::from_file(a.script));
  } else {
    gateway = std::make_unique<HttpGateway>(c.remote());
  }
  UsageLedger ledger;
  MeteredGateway metered(*gateway, ledger);
  TreeBuilder builder(metered, cfg, c.templates());
  const BuildResult result = a.mode == "singleshot" ? builder.build_singleshot(schema) : builder.build_levelwise(schema);

  io::write_file_atomic(a.out, save_tree(result.tree));
  manifest.add_output(a.out);
  if (!a.usage_out.empty()) {
    io::write_file_atomic(a.usage_out, ledger_document(ledger).dump(2) + "\n");
    manifest.add_output(a.usage_out);
  }
  ojson snapshot;
  snapshot["mode"] = a.mode;
  snapshot["backend"] = a.backend;
  snapshot["depth_limit"] = cfg.depth_limit;
  snapshot["criteria"] = result.schedule;
  snapshot["min_children"] = cfg.min_children;
  snapshot["max_children"] = cfg.max_children;
  snapshot["max_repair_retries"] = cfg.max_repair_retries;
  if (a.backend == "remote") snapshot["remote"] = c.remote().to_json();
  manifest.set_config(snapshot);
  manifest.add_seed("seed", c.seed);
  manifest.set_usage(ledger.totals());

  for (const auto& line : result.log) out << line << "\n";
  out << "Tree written to " << a.out << " (" << result.tree.size() << " nodes)\n\n";
  out << tree_stats_text(result.tree) << "\n";
  out << "Usage (" << ledger.totals().calls << " calls)\n" << ledger.cost_table(c.pricing());
  c.finish(manifest, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string schema, dataset, tree, backend = "synthetic", script, traces_out, records_out, usage_out, accuracy;
  std::string ptv = "on";
  int k = 0, max_rounds = 0, threshold = 0;
  double base_accuracy = -1.0, verification_accuracy = -1.0, confusion = -1.0;
  bool skip_errors = false, with_scores = false;
};

int cmd_infer(const InferArgs& a, Common& c, const std::string& command, std::ostream& out) {
  c.load();
  RunManifest manifest(command);
  for (const auto& p : {a.schema, a.dataset, a.tree, c.config_path}) manifest.add_input(p);
  const RelationSchema schema = load_schema_file(a.schema);
  const auto dataset = load_dataset_file(a.dataset, schema);
  const RelationTree tree = load_tree_file(a.tree);
  if (const auto report = validate(tree, schema); !report.ok()) {
    throw ValidationError("tree does not match schema: " + report.summary());
  }
  const PromptTemplates templates = c.templates();

  RunOptions run;
  const json p = c.section("ptv");
  run.ptv_config.max_rounds = p.value("max_rounds", run.ptv_config.max_rounds);
  run.ptv_config.k = p.value("k", run.ptv_config.k);
  run.ptv_config.alignment_threshold = p.value("alignment_threshold", run.ptv_config.alignment_threshold);
  if (a.k) run.ptv_config.k = a.k;
  if (a.max_rounds) run.ptv_config.max_rounds = a.max_rounds;
  if (a.threshold) run.ptv_config.alignment_threshold = a.threshold;
  run.ptv = a.ptv == "on";
  run.ptv_config.verification_enabled = run.ptv;
  run.ptv_config.check();
  run.concurrency = c.concurrency;
  run.skip_errors = a.skip_errors;
  run.with_scores = a.with_scores;

  std::unique_ptr<Selector> selector;
  std::unique_ptr<LlmGateway> gateway;
  ojson backend_cfg;
  if (a.backend == "synthetic") {
    SyntheticConfig sc;
    const json s = c.section("synthetic");
    if (s.contains("accuracy")) sc.accuracy = AccuracyTable::from_json(s["accuracy"]);
    sc.confusion = s.value("confusion", sc.confusion);
    if (!a.accuracy.empty()) {
      manifest.add_input(a.accuracy);
      sc.accuracy = AccuracyTable::from_json(json::parse(io::read_file(a.accuracy)));
    }
    if (a.base_accuracy >= 0) sc.accuracy.base = a.base_accuracy;
    if (a.verification_accuracy >= 0) sc.accuracy.verification = a.verification_accuracy;
    if (a.confusion >= 0) sc.confusion = a.confusion;
    sc.accuracy.check();
    sc.seed = c.seed;
    backend_cfg = {{"accuracy", sc.accuracy.to_json()}, {"confusion", sc.confusion}};
    selector = std::make_unique<SyntheticSelector>(tree, sc, templates.classification);
  } else if (a.backend == "scripted") {
    if (a.script.empty()) throw ValidationError("--backend scripted needs --script");
    manifest.add_input(a.script);
    selector = std::make_unique<ScriptedSelector>(ScriptedSelector::from_file(a.script, templates.classification));
  } else {
    const RemoteConfig rc = c.remote();
    backend_cfg = rc.to_json();
    gateway = std::make_unique<HttpGateway>(rc);
    selector = std::make_unique<LlmSelector>(*gateway, templates.classification,
                                             c.config.value("context_budget", std::int64_t{0}), c.seed);
  }
  UsageLedger ledger;
  MeteredSelector metered(*selector, ledger);
  const auto results = run_inference(dataset, tree, metered, run);

  std::string traces, records;
  std::vector<double> latencies;
  std::size_t skipped = 0;
  UsageTotals trace_usage;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    latencies.push_back(r.latency_seconds);
    if (!r.trace) {
      ++skipped;
      out << "skipped " << dataset[i].id << ": " << r.error << "\n";
      continue;
    }
    trace_usage += r.trace->usage;
    traces += trace_to_json(*r.trace).dump() + "\n";
    if (r.trace->gold) records += record_to_json(record_from_trace(*r.trace, r.distribution)).dump() + "\n";
  }
  io::write_file_atomic(a.traces_out, traces);
  manifest.add_output(a.traces_out);
  if (!a.records_out.empty()) {
    io::write_file_atomic(a.records_out, records);
    manifest.add_output(a.records_out);
  }
  if (!a.usage_out.empty()) {
    io::write_file_atomic(a.usage_out, ledger_document(ledger).dump(2) + "\n");
    manifest.add_output(a.usage_out);
  }

  ojson snapshot;
  snapshot["backend"] = a.backend;
  if (!backend_cfg.is_null()) snapshot["backend_config"] = backend_cfg;
  snapshot["ptv"] = run.ptv;
  snapshot["ptv_config"] = run.ptv_config.to_json();
  snapshot["concurrency"] = run.concurrency;
  snapshot["skip_errors"] = run.skip_errors;
  snapshot["with_scores"] = run.with_scores;
  manifest.set_config(snapshot);
  manifest.add_seed("seed", c.seed);
  manifest.set_usage(ledger.totals());
  manifest.set_latencies(latencies);

  const UsageTotals totals = ledger.totals();
  EfficiencyRow row;
  row.label = run.ptv ? "w/ PtV" : "w/o PtV";
  row.calls = trace_usage.calls;
  row.avg_input_tokens =
      trace_usage.calls ? static_cast<double>(trace_usage.input_tokens) / static_cast<double>(trace_usage.calls) : 0.0;
  double lat = 0.0;
  for (double l : latencies) lat += l;
  row.avg_latency_seconds = latencies.empty() ? 0.0 : lat / static_cast<double>(latencies.size());
  out << "Classified " << results.size() - skipped << " of " << results.size() << " instances\n\n";
  out << format_efficiency({row}) << "\n";
  out << ledger.cost_table(c.pricing());
  if (totals.calls != trace_usage.calls) {
    out << "ledger holds " << totals.calls - trace_usage.calls
        << " calls outside the traces (score distributions or skipped instances)\n";
  }
  c.finish(manifest, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ExpandArgs {
  std::string schema, dataset, tree, out, summary_out;
  bool all_paths = false;
};

int cmd_expand(const ExpandArgs& a, Common& c, const std::string& command, std::ostream& out) {
  c.load();
  RunManifest manifest(command);
  for (const auto& p : {a.schema, a.dataset, a.tree, c.config_path}) manifest.add_input(p);
  const RelationSchema schema = load_schema_file(a.schema);
  const auto dataset = load_dataset_file(a.dataset, schema);
  const RelationTree tree = load_tree_file(a.tree);
  const auto result = expand_dataset(dataset, tree, c.seed, a.all_paths ? PathPolicy::all : PathPolicy::canonical);
  io::write_file_atomic(a.out, training_file(result, dataset, tree, c.templates().classification));
  manifest.add_output(a.out);
  if (!a.summary_out.empty()) {
    io::write_file_atomic(a.summary_out, result.summary.to_json().dump(2) + "\n");
    manifest.add_output(a.summary_out);
  }
  manifest.set_config({{"path_policy", a.all_paths ? "all" : "canonical"}});
  manifest.add_seed("seed", c.seed);
  out << "Expanded " << result.summary.instances << " instances into " << result.samples.size() << " samples\n";
  out << result.summary.histogram();
  c.finish(manifest, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string records, traces, tree, schema, na, out;
  bool bag = false, diagnostics = false;
  std::vector<std::size_t> ks{500, 1000};
};

int cmd_evaluate(const EvalArgs& a, Common& c, const std::string& command, std::ostream& out) {
  c.load();
  RunManifest manifest(command);
  for (const auto& p : {a.records, a.traces, a.tree, a.schema, c.config_path}) manifest.add_input(p);
  if (a.records.empty() && a.traces.empty()) throw ValidationError("evaluate needs --records or --traces");
  std::string na = a.na;
  if (!a.schema.empty()) {
    const std::string schema_na = load_schema_file(a.schema).na_label();
    if (!na.empty() && na != schema_na) throw ValidationError("--na disagrees with the schema NA label");
    na = schema_na;
  }
  if (na.empty()) na = "NA";

  std::vector<InferenceTrace> traces;
  if (!a.traces.empty()) traces = load_traces(a.traces);
  std::vector<PredictionRecord> records;
  if (!a.records.empty()) {
    records = load_records(io::read_file(a.records));
  } else {
    for (const auto& t : traces) records.push_back(record_from_trace(t));
  }

  EvalOptions opts;
  opts.ks = a.ks;
  opts.bag = a.bag;
  std::optional<RelationTree> tree;
  if (a.diagnostics) {
    if (traces.empty() || a.tree.empty()) throw ValidationError("--diagnostics needs --traces and --tree");
    tree = load_tree_file(a.tree);
    opts.traces = &traces;
    opts.tree = &*tree;
  }
  const EvalReport report = evaluate(records, na, opts);
  if (!a.out.empty()) {
    io::write_file_atomic(a.out, report.to_json().dump(2) + "\n");
    manifest.add_output(a.out);
  }
  manifest.set_config({{"na_label", na}, {"bag", a.bag}, {"diagnostics", a.diagnostics}, {"ks", a.ks}});
  out << report.text();
  c.finish(manifest, out);
  return kExitOk;
}

struct BootstrapArgs {
  std::string a, b, metric = "micro", na = "NA", out;
  std::size_t resamples = 1000;
};

int cmd_bootstrap(const BootstrapArgs& a, Common& c, const std::string& command, std::ostream& out) {
  c.load();
  RunManifest manifest(command);
  manifest.add_input(a.a);
  manifest.add_input(a.b);
  const auto ra = load_records(io::read_file(a.a));
  const auto rb = load_records(io::read_file(a.b));
  const std::string na = a.na;
  Metric metric;
  if (a.metric == "micro") {
    metric = [na](const std::vector<PredictionRecord>& r) { return micro_f1(r, na); };
  } else if (a.metric == "binary") {
    metric = [na](const std::vector<PredictionRecord>& r) { return binary_f1(r, na); };
  } else {
    metric = [na](const std::vector<PredictionRecord>& r) { return max_f1(r, na); };
  }
  const auto res = paired_bootstrap(ra, rb, metric, a.resamples, c.seed);
  if (!a.out.empty()) {
    io::write_file_atomic(a.out, res.to_json().dump(2) + "\n");
    manifest.add_output(a.out);
  }
  manifest.set_config({{"metric", a.metric}, {"resamples", a.resamples}, {"na_label", na}});
  manifest.add_seed("seed", c.seed);
  out << a.metric << " F1: A " << fixed(res.observed_a) << ", B " << fixed(res.observed_b) << ", delta "
      << fixed(res.observed_delta) << "\n";
  out << "95% interval [" << fixed(res.ci_low) << ", " << fixed(res.ci_high) << "], p = " << fixed(res.p_value, 4)
      << " over " << res.resamples << " resamples\n";
  c.finish(manifest, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SimArgs {
  int branching = 4, depth = 5, k = 2, max_rounds = 3, threshold = 2, sweep = 0;
  std::size_t instances = 5000, sweep_instances = 0;
  double base = 0.7, verification = 0.9, confusion = 0.5, na_fraction = 0.1;
  std::string accuracy, out;
};

int cmd_simulate(const SimArgs& a, Common& c, const std::string& command, std::ostream& out) {
  c.load();
  RunManifest manifest(command);
  manifest.add_input(c.config_path);
  SimulationConfig cfg;
  cfg.tree.branching = a.branching;
  cfg.tree.depth = a.depth;
  cfg.selector.accuracy.base = a.base;
  cfg.selector.accuracy.verification = a.verification;
  if (!a.accuracy.empty()) {
    manifest.add_input(a.accuracy);
    cfg.selector.accuracy = AccuracyTable::from_json(json::parse(io::read_file(a.accuracy)));
  }
  cfg.selector.confusion = a.confusion;
  cfg.ptv.k = a.k;
  cfg.ptv.max_rounds = a.max_rounds;
  cfg.ptv.alignment_threshold = a.threshold;
  cfg.instances = a.instances;
  cfg.na_fraction = a.na_fraction;
  cfg.seed = c.seed;
  cfg.concurrency = c.concurrency;
  cfg.sweep_max_k = a.sweep;
  cfg.sweep_instances = a.sweep_instances;
  const SimulationReport rep = simulate(cfg);
  if (!a.out.empty()) {
    io::write_file_atomic(a.out, rep.to_json().dump(2) + "\n");
    manifest.add_output(a.out);
  }
  manifest.set_config(cfg.to_json());
  manifest.add_seed("seed", c.seed);
  UsageTotals total = rep.plain.usage;
  total += rep.ptv.usage;
  manifest.set_usage(total);
  out << rep.text();
  c.finish(manifest, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TreeArgs {
  std::string tree, schema, other, backend = "offline", script;
  bool render = false;
};

int cmd_tree_info(const TreeArgs& a, Common& c, const std::string& command, std::ostream& out) {
  c.load();
  RunManifest manifest(command);
  manifest.add_input(a.tree);
  manifest.add_input(a.schema);
  const RelationTree tree = load_tree_file(a.tree);
  if (a.render) out << dump_tree(tree) << "\n";
  out << tree_stats_text(tree);
  int code = kExitOk;
  if (!a.schema.empty()) {
    const auto report = validate(tree, load_schema_file(a.schema));
    out << "\n" << (report.ok() ? std::string("valid\n") : report.summary());
    if (!report.ok()) code = kExitValidation;
  }
  c.finish(manifest, out);
  return code;
}

int cmd_tree_similarity(const TreeArgs& a, Common& c, const std::string& command, std::ostream& out) {
  c.load();
  RunManifest manifest(command);
  manifest.add_input(a.tree);
  manifest.add_input(a.other);
  const RelationTree x = load_tree_file(a.tree);
  const RelationTree y = load_tree_file(a.other);
  out << "Edit distance  " << tree_edit_distance(x, y) << "\n";
  out << "Similarity     " << fixed(tree_edit_similarity(x, y)) << "\n";
  c.finish(manifest, out);
  return kExitOk;
}

int cmd_tree_coherence(const TreeArgs& a, Common& c, const std::string& command, std::ostream& out) {
  c.load();
  RunManifest manifest(command);
  manifest.add_input(a.tree);
  const RelationTree tree = load_tree_file(a.tree);
  std::unique_ptr<LlmGateway> gateway;
  if (a.backend == "offline") {
    gateway = std::make_unique<OfflineBuildGateway>(c.seed);
  } else if (a.backend == "scripted") {
    if (a.script.empty()) throw ValidationError("--backend scripted needs --script");
    manifest.add_input(a.script);
    gateway = std::make_unique<ScriptedGateway>(ScriptedGateway::from_file(a.script));
  } else {
    gateway = std::make_unique<HttpGateway>(c.remote());
  }
  UsageLedger ledger;
  MeteredGateway metered(*gateway, ledger);
  out << format_coherence(score_coherence(tree, metered, c.templates()));
  manifest.set_usage(ledger.totals());
  manifest.add_seed("seed", c.seed);
  c.finish(manifest, out);
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::validation: return kExitValidation;
    case ErrorKind::backend:
    case ErrorKind::capability: return kExitBackend;
    case ErrorKind::parse: return kExitParse;
  }
  return kExitValidation;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical relation trees with prediction-then-verification inference", "reltree"};
  app.require_subcommand(1);
  const std::string command = join(args);
  std::function<int()> action;
  Common common;

  const std::vector<std::string> backends_build{"offline", "scripted", "remote"};

  BuildArgs build;
  auto* b = app.add_subcommand("build-tree", "construct a relation tree from a schema");
  add_common(b, common);
  b->add_option("--schema", build.schema, "relation schema (JSON)")->required()->check(CLI::ExistingFile);
  b->add_option("--out", build.out, "tree file to write")->required();
  b->add_option("--mode", build.mode, "levelwise or singleshot")->check(CLI::IsMember({"levelwise", "singleshot"}));
  b->add_option("--backend", build.backend, "offline, scripted or remote")->check(CLI::IsMember(backends_build));
  b->add_option("--script", build.script, "scripted gateway responses")->check(CLI::ExistingFile);
  b->add_option("--depth", build.depth, "depth limit L");
  b->add_option("--criteria", build.criteria, "criterion per level from level 2 on")->delimiter(',');
  b->add_option("--min-children", build.min_children);
  b->add_option("--max-children", build.max_children);
  b->add_option("--usage-out", build.usage_out, "usage ledger file");
  b->callback([&] { action = [&] { return cmd_build(build, common, command, out); }; });

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "classify a dataset over a relation tree");
  add_common(i, common);
  i->add_option("--schema", infer.schema)->required()->check(CLI::ExistingFile);
  i->add_option("--dataset", infer.dataset, "instances (JSON lines)")->required()->check(CLI::ExistingFile);
  i->add_option("--tree", infer.tree)->required()->check(CLI::ExistingFile);
  i->add_option("--backend", infer.backend, "synthetic, scripted or remote")
      ->check(CLI::IsMember({"synthetic", "scripted", "remote"}));
  i->add_option("--script", infer.script, "scripted selector entries")->check(CLI::ExistingFile);
  i->add_option("--ptv", infer.ptv, "on or off")->check(CLI::IsMember({"on", "off"}));
  i->add_option("--k", infer.k, "verification breadth")->check(CLI::PositiveNumber);
  i->add_option("--max-rounds", infer.max_rounds, "rounds M before fallback")->check(CLI::PositiveNumber);
  i->add_option("--threshold", infer.threshold, "votes needed to accept when k = 2")->check(CLI::PositiveNumber);
  i->add_option("--accuracy", infer.accuracy, "synthetic accuracy table (JSON)")->check(CLI::ExistingFile);
  i->add_option("--base-accuracy", infer.base_accuracy)->check(CLI::Range(0.0, 1.0));
  i->add_option("--verification-accuracy", infer.verification_accuracy)->check(CLI::Range(0.0, 1.0));
  i->add_option("--confusion", infer.confusion)->check(CLI::Range(0.0, 1.0));
  i->add_flag("--skip-errors", infer.skip_errors, "record failing instances and continue");
  i->add_flag("--with-scores", infer.with_scores, "attach relation score distributions to records");
  i->add_option("--traces", infer.traces_out, "trace file to write")->required();
  i->add_option("--records", infer.records_out, "record file to write");
  i->add_option("--usage-out", infer.usage_out, "usage ledger file");
  i->callback([&] { action = [&] { return cmd_infer(infer, common, command, out); }; });

  ExpandArgs expand;
  auto* e = app.add_subcommand("expand-train", "emit D1/D2 training samples");
  add_common(e, common);
  e->add_option("--schema", expand.schema)->required()->check(CLI::ExistingFile);
  e->add_option("--dataset", expand.dataset)->required()->check(CLI::ExistingFile);
  e->add_option("--tree", expand.tree)->required()->check(CLI::ExistingFile);
  e->add_option("--out", expand.out, "training file (JSON lines)")->required();
  e->add_option("--summary-out", expand.summary_out, "counts per provenance (JSON)");
  e->add_flag("--all-paths", expand.all_paths, "expand every gold path, not only the first");
  e->callback([&] { action = [&] { return cmd_expand(expand, common, command, out); }; });

  EvalArgs eval;
  auto* v = app.add_subcommand("evaluate", "score a record or trace file");
  add_common(v, common);
  v->add_option("--records", eval.records)->check(CLI::ExistingFile);
  v->add_option("--traces", eval.traces)->check(CLI::ExistingFile);
  v->add_option("--tree", eval.tree)->check(CLI::ExistingFile);
  v->add_option("--schema", eval.schema, "takes the NA label from the schema")->check(CLI::ExistingFile);
  v->add_option("--na", eval.na, "NA label (default NA)");
  v->add_option("--p-at", eval.ks, "K values for P@K")->delimiter(',');
  v->add_flag("--bag", eval.bag, "bag-level aggregation");
  v->add_flag("--diagnostics", eval.diagnostics, "per-level CP/WP/SC table");
  v->add_option("--out", eval.out, "report file (JSON)");
  v->callback([&] { action = [&] { return cmd_evaluate(eval, common, command, out); }; });

  BootstrapArgs boot;
  auto* bs = app.add_subcommand("bootstrap", "paired bootstrap between two record files");
  add_common(bs, common);
  bs->add_option("--a", boot.a)->required()->check(CLI::ExistingFile);
  bs->add_option("--b", boot.b)->required()->check(CLI::ExistingFile);
  bs->add_option("--metric", boot.metric)->check(CLI::IsMember({"micro", "binary", "max"}));
  bs->add_option("--na", boot.na);
  bs->add_option("--resamples", boot.resamples)->check(CLI::PositiveNumber);
  bs->add_option("--out", boot.out);
  bs->callback([&] { action = [&] { return cmd_bootstrap(boot, common, command, out); }; });

  SimArgs sim;
  auto* s = app.add_subcommand("simulate", "paired PtV and plain runs on a synthetic tree");
  add_common(s, common);
  s->add_option("--branching", sim.branching);
  s->add_option("--depth", sim.depth);
  s->add_option("--instances", sim.instances);
  s->add_option("--base-accuracy", sim.base)->check(CLI::Range(0.0, 1.0));
  s->add_option("--verification-accuracy", sim.verification)->check(CLI::Range(0.0, 1.0));
  s->add_option("--accuracy", sim.accuracy, "accuracy table (JSON)")->check(CLI::ExistingFile);
  s->add_option("--confusion", sim.confusion)->check(CLI::Range(0.0, 1.0));
  s->add_option("--na-fraction", sim.na_fraction)->check(CLI::Range(0.0, 1.0));
  s->add_option("--k", sim.k)->check(CLI::PositiveNumber);
  s->add_option("--max-rounds", sim.max_rounds)->check(CLI::PositiveNumber);
  s->add_option("--threshold", sim.threshold)->check(CLI::PositiveNumber);
  s->add_option("--sweep", sim.sweep, "k sweep from 1 to this value");
  s->add_option("--sweep-instances", sim.sweep_instances, "instances per sweep point (default all)");
  s->add_option("--out", sim.out, "report file (JSON)");
  s->callback([&] { action = [&] { return cmd_simulate(sim, common, command, out); }; });

  TreeArgs tree;
  auto* t = app.add_subcommand("tree", "inspect relation trees");
  t->require_subcommand(1);
  auto* ti = t->add_subcommand("info", "statistics and validation");
  add_common(ti, common);
  ti->add_option("--tree", tree.tree)->required()->check(CLI::ExistingFile);
  ti->add_option("--schema", tree.schema)->check(CLI::ExistingFile);
  ti->add_flag("--render", tree.render, "print the tree");
  ti->callback([&] { action = [&] { return cmd_tree_info(tree, common, command, out); }; });
  auto* ts = t->add_subcommand("similarity", "tree edit similarity");
  add_common(ts, common);
  ts->add_option("--a", tree.tree)->required()->check(CLI::ExistingFile);
  ts->add_option("--b", tree.other)->required()->check(CLI::ExistingFile);
  ts->callback([&] { action = [&] { return cmd_tree_similarity(tree, common, command, out); }; });
  auto* tc = t->add_subcommand("coherence", "parent-child coherence");
  add_common(tc, common);
  tc->add_option("--tree", tree.tree)->required()->check(CLI::ExistingFile);
  tc->add_option("--backend", tree.backend)->check(CLI::IsMember(backends_build));
  tc->add_option("--script", tree.script)->check(CLI::ExistingFile);
  tc->callback([&] { action = [&] { return cmd_tree_coherence(tree, common, command, out); }; });

  // CLI11 takes the arguments reversed and without the program name.
  std::vector<std::string> rest;
  for (std::size_t n = args.size(); n > 1; --n) rest.push_back(args[n - 1]);
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }
  try {
    return action ? action() : kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (const auto* pe = dynamic_cast<const ParseError*>(&e); pe && !pe->raw_response().empty()) {
      err << "last response:\n" << pe->raw_response() << "\n";
    }
    return exit_code_for(e);
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace reltree
