#include "reltree/inference.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>

#include "reltree/error.hpp"

namespace reltree {

using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

void PtvConfig::check() const {
  if (max_rounds < 1) throw ValidationError("max_rounds must be at least 1");
  if (k < 1) throw ValidationError("k must be at least 1");
  if (alignment_threshold < 1 || alignment_threshold > 3) throw ValidationError("alignment_threshold must lie in [1, 3]");
}

int PtvConfig::threshold_for(std::size_t sets) const {
  if (sets == 3) return alignment_threshold;
  if (sets <= 1) return 1;
  return static_cast<int>(sets / 2 + 1);
}

json PtvConfig::to_json() const {
  return {{"max_rounds", max_rounds}, {"k", k}, {"verification_enabled", verification_enabled},
          {"alignment_threshold", alignment_threshold}};
}

std::vector<VerificationSet> build_verification_sets(const RelationTree& tree, const OptionSet& options,
                                                     const std::vector<NodeId>& top) {
  auto replace = [&](const std::vector<NodeId>& targets, int view) {
    VerificationSet out;
    out.options.view = view;
    out.replaced = targets;
    for (const Option& o : options.options) {
      if (std::find(targets.begin(), targets.end(), o.id) == targets.end()) {
        out.options.options.push_back(o);
        continue;
      }
      for (const NodeId& c : tree.children_of(o.id)) out.options.options.push_back({c, tree.display_name(c)});
    }
    return out;
  };
  std::vector<VerificationSet> sets;
  for (std::size_t i = 0; i < top.size(); ++i) sets.push_back(replace({top[i]}, static_cast<int>(i + 1)));
  if (top.size() >= 2) sets.push_back(replace(top, static_cast<int>(top.size() + 1)));
  return sets;
}

std::vector<VerificationSet> build_verification_sets(const RelationTree& tree, const OptionSet& options,
                                                     const NodeId& r1st, const NodeId& r2nd) {
  return build_verification_sets(tree, options, std::vector<NodeId>{r1st, r2nd});
}

bool aligned(const RelationTree& tree, const NodeId& aux, const NodeId& r1st, bool r1st_replaced) {
  if (!r1st_replaced) return aux == r1st;
  const auto kids = tree.children_of(r1st);
  return std::find(kids.begin(), kids.end(), aux) != kids.end();
}

bool aligned(const RelationTree& tree, const NodeId& aux, const NodeId& r1st, int view) {
  return aligned(tree, aux, r1st, view != 2);
}

std::vector<NodeId> InferenceTrace::chosen_path() const {
  std::vector<NodeId> out;
  for (const LevelTrace& l : levels) out.push_back(l.chosen);
  return out;
}

namespace {

OptionSet base_options(const RelationTree& tree, const NodeId& parent) {
  return OptionSet::from_ids(tree, tree.node(parent).children, 0);
}

void add_usage(UsageTotals& total, const Selection& s) { total += s.usage(); }

template <class Step>
InferenceTrace walk(const Instance& instance, const RelationTree& tree, bool ptv, Step&& step) {
  InferenceTrace trace;
  trace.instance_id = instance.id;
  trace.gold = instance.gold;
  trace.bag_id = instance.bag_id;
  trace.ptv = ptv;
  NodeId current = tree.root_id();
  while (!tree.node(current).is_leaf()) {
    const int level = tree.node(current).level + 1;
    try {
      LevelTrace lt = step(base_options(tree, current));
      lt.level = level;
      current = lt.chosen;
      trace.confidence *= lt.confidence;
      for (const PtvRound& r : lt.rounds) {
        add_usage(trace.usage, r.prediction);
        for (const VerificationStep& v : r.verifications) add_usage(trace.usage, v.selection);
      }
      trace.levels.push_back(std::move(lt));
    } catch (const Error&) {
      rethrow_with_context("instance '" + instance.id + "' level " + std::to_string(level));
    }
  }
  trace.final_leaf = current;
  trace.final_relation = *tree.node(current).relation;
  return trace;
}

}  // namespace

InferenceTrace classify_plain(const Instance& instance, const RelationTree& tree, Selector& selector) {
  return walk(instance, tree, false, [&](const OptionSet& options) {
    LevelTrace lt;
    lt.options = options;
    if (options.size() == 1) {
      lt.chosen = options.options.front().id;
      lt.outcome = "forced";
      return lt;
    }
    PtvRound round;
    round.options = options;
    round.prediction = selector.select(instance, options, 1);
    round.prediction.check(options);
    round.accepted = true;
    lt.chosen = round.prediction.best();
    lt.confidence = round.prediction.confidence_best();
    lt.outcome = "predicted";
    lt.rounds.push_back(std::move(round));
    return lt;
  });
}

LevelTrace ptv_level(const Instance& instance, const RelationTree& tree, const OptionSet& options, Selector& selector,
                     const PtvConfig& cfg) {
  cfg.check();
  options.check();
  LevelTrace lt;
  lt.options = options;
  OptionSet current = options;
  current.view = 0;
  for (int round_no = 1;; ++round_no) {
    if (current.size() == 1) {
      lt.chosen = current.options.front().id;
      lt.outcome = lt.rounds.empty() ? "forced" : "remaining";
      lt.confidence = 1.0;
      return lt;
    }
    const int depth = std::min<int>(cfg.k, static_cast<int>(current.size()));
    PtvRound round;
    round.options = current;
    round.prediction = selector.select(instance, current, depth);
    round.prediction.check(current);
    const NodeId r1st = round.prediction.best();
    std::vector<NodeId> top(round.prediction.ranking.begin(),
                            round.prediction.ranking.begin() +
                                std::min<std::ptrdiff_t>(depth, static_cast<std::ptrdiff_t>(round.prediction.ranking.size())));
    for (VerificationSet& set : build_verification_sets(tree, current, top)) {
      VerificationStep step;
      step.selection = selector.select(instance, set.options, 1);
      step.selection.check(set.options);
      const bool replaced = std::find(set.replaced.begin(), set.replaced.end(), r1st) != set.replaced.end();
      step.vote = aligned(tree, step.selection.best(), r1st, replaced);
      round.votes += step.vote ? 1 : 0;
      step.set = std::move(set);
      round.verifications.push_back(std::move(step));
    }
    round.threshold = cfg.threshold_for(round.verifications.size());
    round.accepted = round.votes >= round.threshold;
    const double confidence = round.prediction.confidence_best();
    lt.rounds.push_back(std::move(round));
    if (lt.rounds.back().accepted) {
      lt.chosen = r1st;
      lt.outcome = "accepted";
      lt.confidence = confidence;
      return lt;
    }
    if (round_no >= cfg.max_rounds) {
      lt.chosen = r1st;
      lt.outcome = "fallback";
      lt.confidence = confidence;
      return lt;
    }
    std::erase_if(current.options, [&](const Option& o) { return o.id == r1st; });
  }
}

InferenceTrace classify_ptv(const Instance& instance, const RelationTree& tree, Selector& selector,
                            const PtvConfig& cfg) {
  cfg.check();
  if (!cfg.verification_enabled) return classify_plain(instance, tree, selector);
  return walk(instance, tree, true,
              [&](const OptionSet& options) { return ptv_level(instance, tree, options, selector, cfg); });
}

std::map<std::string, double> score_distribution(const Instance& instance, const RelationTree& tree,
                                                 Selector& selector) {
  if (!selector.has_scores()) {
    throw CapabilityError("selector '" + selector.id() + "' reports no per-option scores");
  }
  std::map<std::string, double> best;
  std::vector<std::pair<NodeId, double>> stack{{tree.root_id(), 1.0}};
  while (!stack.empty()) {
    const auto [id, mass] = stack.back();
    stack.pop_back();
    const TreeNode& n = tree.node(id);
    if (n.is_leaf()) {
      double& slot = best[*n.relation];
      slot = std::max(slot, mass);
      continue;
    }
    const OptionSet options = base_options(tree, id);
    if (options.size() == 1) {
      stack.emplace_back(options.options.front().id, mass);
      continue;
    }
    Selection s;
    try {
      s = selector.select(instance, options, 1);
    } catch (const Error&) {
      rethrow_with_context("instance '" + instance.id + "' scoring under '" + n.name + "'");
    }
    double sum = 0.0;
    for (const Option& o : options.options) {
      auto it = s.per_option_scores.find(o.id);
      sum += it == s.per_option_scores.end() ? 0.0 : it->second;
    }
    for (auto it = options.options.rbegin(); it != options.options.rend(); ++it) {
      auto found = s.per_option_scores.find(it->id);
      const double score = found == s.per_option_scores.end() || sum <= 0.0 ? 0.0 : found->second / sum;
      stack.emplace_back(it->id, mass * score);
    }
  }
  double total = 0.0;
  for (const auto& [rel, score] : best) total += score;
  if (total > 0.0) {
    for (auto& [rel, score] : best) score /= total;
  }
  return best;
}

// ---------------------------------------------------------------------------

namespace {

ojson options_json(const OptionSet& o) {
  ojson ids = ojson::array();
  for (const Option& opt : o.options) ids.push_back(opt.id);
  return ids;
}

ojson selection_json(const Selection& s) {
  ojson out;
  out["ranking"] = s.ranking;
  out["confidences"] = s.confidences;
  if (!s.per_option_scores.empty()) {
    ojson scores = ojson::object();
    for (const auto& [id, v] : s.per_option_scores) scores[id] = v;
    out["scores"] = scores;
  }
  out["synthetic_confidence"] = s.synthetic_confidence;
  const UsageTotals u = s.usage();
  out["usage"] = {{"calls", u.calls}, {"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}};
  return out;
}

Selection selection_from(const json& j) {
  Selection s;
  s.ranking = j.at("ranking").get<std::vector<NodeId>>();
  s.confidences = j.at("confidences").get<std::vector<double>>();
  if (j.contains("scores")) s.per_option_scores = j["scores"].get<std::map<NodeId, double>>();
  s.synthetic_confidence = j.value("synthetic_confidence", false);
  if (j.contains("usage")) {
    const json& u = j["usage"];
    const auto calls = u.value("calls", std::int64_t{0});
    for (std::int64_t i = 0; i < calls; ++i) {
      UsageRecord r;
      if (i == 0) {
        r.input_tokens = u.value("input_tokens", std::int64_t{0});
        r.output_tokens = u.value("output_tokens", std::int64_t{0});
      }
      s.calls.push_back(r);
    }
  }
  return s;
}

OptionSet options_from(const json& j, int view) {
  OptionSet o;
  o.view = view;
  for (const auto& id : j) o.options.push_back({id.get<std::string>(), {}});
  return o;
}

}  // namespace

ojson trace_to_json(const InferenceTrace& t) {
  ojson out;
  out["instance_id"] = t.instance_id;
  out["gold"] = t.gold ? ojson(*t.gold) : ojson(nullptr);
  if (t.bag_id) out["bag_id"] = *t.bag_id;
  out["mode"] = t.ptv ? "ptv" : "plain";
  ojson levels = ojson::array();
  for (const LevelTrace& l : t.levels) {
    ojson lj;
    lj["level"] = l.level;
    lj["options"] = options_json(l.options);
    ojson rounds = ojson::array();
    for (const PtvRound& r : l.rounds) {
      ojson rj;
      rj["options"] = options_json(r.options);
      rj["prediction"] = selection_json(r.prediction);
      if (t.ptv) {
        ojson ver = ojson::array();
        for (const VerificationStep& v : r.verifications) {
          ojson vj;
          vj["view"] = view_name(v.set.options.view);
          vj["replaced"] = v.set.replaced;
          vj["options"] = options_json(v.set.options);
          vj["selection"] = selection_json(v.selection);
          vj["vote"] = v.vote;
          ver.push_back(std::move(vj));
        }
        rj["verifications"] = std::move(ver);
        rj["votes"] = r.votes;
        rj["threshold"] = r.threshold;
      }
      rj["accepted"] = r.accepted;
      rounds.push_back(std::move(rj));
    }
    lj["rounds"] = std::move(rounds);
    lj["chosen"] = l.chosen;
    lj["outcome"] = l.outcome;
    lj["confidence"] = l.confidence;
    levels.push_back(std::move(lj));
  }
  out["levels"] = std::move(levels);
  out["final_leaf"] = t.final_leaf;
  out["final_relation"] = t.final_relation;
  out["confidence"] = t.confidence;
  out["usage"] = {{"calls", t.usage.calls}, {"input_tokens", t.usage.input_tokens},
                  {"output_tokens", t.usage.output_tokens}};
  return out;
}

InferenceTrace trace_from_json(const json& doc) {
  try {
    InferenceTrace t;
    t.instance_id = doc.at("instance_id").get<std::string>();
    if (doc.contains("gold") && !doc["gold"].is_null()) t.gold = doc["gold"].get<std::string>();
    if (doc.contains("bag_id") && !doc["bag_id"].is_null()) t.bag_id = doc["bag_id"].get<std::string>();
    t.ptv = doc.value("mode", std::string("plain")) == "ptv";
    for (const json& lj : doc.at("levels")) {
      LevelTrace l;
      l.level = lj.at("level").get<int>();
      l.options = options_from(lj.at("options"), 0);
      for (const json& rj : lj.value("rounds", json::array())) {
        PtvRound r;
        r.options = options_from(rj.at("options"), 0);
        r.prediction = selection_from(rj.at("prediction"));
        for (const json& vj : rj.value("verifications", json::array())) {
          VerificationStep v;
          const std::string view = vj.at("view").get<std::string>();
          v.set.options = options_from(vj.at("options"), view == "base" ? 0 : std::stoi(view.substr(1)));
          v.set.replaced = vj.at("replaced").get<std::vector<NodeId>>();
          v.selection = selection_from(vj.at("selection"));
          v.vote = vj.at("vote").get<bool>();
          r.verifications.push_back(std::move(v));
        }
        r.votes = rj.value("votes", 0);
        r.threshold = rj.value("threshold", 0);
        r.accepted = rj.at("accepted").get<bool>();
        l.rounds.push_back(std::move(r));
      }
      l.chosen = lj.at("chosen").get<std::string>();
      l.outcome = lj.at("outcome").get<std::string>();
      l.confidence = lj.value("confidence", 1.0);
      t.levels.push_back(std::move(l));
    }
    t.final_leaf = doc.at("final_leaf").get<std::string>();
    t.final_relation = doc.at("final_relation").get<std::string>();
    t.confidence = doc.value("confidence", 1.0);
    if (doc.contains("usage")) {
      t.usage.calls = doc["usage"].value("calls", std::int64_t{0});
      t.usage.input_tokens = doc["usage"].value("input_tokens", std::int64_t{0});
      t.usage.output_tokens = doc["usage"].value("output_tokens", std::int64_t{0});
    }
    return t;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed trace: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::vector<InstanceResult> run_inference(const std::vector<Instance>& instances, const RelationTree& tree,
                                          Selector& selector, const RunOptions& options) {
  options.ptv_config.check();
  if (options.with_scores && !selector.has_scores()) {
    throw CapabilityError("selector '" + selector.id() + "' reports no per-option scores");
  }
  std::vector<InstanceResult> results(instances.size());
  std::vector<std::exception_ptr> failures(instances.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= instances.size()) return;
      const auto started = std::chrono::steady_clock::now();
      try {
        InstanceResult r;
        r.trace = options.ptv ? classify_ptv(instances[i], tree, selector, options.ptv_config)
                              : classify_plain(instances[i], tree, selector);
        if (options.with_scores) r.distribution = score_distribution(instances[i], tree, selector);
        r.latency_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        results[i] = std::move(r);
      } catch (const Error& e) {
        if (options.skip_errors) {
          results[i].error = e.what();
          results[i].latency_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        } else {
          failures[i] = std::current_exception();
          stop.store(true);
        }
      }
    }
  };

  const int threads = std::max(1, std::min<int>(options.concurrency, static_cast<int>(instances.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return results;
}

}  // namespace reltree
