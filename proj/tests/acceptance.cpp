// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "reltree/error.hpp"
#include "reltree/evaluation.hpp"
#include "reltree/inference.hpp"
#include "reltree/io.hpp"
#include "reltree/prompts.hpp"
#include "reltree/random.hpp"
#include "reltree/simulation.hpp"
#include "reltree/train_expand.hpp"
#include "reltree/tree_builder.hpp"
#include "support.hpp"

using namespace reltree;
using testsupport::data;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> problems;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (problems.size() < 5) problems.push_back(what);
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Instance instance(const std::string& id, const std::string& gold) {
  Instance i;
  i.id = id;
  i.context = {"First document about " + id + ".", "Second document about " + id + "."};
  i.head = "head " + id;
  i.tail = "tail " + id;
  i.gold = gold;
  return i;
}

// ---------------------------------------------------------------------------
// Criterion 1: classify_ptv against the hand-simulated golden traces.

Outcome criterion1() {
  Outcome o;
  const auto tree = testsupport::ptv_tree();
  const auto spec = nlohmann::json::parse(io::read_file(data("ptv/scenarios.json")));
  const auto t0 = Clock::now();
  std::size_t n = 0;
  for (const auto& sc : spec["scenarios"]) {
    const std::string name = sc["name"];
    auto selector = ScriptedSelector::from_json(sc["entries"]);
    PtvConfig cfg;
    cfg.k = sc["config"]["k"];
    cfg.max_rounds = sc["config"]["max_rounds"];
    cfg.alignment_threshold = sc["config"]["alignment_threshold"];
    const auto trace = classify_ptv(instance(sc["instance_id"], sc["gold"]), tree, selector, cfg);
    const std::string got = trace_to_json(trace).dump() + "\n";
    o.expect(got == io::read_file(data("ptv/golden/" + name + ".json")), name + " differs from its golden trace");
    ++n;
  }
  const double secs = seconds_since(t0);
  o.expect(n >= 10, "fewer than 10 scenarios");
  o.expect(secs < 1.0, "runtime " + fmt("%.3f", secs) + " s");
  o.detail = std::to_string(n) + " scenarios byte-identical, " + fmt("%.1f", secs * 1000) + " ms";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 2: brute-force metric oracles, written from the definitions.

namespace oracle {

bool positive(const std::string& rel, const std::string& na) { return rel != na; }

double f1(double tp, double fp, double fn) {
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return p + r > 0 ? 100.0 * 2 * p * r / (p + r) : 0.0;
}

// Returns (tp, fp, fn) where every positive class is scored separately and summed.
std::array<double, 3> micro_counts(const std::vector<PredictionRecord>& rs, const std::string& na) {
  std::set<std::string> classes;
  for (const auto& r : rs) {
    if (positive(r.gold, na)) classes.insert(r.gold);
    if (positive(r.predicted, na)) classes.insert(r.predicted);
  }
  std::array<double, 3> c{0, 0, 0};
  for (const auto& cls : classes) {
    for (const auto& r : rs) {
      const bool p = r.predicted == cls, g = r.gold == cls;
      c[0] += p && g;
      c[1] += p && !g;
      c[2] += !p && g;
    }
  }
  return c;
}

double micro(const std::vector<PredictionRecord>& rs, const std::string& na) {
  const auto c = micro_counts(rs, na);
  return f1(c[0], c[1], c[2]);
}

double binary(const std::vector<PredictionRecord>& rs, const std::string& na) {
  double tp = 0, fp = 0, fn = 0;
  for (const auto& r : rs) {
    const bool p = positive(r.predicted, na), g = positive(r.gold, na);
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  return f1(tp, fp, fn);
}

// Candidate = highest-scoring positive relation (first by name on ties) when a
// distribution exists, else the record's own positive prediction.
std::optional<std::pair<std::string, double>> candidate(const PredictionRecord& r, const std::string& na) {
  if (r.distribution) {
    std::vector<std::pair<std::string, double>> v(r.distribution->begin(), r.distribution->end());
    std::erase_if(v, [&](const auto& e) { return !positive(e.first, na); });
    if (v.empty()) return std::nullopt;
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    return v.front();
  }
  if (positive(r.predicted, na)) return std::make_pair(r.predicted, r.confidence);
  return std::nullopt;
}

std::vector<PredictionRecord> at_threshold(std::vector<PredictionRecord> rs, const std::string& na, double t) {
  for (auto& r : rs) {
    const auto c = candidate(r, na);
    r.predicted = c && c->second >= t ? c->first : na;
  }
  return rs;
}

std::vector<double> thresholds(const std::vector<PredictionRecord>& rs, const std::string& na) {
  std::set<double, std::greater<>> ts;
  for (const auto& r : rs) {
    if (const auto c = candidate(r, na)) ts.insert(c->second);
  }
  return {ts.begin(), ts.end()};
}

double max_f1(const std::vector<PredictionRecord>& rs, const std::string& na) {
  double best = 0.0;
  for (double t : thresholds(rs, na)) best = std::max(best, micro(at_threshold(rs, na, t), na));
  return best;
}

double auc(const std::vector<PredictionRecord>& rs, const std::string& na) {
  std::vector<std::pair<double, double>> pts;  // (recall, precision) in percent
  for (double t : thresholds(rs, na)) {
    const auto c = micro_counts(at_threshold(rs, na, t), na);
    const double gold_pos = static_cast<double>(
        std::count_if(rs.begin(), rs.end(), [&](const PredictionRecord& r) { return positive(r.gold, na); }));
    const double p = c[0] + c[1] > 0 ? 100.0 * c[0] / (c[0] + c[1]) : 0.0;
    const double rc = gold_pos > 0 ? 100.0 * c[0] / gold_pos : 0.0;
    pts.emplace_back(rc, p);
  }
  if (pts.empty()) return 0.0;
  double area = 0.0;
  std::pair<double, double> prev{0.0, pts.front().second};
  for (const auto& q : pts) {
    area += (q.first - prev.first) * (q.second + prev.second) / 2.0;
    prev = q;
  }
  return area / 100.0;
}

double p_at_k(const std::vector<PredictionRecord>& rs, std::size_t k, const std::string& na) {
  std::vector<PredictionRecord> pos;
  for (const auto& r : rs) {
    if (positive(r.predicted, na)) pos.push_back(r);
  }
  std::sort(pos.begin(), pos.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
    return std::tie(b.confidence, a.instance_id) < std::tie(a.confidence, b.instance_id);
  });
  pos.resize(std::min(k, pos.size()));
  if (pos.empty()) return 0.0;
  const auto hits = std::count_if(pos.begin(), pos.end(), [](const PredictionRecord& r) { return r.predicted == r.gold; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pos.size());
}

}  // namespace oracle

std::vector<PredictionRecord> random_fixture(Rng& rng) {
  const std::size_t n = 1 + rng.below(200);
  const std::size_t classes = 1 + rng.below(10);  // NA included
  const bool with_dist = rng.bernoulli(0.4);
  const bool coarse = rng.bernoulli(0.5);  // coarse confidences force ties
  std::vector<std::string> names{"NA"};
  for (std::size_t c = 1; c < classes; ++c) names.push_back("c" + std::to_string(c));
  auto conf = [&] { return coarse ? static_cast<double>(rng.below(11)) / 10.0 : rng.uniform(); };
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    PredictionRecord r;
    r.instance_id = "x" + std::to_string(rng.below(100000)) + "-" + std::to_string(i);
    r.gold = names[rng.below(names.size())];
    r.predicted = rng.bernoulli(0.5) ? r.gold : names[rng.below(names.size())];
    r.confidence = conf();
    if (with_dist) {
      std::map<std::string, double> d;
      double sum = 0.0;
      for (const auto& c : names) sum += d[c] = coarse ? static_cast<double>(1 + rng.below(4)) : rng.uniform() + 1e-3;
      for (auto& [c, p] : d) p /= sum;
      r.distribution = d;
    }
    out.push_back(std::move(r));
  }
  return out;
}

Outcome criterion2() {
  Outcome o;
  Rng rng(2024);
  const auto t0 = Clock::now();
  const std::string na = "NA";
  double worst = 0.0;
  auto close = [&](double a, double b, const std::string& what) {
    worst = std::max(worst, std::abs(a - b));
    o.expect(std::abs(a - b) <= 1e-9, what + ": " + fmt("%.12f", a) + " vs oracle " + fmt("%.12f", b));
  };
  for (int f = 0; f < 1000; ++f) {
    const auto rs = random_fixture(rng);
    const std::string tag = "fixture " + std::to_string(f);
    close(micro_f1(rs, na), oracle::micro(rs, na), tag + " micro F1");
    close(binary_f1(rs, na), oracle::binary(rs, na), tag + " binary F1");
    close(max_f1(rs, na), oracle::max_f1(rs, na), tag + " max F1");
    close(auc(rs, na), oracle::auc(rs, na), tag + " AUC");
    for (std::size_t k : {1, 5, 50, 500}) {
      close(precision_at_k(rs, k, na), oracle::p_at_k(rs, k, na), tag + " P@" + std::to_string(k));
    }
  }
  const double secs = seconds_since(t0);
  o.expect(secs < 30.0, "runtime " + fmt("%.1f", secs) + " s");
  o.detail = "1000 fixtures, max deviation " + fmt("%.1e", worst) + ", " + fmt("%.2f", secs) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 3: max F1 bounds fixed-threshold F1; P@500 can flip rank with sample size.

struct RankFlip {
  std::size_t n;
  double p500_a, p500_b, micro_a, micro_b;
};

Outcome criterion3() {
  Outcome o;
  const std::string na = "NA";
  Rng rng(2024);
  std::size_t checks = 0;
  for (int f = 0; f < 1000; ++f) {
    const auto rs = random_fixture(rng);
    const double best = max_f1(rs, na);
    for (int j = 0; j < 5; ++j) {
      const double t = rng.uniform();
      o.expect(best + 1e-9 >= micro_f1(apply_threshold(rs, na, t), na), "fixture " + std::to_string(f) + " threshold");
      ++checks;
    }
    for (double t : oracle::thresholds(rs, na)) {
      o.expect(best + 1e-9 >= micro_f1(apply_threshold(rs, na, t), na), "fixture " + std::to_string(f) + " curve point");
      ++checks;
    }
    if (!rs.front().distribution) {
      o.expect(best + 1e-9 >= micro_f1(rs, na), "fixture " + std::to_string(f) + " default predictions");
      ++checks;
    }
  }

  // Two systems over one population. A is uniformly 70% precise. B is right
  // with high confidence on a 2% slice and poor elsewhere. Small samples do
  // not hold 500 of B's confident hits, large ones do.
  const std::size_t population = 50000;
  std::vector<std::string> rels;
  for (int c = 1; c <= 9; ++c) rels.push_back("c" + std::to_string(c));
  Rng pop(77);
  std::vector<PredictionRecord> a, b;
  for (std::size_t i = 0; i < population; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "p%05zu", i);
    const std::string gold = rels[pop.below(rels.size())];
    auto wrong = [&] {
      std::string w = gold;
      while (w == gold) w = rels[pop.below(rels.size())];
      return w;
    };
    PredictionRecord ra{id, pop.bernoulli(0.7) ? gold : wrong(), gold, pop.uniform(), {}, {}, {}};
    PredictionRecord rb{id, gold, gold, 0.0, {}, {}, {}};
    if (pop.bernoulli(0.02)) {
      rb.confidence = 0.95 + 0.05 * pop.uniform();
    } else {
      rb.predicted = pop.bernoulli(0.2) ? gold : wrong();
      rb.confidence = 0.9 * pop.uniform();
    }
    a.push_back(ra);
    b.push_back(rb);
  }
  std::vector<std::size_t> order(population);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(99);
  for (std::size_t i = population; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

  std::vector<RankFlip> rows;
  for (std::size_t n : {2000, 50000}) {
    std::vector<PredictionRecord> sa, sb;
    for (std::size_t i = 0; i < n; ++i) {
      sa.push_back(a[order[i]]);
      sb.push_back(b[order[i]]);
    }
    rows.push_back({n, precision_at_k(sa, 500, na), precision_at_k(sb, 500, na), micro_f1(sa, na), micro_f1(sb, na)});
  }
  const bool flip = (rows[0].p500_a > rows[0].p500_b) != (rows[1].p500_a > rows[1].p500_b);
  const bool micro_kept = (rows[0].micro_a > rows[0].micro_b) == (rows[1].micro_a > rows[1].micro_b);
  o.expect(flip, "P@500 did not flip rank");
  o.expect(micro_kept, "micro F1 changed rank");
  std::ostringstream d;
  d << checks << " threshold checks; P@500 A/B " << fmt("%.1f", rows[0].p500_a) << "/" << fmt("%.1f", rows[0].p500_b)
    << " at n=" << rows[0].n << ", " << fmt("%.1f", rows[1].p500_a) << "/" << fmt("%.1f", rows[1].p500_b)
    << " at n=" << rows[1].n << "; micro F1 A/B " << fmt("%.1f", rows[0].micro_a) << "/"
    << fmt("%.1f", rows[0].micro_b) << " and " << fmt("%.1f", rows[1].micro_a) << "/" << fmt("%.1f", rows[1].micro_b);
  o.detail = d.str();
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 4: seeded simulation regression.

constexpr double kRecordedMargin = 59.56;  // seed 42, see README

Outcome criterion4() {
  Outcome o;
  SimulationConfig c;
  c.tree.branching = 4;
  c.tree.depth = 5;
  c.instances = 5000;
  c.selector.accuracy.base = 0.7;
  c.selector.accuracy.verification = 0.9;
  c.seed = 42;
  const auto t0 = Clock::now();
  const auto rep = simulate(c);
  const double secs = seconds_since(t0);
  o.expect(rep.margin() > 0.0, "PtV does not beat plain");
  o.expect(std::abs(rep.margin() - kRecordedMargin) < 0.005, "margin " + fmt("%.2f", rep.margin()) + " drifted");
  for (std::size_t l = 1; l < rep.plain.levels.size(); ++l) {
    const auto& p = rep.plain.levels[l];
    const auto& v = rep.ptv.levels[l];
    const std::string lv = "level " + std::to_string(l + 1);
    o.expect(v.propagation_ratio < p.propagation_ratio, lv + " ratio not lower");
    o.expect(v.wp_percent < p.wp_percent, lv + " %WP not lower");
  }
  o.expect(secs < 60.0, "runtime " + fmt("%.1f", secs) + " s");
  o.detail = "accuracy " + fmt("%.2f", rep.plain.accuracy) + " -> " + fmt("%.2f", rep.ptv.accuracy) + " (margin +" +
             fmt("%.2f", rep.margin()) + "), ratio and %WP lower at levels 2-" +
             std::to_string(rep.plain.levels.size()) + ", " + fmt("%.1f", secs) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 5: tree pipeline.

void check_tree_invariants(Outcome& o, const RelationTree& t, const RelationSchema& s, const std::string& tag) {
  const auto rep = validate(t, s);
  o.expect(rep.ok(), tag + ": " + rep.summary());
  const auto& root = t.node(t.root_id());
  std::vector<std::string> level1;
  for (const auto& c : root.children) level1.push_back(t.node(c).name);
  o.expect(level1 == std::vector<std::string>{"valid relations", "no valid relation"}, tag + ": level-1 shape");
  const auto none = t.level_one_node("no valid relation");
  o.expect(none && t.node(*none).children.size() == 1 &&
               t.node(t.node(*none).children.front()).relation == s.na_label(),
           tag + ": NA placement");
  for (const auto& r : s.relations()) o.expect(!t.leaves_for(r.name).empty(), tag + ": missing " + r.name);
  const auto st = stats(t);
  o.expect(t.size() == 1 + st.intermediate_count + st.leaf_count, tag + ": node count identity");
  o.expect(st.avg_children == static_cast<double>(st.non_root_count) / static_cast<double>(st.parent_count),
           tag + ": avg_children identity");
  o.expect(st.non_root_count == t.size() - 1, tag + ": non-root identity");
}

// A random single-shot answer: nested groups, some relations left out, some
// invented, and a placement rule for each omission.
ScriptedGateway random_singleshot_script(const RelationSchema& s, Rng& rng, int depth_limit) {
  auto positives = s.positive_relations();
  std::vector<ScriptedGateway::Rule> rules;
  std::vector<std::string> kept, omitted;
  for (const auto& r : positives) (rng.bernoulli(0.15) ? omitted : kept).push_back(r.name);
  if (kept.empty()) {
    kept.push_back(omitted.back());
    omitted.pop_back();
  }
  int counter = 0;
  std::vector<std::string> top_groups;
  std::function<nlohmann::ordered_json(std::vector<std::string>, int)> make = [&](std::vector<std::string> rels,
                                                                                    int level) {
    if (rels.size() <= 2 || rng.bernoulli(0.3)) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& r : rels) arr.push_back(r);
      if (rng.bernoulli(0.2)) arr.push_back("invented_" + std::to_string(counter++));
      return arr;
    }
    const std::size_t parts = 2 + rng.below(std::min<std::size_t>(3, rels.size() - 1));
    std::vector<std::vector<std::string>> buckets(parts);
    for (std::size_t i = 0; i < rels.size(); ++i) buckets[i < parts ? i : rng.below(parts)].push_back(rels[i]);
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (auto& bucket : buckets) {
      const std::string name = "group " + std::to_string(counter++);
      if (level == 2) top_groups.push_back(name);
      obj[name] = make(bucket, level + 1);
    }
    return obj;
  };
  auto body = make(kept, 2);
  if (body.is_array()) {
    nlohmann::ordered_json wrap;
    wrap["group top"] = body;
    top_groups = {"group top"};
    body = wrap;
  }
  rules.push_back({{"hierarchical relation tree whose intermediate"}, {"```json\n" + body.dump(2) + "\n```"}, {}});
  for (const auto& r : omitted) {
    // Top-level groups always keep at least one real relation, so they survive pruning.
    const std::string answer = depth_limit >= 4 && rng.bernoulli(0.7)
                                   ? "valid relations > " + top_groups[rng.below(top_groups.size())]
                                   : "valid relations";
    rules.push_back({{"The relation \"" + r + "\""}, {answer}, {}});
  }
  return ScriptedGateway(std::move(rules));
}

Outcome criterion5() {
  Outcome o;
  const auto schema = testsupport::ptv_schema();
  BuildConfig cfg;
  cfg.depth_limit = 5;
  cfg.min_children = 2;
  cfg.max_children = 3;
  {
    auto gw = ScriptedGateway::from_file(data("build/levelwise_script.json"));
    TreeBuilder b(gw, cfg);
    const auto t = b.build_levelwise(schema).tree;
    o.expect(dump_tree(t) == io::read_file(data("build/levelwise_expected.txt")), "level-wise golden differs");
    check_tree_invariants(o, t, schema, "level-wise golden");
  }
  {
    auto gw = ScriptedGateway::from_file(data("build/singleshot_script.json"));
    TreeBuilder b(gw, cfg);
    const auto t = b.build_singleshot(schema).tree;
    o.expect(dump_tree(t) == io::read_file(data("build/singleshot_expected.txt")), "single-shot golden differs");
    check_tree_invariants(o, t, schema, "single-shot golden");
  }
  check_tree_invariants(o, testsupport::ptv_tree(), schema, "inference fixture");

  Rng rng(5150);
  std::size_t max_rel = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t positives = 1 + rng.below(49);
    max_rel = std::max(max_rel, positives + 1);
    std::vector<Relation> rels;
    for (std::size_t r = 0; r < positives; ++r) {
      rels.push_back({"rel_" + std::to_string(i) + "_" + std::to_string(r), "random relation " + std::to_string(r)});
    }
    rels.push_back({"NA", "no relation"});
    const RelationSchema s(std::move(rels), "NA");
    BuildConfig c;
    c.depth_limit = 3 + static_cast<int>(rng.below(4));
    c.min_children = 2;
    c.max_children = 2 + static_cast<int>(rng.below(5));
    c.seed = rng.next();
    const std::string tag = "schema " + std::to_string(i);
    try {
      OfflineBuildGateway offline(c.seed);
      TreeBuilder lw(offline, c);
      check_tree_invariants(o, lw.build_levelwise(s).tree, s, tag + " level-wise");
      auto scripted = random_singleshot_script(s, rng, c.depth_limit);
      TreeBuilder ss(scripted, c);
      check_tree_invariants(o, ss.build_singleshot(s).tree, s, tag + " single-shot");
    } catch (const std::exception& e) {
      o.expect(false, tag + ": " + e.what());
    }
  }
  o.detail = "2 goldens exact, 100 random schemas (<= " + std::to_string(max_rel) +
             " relations) valid in both modes, stats identities hold";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 6: D1/D2 expansion properties.

RelationTree random_tree(Rng& rng, std::vector<std::string>& relations) {
  TreeDraft d;
  const auto valid = d.add_intermediate(d.root(), std::string(kValidRelationsName));
  const auto none = d.add_intermediate(d.root(), std::string(kNoValidRelationName));
  d.add_leaf(none, "NA");
  const int depth = 3 + static_cast<int>(rng.below(4));
  relations.clear();
  std::function<void(const NodeId&, int)> grow = [&](const NodeId& parent, int level) {
    const std::size_t kids = 1 + rng.below(4);
    for (std::size_t k = 0; k < kids; ++k) {
      if (level == depth - 1 || rng.bernoulli(0.3)) {
        // Occasionally reuse a relation so some golds have several paths.
        std::string rel = !relations.empty() && rng.bernoulli(0.1) ? relations[rng.below(relations.size())]
                                                                   : "r" + std::to_string(relations.size());
        if (std::find(relations.begin(), relations.end(), rel) == relations.end()) relations.push_back(rel);
        bool clash = false;
        for (const auto& c : d.node(parent).children) clash = clash || d.node(c).name == rel;
        if (!clash) d.add_leaf(parent, rel);
      } else {
        grow(d.add_intermediate(parent, "g" + std::to_string(level) + "_" + std::to_string(k)), level + 1);
      }
    }
  };
  grow(valid, 2);
  relations.push_back("NA");
  return d.finish(depth);
}

Outcome criterion6() {
  Outcome o;
  Rng rng(606);
  std::size_t d1_total = 0, d2_total = 0;
  for (int draw = 0; draw < 500; ++draw) {
    std::vector<std::string> relations;
    const auto tree = random_tree(rng, relations);
    const std::string gold = relations[rng.below(relations.size())];
    const auto inst = instance("d" + std::to_string(draw), gold);
    const std::uint64_t seed = rng.next();
    const auto policy = rng.bernoulli(0.3) ? PathPolicy::all : PathPolicy::canonical;
    const auto res = expand_dataset({inst}, tree, seed, policy);
    const std::string tag = "draw " + std::to_string(draw);

    std::size_t expected_d1 = 0;
    for (const auto& path : gold_path(tree, gold, policy)) expected_d1 += path.size() - 1;
    std::size_t d1 = 0, d2 = 0;
    for (const auto& s : res.samples) {
      (s.provenance == Provenance::d1 ? d1 : d2)++;
      o.expect(std::find(s.options.begin(), s.options.end(), s.target) != s.options.end(), tag + ": target outside options");
      o.expect(std::set<NodeId>(s.options.begin(), s.options.end()).size() == s.options.size(), tag + ": repeated option");
    }
    o.expect(d1 == expected_d1, tag + ": |D1| != path_len - 1");
    o.expect(d2 <= 3 * d1, tag + ": |D2| > 3 |D1|");
    o.expect(d2 == 3 * (d1 - res.summary.levels_without_sibling), tag + ": D2 count");

    const auto again = expand_dataset({inst}, tree, seed, policy);
    const auto tmpl = PromptTemplates::defaults().classification;
    o.expect(training_file(res, {inst}, tree, tmpl) == training_file(again, {inst}, tree, tmpl), tag + ": not deterministic");
    d1_total += d1;
    d2_total += d2;
  }
  o.detail = "500 draws, " + std::to_string(d1_total) + " D1 and " + std::to_string(d2_total) +
             " D2 samples, targets in options, byte-identical reruns";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 7: usage accounting on a scripted 100-instance run.

Outcome criterion7() {
  Outcome o;
  SyntheticTreeSpec spec;
  spec.branching = 3;
  spec.depth = 4;
  const auto tree = synthetic_tree(spec);
  const auto schema = synthetic_schema(spec);
  const auto ds = synthetic_dataset(schema, 100, 0.1, 7);

  // Scripted model: reads the numbered options and the head entity, then
  // names a gold-consistent option first on 70% of prompts (by prompt hash).
  std::map<std::string, std::string> gold_of_head;
  for (const auto& i : ds) gold_of_head[i.head] = *i.gold;
  std::map<std::string, NodeId> node_of_name;
  for (const auto& n : tree.nodes()) node_of_name[tree.display_name(n.id)] = n.id;
  SyntheticSelector oracle_view(tree, {});
  const std::regex option_line(R"(^(\d+)\. (.+)$)");
  const std::regex head_line(R"(Head entity: ([^\n]+))");
  FunctionGateway script([&](const ChatRequest& req) {
    std::vector<std::string> names;
    std::istringstream in(req.prompt.substr(req.prompt.find("Relation options:")));
    std::string line;
    std::smatch m;
    while (std::getline(in, line)) {
      if (std::regex_match(line, m, option_line)) names.push_back(m[2]);
    }
    std::regex_search(req.prompt, m, head_line);
    const std::string gold = gold_of_head.at(m[1]);
    const std::uint64_t h = fnv1a(req.prompt);
    std::vector<std::string> good, bad;
    for (const auto& n : names) (oracle_view.gold_consistent(node_of_name.at(n), gold) ? good : bad).push_back(n);
    std::vector<std::string> ranked;
    if (!good.empty() && (bad.empty() || h % 10 < 7)) {
      ranked = {good.front(), bad.empty() ? good.back() : bad[(h / 10) % bad.size()]};
    } else {
      ranked = {bad[(h / 10) % bad.size()], good.empty() ? bad.front() : good.front()};
    }
    if (ranked[1] == ranked[0]) ranked[1] = names[(std::find(names.begin(), names.end(), ranked[0]) - names.begin() + 1) % names.size()];
    return Completion{"1st: " + ranked[0] + "; 2nd: " + ranked[1], 0, 0, {}};
  }, false, "scripted");

  const auto tmpl = PromptTemplates::defaults().classification;
  struct Run {
    std::string label;
    UsageLedger ledger;
    UsageTotals traced;
    double latency = 0.0;
  };
  Run runs[2];
  runs[0].label = "w/o PtV";
  runs[1].label = "w/ PtV";
  for (int r = 0; r < 2; ++r) {
    MeteredGateway metered(script, runs[r].ledger);
    LlmSelector selector(metered, tmpl);
    RunOptions ro;
    ro.ptv = r == 1;
    for (const auto& res : run_inference(ds, tree, selector, ro)) {
      runs[r].traced += res.trace->usage;
      runs[r].latency += res.latency_seconds;
    }
    const auto totals = runs[r].ledger.totals();
    UsageTotals summed;
    for (const auto& rec : runs[r].ledger.records()) {
      ++summed.calls;
      summed.input_tokens += rec.input_tokens;
      summed.output_tokens += rec.output_tokens;
    }
    o.expect(totals.calls == summed.calls && totals.input_tokens == summed.input_tokens &&
                 totals.output_tokens == summed.output_tokens,
             runs[r].label + ": ledger totals differ from the per-call sum");
    o.expect(totals.calls == runs[r].traced.calls && totals.input_tokens == runs[r].traced.input_tokens,
             runs[r].label + ": ledger differs from trace usage");
    o.expect(totals.input_tokens > 0, runs[r].label + ": no tokens counted");
  }
  std::vector<EfficiencyRow> rows;
  for (auto& run : runs) {
    const auto t = run.ledger.totals();
    rows.push_back({run.label, static_cast<double>(t.input_tokens) / static_cast<double>(t.calls), t.calls,
                    run.latency / static_cast<double>(ds.size())});
  }
  const double inflation = static_cast<double>(rows[1].calls) / static_cast<double>(rows[0].calls);
  o.expect(inflation > 1.0, "PtV made no extra calls");
  std::cout << format_efficiency(rows);
  o.detail = "ledger totals equal the per-call sums, call inflation " + fmt("%.2f", inflation) + "x";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 8: end-to-end through the command-line entry point.

Outcome criterion8() {
  Outcome o;
  testsupport::TempDir dir;
  const auto t0 = Clock::now();
  const std::string schema = data("toy_schema.json"), dataset = data("toy_dataset.jsonl");
  auto step = [&](const std::string& what, std::vector<std::string> args) {
    const auto r = testsupport::cli(std::move(args));
    o.expect(r.code == kExitOk, what + " exited with " + std::to_string(r.code) + ": " + r.err);
    return r;
  };
  step("build-tree", {"build-tree", "--schema", schema, "--out", dir.file("tree.json"), "--depth", "5",
                      "--min-children", "2", "--max-children", "4"});
  step("expand-train", {"expand-train", "--schema", schema, "--dataset", dataset, "--tree", dir.file("tree.json"),
                        "--out", dir.file("train.jsonl"), "--summary-out", dir.file("train_summary.json")});
  step("infer", {"infer", "--schema", schema, "--dataset", dataset, "--tree", dir.file("tree.json"), "--backend",
                 "synthetic", "--ptv", "on", "--with-scores", "--traces", dir.file("traces.jsonl"), "--records",
                 dir.file("records.jsonl"), "--concurrency", "4"});
  const auto ev = step("evaluate", {"evaluate", "--records", dir.file("records.jsonl"), "--traces",
                                    dir.file("traces.jsonl"), "--tree", dir.file("tree.json"), "--schema", schema,
                                    "--bag", "--diagnostics", "--out", dir.file("report.json")});
  const double secs = seconds_since(t0);
  if (o.pass) {
    const auto rep = nlohmann::json::parse(io::read_file(dir.file("report.json")));
    o.expect(rep["records"] == 44, "record count");
    for (const char* key : {"micro_f1", "binary_f1", "max_f1", "auc"}) {
      o.expect(rep.contains(key) && rep[key].is_number(), std::string("missing ") + key);
    }
    o.expect(rep["p_at_k"].size() == 2, "P@K section");
    o.expect(rep.contains("bag") && rep["bag"]["bags"] == 11, "bag section");
    o.expect(rep["per_level"].size() >= 3, "per-level section");
    o.expect(rep["auc"].get<double>() > 0.0, "empty PR curve");
    const auto train = nlohmann::json::parse(io::read_file(dir.file("train_summary.json")));
    o.expect(train["instances"] == 44, "training summary");
    for (const char* m : {"tree.json", "train.jsonl", "traces.jsonl", "report.json"}) {
      o.expect(std::filesystem::exists(dir.file(std::string(m) + ".manifest.json")), std::string("no manifest for ") + m);
    }
  }
  o.expect(secs < 10.0, "runtime " + fmt("%.2f", secs) + " s");
  o.detail = "build-tree, expand-train, infer and evaluate complete with every report section, " + fmt("%.2f", secs) + " s";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
      {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8}};
  int failed = 0;
  for (const auto& [n, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.problems.push_back(std::string("exception: ") + e.what());
    }
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")\n";
    for (const auto& p : o.problems) std::cout << "    " << p << "\n";
    std::cout.flush();
    failed += o.pass ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed\n" : "all criteria passed\n");
  return failed ? 1 : 0;
}
