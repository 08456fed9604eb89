#include "reltree/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "reltree/error.hpp"
#include "reltree/random.hpp"

namespace reltree {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void check_record(const PredictionRecord& r) {
  if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
    throw ValidationError("record '" + r.instance_id + "': confidence outside [0, 1]");
  }
  if (r.distribution) {
    double sum = 0.0;
    for (const auto& [rel, p] : *r.distribution) {
      if (!(p >= 0.0)) throw ValidationError("record '" + r.instance_id + "': negative score for '" + rel + "'");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("record '" + r.instance_id + "': distribution does not sum to 1");
  }
}

ojson record_to_json(const PredictionRecord& r) {
  ojson out;
  out["instance_id"] = r.instance_id;
  out["predicted"] = r.predicted;
  out["gold"] = r.gold;
  out["confidence"] = r.confidence;
  if (r.distribution) {
    ojson d = ojson::object();
    for (const auto& [rel, p] : *r.distribution) d[rel] = p;
    out["distribution"] = d;
  }
  if (r.bag_id) out["bag_id"] = *r.bag_id;
  if (r.trace_ref) out["trace_ref"] = *r.trace_ref;
  return out;
}

PredictionRecord record_from_json(const json& doc) {
  PredictionRecord r;
  r.instance_id = doc.at("instance_id").get<std::string>();
  r.predicted = doc.at("predicted").get<std::string>();
  r.gold = doc.at("gold").get<std::string>();
  r.confidence = doc.value("confidence", 1.0);
  if (doc.contains("distribution") && !doc["distribution"].is_null()) {
    r.distribution = doc["distribution"].get<std::map<std::string, double>>();
  }
  if (doc.contains("bag_id") && !doc["bag_id"].is_null()) r.bag_id = doc["bag_id"].get<std::string>();
  if (doc.contains("trace_ref") && !doc["trace_ref"].is_null()) r.trace_ref = doc["trace_ref"].get<std::string>();
  check_record(r);
  return r;
}

std::vector<PredictionRecord> load_records(std::string_view jsonl) {
  std::vector<PredictionRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    const auto end = std::min(jsonl.find('\n', pos), jsonl.size());
    const std::string_view line = jsonl.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == jsonl.size()) break;
      continue;
    }
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == jsonl.size()) break;
  }
  return out;
}

std::string save_records(const std::vector<PredictionRecord>& records) {
  std::string out;
  for (const auto& r : records) out += record_to_json(r).dump() + "\n";
  return out;
}

PredictionRecord record_from_trace(const InferenceTrace& trace, std::optional<std::map<std::string, double>> distribution) {
  if (!trace.gold) throw ValidationError("trace '" + trace.instance_id + "' has no gold relation");
  PredictionRecord r;
  r.instance_id = trace.instance_id;
  r.predicted = trace.final_relation;
  r.gold = *trace.gold;
  r.confidence = std::clamp(trace.confidence, 0.0, 1.0);
  r.distribution = std::move(distribution);
  r.bag_id = trace.bag_id;
  r.trace_ref = trace.instance_id;
  return r;
}

// ---------------------------------------------------------------------------

double f1_percent(const Confusion& c) {
  const double p_den = static_cast<double>(c.tp + c.fp);
  const double r_den = static_cast<double>(c.tp + c.fn);
  if (p_den == 0.0 || r_den == 0.0) return 0.0;
  const double p = static_cast<double>(c.tp) / p_den;
  const double r = static_cast<double>(c.tp) / r_den;
  if (p + r == 0.0) return 0.0;
  return 100.0 * 2.0 * p * r / (p + r);
}

Confusion micro_confusion(const std::vector<PredictionRecord>& records, const std::string& na) {
  Confusion c;
  for (const auto& r : records) {
    const bool pred_pos = r.predicted != na;
    const bool gold_pos = r.gold != na;
    if (pred_pos && r.predicted == r.gold) {
      ++c.tp;
      continue;
    }
    if (pred_pos) ++c.fp;
    if (gold_pos) ++c.fn;
  }
  return c;
}

Confusion binary_confusion(const std::vector<PredictionRecord>& records, const std::string& na) {
  Confusion c;
  for (const auto& r : records) {
    const bool pred_pos = r.predicted != na;
    const bool gold_pos = r.gold != na;
    if (pred_pos && gold_pos) ++c.tp;
    if (pred_pos && !gold_pos) ++c.fp;
    if (!pred_pos && gold_pos) ++c.fn;
  }
  return c;
}

double micro_f1(const std::vector<PredictionRecord>& records, const std::string& na) {
  return f1_percent(micro_confusion(records, na));
}

double binary_f1(const std::vector<PredictionRecord>& records, const std::string& na) {
  return f1_percent(binary_confusion(records, na));
}

std::optional<std::pair<std::string, double>> positive_candidate(const PredictionRecord& r, const std::string& na) {
  if (r.distribution) {
    std::optional<std::pair<std::string, double>> best;
    for (const auto& [rel, p] : *r.distribution) {
      if (rel == na) continue;
      if (!best || p > best->second) best = std::make_pair(rel, p);
    }
    return best;
  }
  if (r.predicted != na) return std::make_pair(r.predicted, r.confidence);
  return std::nullopt;
}

std::vector<PredictionRecord> apply_threshold(const std::vector<PredictionRecord>& records, const std::string& na,
                                              double threshold) {
  std::vector<PredictionRecord> out = records;
  for (auto& r : out) {
    const auto cand = positive_candidate(r, na);
    r.predicted = cand && cand->second >= threshold ? cand->first : na;
  }
  return out;
}

std::vector<PrPoint> pr_curve(const std::vector<PredictionRecord>& records, const std::string& na) {
  struct Item {
    double score;
    bool correct;
    bool gold_pos;
  };
  std::vector<Item> items;
  std::size_t gold_pos = 0;
  for (const auto& r : records) {
    if (r.gold != na) ++gold_pos;
    if (const auto cand = positive_candidate(r, na)) items.push_back({cand->second, cand->first == r.gold, r.gold != na});
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
  std::vector<PrPoint> curve;
  Confusion c;
  c.fn = gold_pos;
  for (std::size_t i = 0; i < items.size();) {
    const double t = items[i].score;
    for (; i < items.size() && items[i].score == t; ++i) {
      if (items[i].correct) {
        ++c.tp;
        --c.fn;
      } else {
        ++c.fp;
      }
    }
    PrPoint p;
    p.threshold = t;
    p.precision = c.tp + c.fp ? 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    p.recall = gold_pos ? 100.0 * static_cast<double>(c.tp) / static_cast<double>(gold_pos) : 0.0;
    p.f1 = f1_percent(c);
    curve.push_back(p);
  }
  return curve;
}

double max_f1(const std::vector<PredictionRecord>& records, const std::string& na) {
  double best = 0.0;
  for (const auto& p : pr_curve(records, na)) best = std::max(best, p.f1);
  return best;
}

double auc(const std::vector<PredictionRecord>& records, const std::string& na) {
  const auto curve = pr_curve(records, na);
  if (curve.empty()) return 0.0;
  double area = 0.0;
  double prev_r = 0.0;
  double prev_p = curve.front().precision;
  for (const auto& p : curve) {
    area += (p.recall - prev_r) * (p.precision + prev_p) / 2.0;
    prev_r = p.recall;
    prev_p = p.precision;
  }
  return area / 100.0;
}

double precision_at_k(const std::vector<PredictionRecord>& records, std::size_t k, const std::string& na) {
  if (k == 0) throw ValidationError("K must be at least 1");
  std::vector<const PredictionRecord*> pos;
  for (const auto& r : records) {
    if (r.predicted != na) pos.push_back(&r);
  }
  std::sort(pos.begin(), pos.end(), [](const PredictionRecord* a, const PredictionRecord* b) {
    if (a->confidence != b->confidence) return a->confidence > b->confidence;
    return a->instance_id < b->instance_id;
  });
  const std::size_t n = std::min(k, pos.size());
  if (n == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) hit += pos[i]->predicted == pos[i]->gold ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(n);
}

std::vector<PredictionRecord> bag_aggregate(const std::vector<PredictionRecord>& records, const std::string& na) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const PredictionRecord*>> bags;
  for (const auto& r : records) {
    if (!r.bag_id) throw ValidationError("record '" + r.instance_id + "' has no bag id");
    auto [it, fresh] = bags.try_emplace(*r.bag_id);
    if (fresh) order.push_back(*r.bag_id);
    it->second.push_back(&r);
  }
  std::vector<PredictionRecord> out;
  for (const std::string& bag : order) {
    const auto& members = bags[bag];
    PredictionRecord agg;
    agg.instance_id = bag;
    agg.bag_id = bag;
    agg.gold = members.front()->gold;
    for (const auto* m : members) {
      if (m->gold != agg.gold) {
        throw ValidationError("bag '" + bag + "' mixes gold relations '" + agg.gold + "' and '" + m->gold + "'");
      }
    }
    std::map<std::string, std::pair<std::size_t, double>> votes;  // relation -> (count, max confidence)
    double max_conf = 0.0;
    for (const auto* m : members) {
      max_conf = std::max(max_conf, m->confidence);
      if (m->predicted == na) continue;
      auto& v = votes[m->predicted];
      ++v.first;
      v.second = std::max(v.second, m->confidence);
    }
    if (votes.empty()) {
      agg.predicted = na;
      agg.confidence = max_conf;
    } else {
      // std::map iterates names in order, so strict comparisons keep the first name on full ties.
      auto best = votes.begin();
      for (auto it = votes.begin(); it != votes.end(); ++it) {
        if (it->second.first > best->second.first ||
            (it->second.first == best->second.first && it->second.second > best->second.second)) {
          best = it;
        }
      }
      agg.predicted = best->first;
      agg.confidence = best->second.second;
    }
    out.push_back(std::move(agg));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<LevelDiagnostics> level_diagnostics(const std::vector<InferenceTrace>& traces, const RelationTree& tree) {
  std::size_t depth = 0;
  for (const auto& t : traces) {
    if (!t.gold) throw ValidationError("trace '" + t.instance_id + "' has no gold relation");
    depth = std::max(depth, t.levels.size());
  }
  std::vector<LevelDiagnostics> rows(depth);
  for (std::size_t l = 0; l < depth; ++l) rows[l].level = static_cast<int>(l + 1);

  for (const auto& t : traces) {
    const auto& leaves = tree.leaves_for(*t.gold);
    auto on_gold = [&](const NodeId& node) {
      return std::any_of(leaves.begin(), leaves.end(), [&](const NodeId& leaf) { return tree.is_ancestor_or_self(node, leaf); });
    };
    const bool final_ok = t.final_relation == *t.gold;
    bool parent_ok = true;
    for (std::size_t l = 0; l < depth; ++l) {
      LevelDiagnostics& row = rows[l];
      ++row.total;
      if (l >= t.levels.size()) {
        (final_ok ? row.cp : row.wp)++;
        continue;
      }
      const bool ok = on_gold(t.levels[l].chosen);
      if (ok) {
        ++row.cp;
      } else if (parent_ok) {
        ++row.sc;
      } else {
        ++row.wp;
      }
      parent_ok = ok;
    }
  }
  for (auto& row : rows) {
    const double n = static_cast<double>(row.total);
    if (row.total) {
      row.accuracy = 100.0 * static_cast<double>(row.cp) / n;
      row.cp_percent = 100.0 * static_cast<double>(row.cp) / n;
      row.wp_percent = 100.0 * static_cast<double>(row.wp) / n;
      row.sc_percent = 100.0 * static_cast<double>(row.sc) / n;
    }
    const std::size_t errors = row.wp + row.sc;
    row.ratio_defined = errors > 0;
    row.propagation_ratio = errors ? 100.0 * static_cast<double>(row.wp) / static_cast<double>(errors) : 0.0;
  }
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

std::string fixed2(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << v;
  return out.str();
}

std::string row(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::string cell = cells[i];
    if (cell.size() < widths[i]) cell.append(widths[i] - cell.size(), ' ');
    out += (i ? " | " : "") + cell;
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out + "\n";
}

std::string rule(const std::vector<std::size_t>& widths) {
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) out += (i ? "-+-" : "") + std::string(widths[i], '-');
  return out + "\n";
}

std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& body) {
  std::vector<std::size_t> widths(header.size(), 0);
  for (std::size_t i = 0; i < header.size(); ++i) widths[i] = header[i].size();
  for (const auto& r : body) {
    for (std::size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], r[i].size());
  }
  std::string out = row(header, widths) + rule(widths);
  for (const auto& r : body) out += row(r, widths);
  return out;
}

ojson levels_json(const std::vector<LevelDiagnostics>& levels) {
  ojson arr = ojson::array();
  for (const auto& l : levels) {
    ojson j;
    j["level"] = l.level;
    j["instances"] = l.total;
    j["accuracy"] = l.accuracy;
    j["error_propagation_ratio"] = l.propagation_ratio;
    j["ratio_defined"] = l.ratio_defined;
    j["CP"] = l.cp_percent;
    j["WP"] = l.wp_percent;
    j["SC"] = l.sc_percent;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

ojson EvalReport::to_json() const {
  ojson out;
  out["records"] = records;
  out["micro_f1"] = micro_f1;
  out["binary_f1"] = binary_f1;
  out["max_f1"] = max_f1;
  out["auc"] = auc;
  ojson pk = ojson::object();
  for (const auto& [k, v] : p_at_k) pk["P@" + std::to_string(k)] = v;
  out["p_at_k"] = pk;
  if (bag) out["bag"] = {{"bags", bag->bags}, {"micro_f1", bag->micro_f1}, {"binary_f1", bag->binary_f1}};
  out["per_level"] = levels_json(levels);
  return out;
}

std::string EvalReport::text() const {
  std::ostringstream out;
  out << "Records: " << records << "\n\n";
  out << table({"max F1", "micro F1", "binary F1"}, {{fixed2(max_f1), fixed2(micro_f1), fixed2(binary_f1)}});
  std::vector<std::string> header{"F1", "AUC"};
  std::vector<std::string> cells{fixed2(max_f1), fixed2(auc)};
  for (const auto& [k, v] : p_at_k) {
    header.push_back("P@" + std::to_string(k));
    cells.push_back(fixed2(v));
  }
  out << "\n" << table(header, {cells});
  if (bag) {
    out << "\n"
        << table({"bags", "bag-level micro F1", "bag-level binary F1"},
                 {{std::to_string(bag->bags), fixed2(bag->micro_f1), fixed2(bag->binary_f1)}});
  }
  if (!levels.empty()) out << "\n" << format_diagnostics(levels);
  return out.str();
}

std::string format_diagnostics(const std::vector<LevelDiagnostics>& levels) {
  std::vector<std::vector<std::string>> body;
  for (const auto& l : levels) {
    body.push_back({std::to_string(l.level), fixed2(l.accuracy),
                    l.ratio_defined ? fixed2(l.propagation_ratio) : fixed2(0.0) + " (no errors)", fixed2(l.cp_percent),
                    fixed2(l.wp_percent), fixed2(l.sc_percent)});
  }
  return table({"Level", "Accuracy", "Error Prop. Ratio", "%CP", "%WP", "%SC"}, body);
}

std::string format_diagnostics_pair(const std::string& label_a, const std::vector<LevelDiagnostics>& a,
                                    const std::string& label_b, const std::vector<LevelDiagnostics>& b) {
  std::vector<std::vector<std::string>> body;
  const std::size_t n = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [label, rows] : {std::pair{&label_a, &a}, std::pair{&label_b, &b}}) {
      if (i >= rows->size()) continue;
      const auto& l = (*rows)[i];
      body.push_back({std::to_string(l.level), *label, fixed2(l.cp_percent), fixed2(l.wp_percent), fixed2(l.sc_percent)});
    }
  }
  return table({"Level", "Model", "%CP", "%WP", "%SC"}, body);
}

std::string format_efficiency(const std::vector<EfficiencyRow>& rows) {
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows) {
    std::ostringstream calls;
    calls.imbue(std::locale::classic());
    std::string digits = std::to_string(r.calls);
    for (int i = static_cast<int>(digits.size()) - 3; i > 0; i -= 3) digits.insert(static_cast<std::size_t>(i), ",");
    std::ostringstream lat;
    lat << std::fixed << std::setprecision(2) << r.avg_latency_seconds << "s";
    body.push_back({r.label, fixed2(r.avg_input_tokens), digits, lat.str()});
  }
  return table({"Model", "Input Tok.", "#LLM Calls", "Latency"}, body);
}

EvalReport evaluate(const std::vector<PredictionRecord>& records, const std::string& na, const EvalOptions& options) {
  EvalReport rep;
  rep.records = records.size();
  rep.micro_f1 = micro_f1(records, na);
  rep.binary_f1 = binary_f1(records, na);
  rep.max_f1 = max_f1(records, na);
  rep.auc = auc(records, na);
  for (std::size_t k : options.ks) rep.p_at_k[k] = precision_at_k(records, k, na);
  if (options.bag) {
    const auto bags = bag_aggregate(records, na);
    rep.bag = BagSection{bags.size(), micro_f1(bags, na), binary_f1(bags, na)};
  }
  if (options.traces && options.tree) rep.levels = level_diagnostics(*options.traces, *options.tree);
  return rep;
}

ojson BootstrapResult::to_json() const {
  ojson out;
  out["a"] = observed_a;
  out["b"] = observed_b;
  out["delta"] = observed_delta;
  out["ci95"] = {ci_low, ci_high};
  out["p_value"] = p_value;
  out["resamples"] = resamples;
  return out;
}

BootstrapResult paired_bootstrap(const std::vector<PredictionRecord>& a, const std::vector<PredictionRecord>& b,
                                 const Metric& metric, std::size_t resamples, std::uint64_t seed) {
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& r : b) by_id.emplace(r.instance_id, &r);
  std::vector<std::pair<const PredictionRecord*, const PredictionRecord*>> pairs;
  for (const auto& r : a) {
    if (auto it = by_id.find(r.instance_id); it != by_id.end()) pairs.emplace_back(&r, it->second);
  }
  if (pairs.empty()) throw ValidationError("record sets share no instance ids");

  auto collect = [&](const std::vector<std::size_t>& idx, bool first) {
    std::vector<PredictionRecord> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(first ? *pairs[i].first : *pairs[i].second);
    return out;
  };
  std::vector<std::size_t> all(pairs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  BootstrapResult res;
  res.resamples = resamples;
  res.observed_a = metric(collect(all, true));
  res.observed_b = metric(collect(all, false));
  res.observed_delta = res.observed_a - res.observed_b;

  Rng rng(seed);
  std::vector<double> deltas;
  std::size_t not_better = 0;
  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t s = 0; s < resamples; ++s) {
    for (auto& i : idx) i = rng.below(pairs.size());
    const double d = metric(collect(idx, true)) - metric(collect(idx, false));
    deltas.push_back(d);
    if (d <= 0.0) ++not_better;
  }
  std::sort(deltas.begin(), deltas.end());
  if (!deltas.empty()) {
    auto pct = [&](double q) {
      const auto pos = static_cast<std::size_t>(std::floor(q * static_cast<double>(deltas.size() - 1)));
      return deltas[pos];
    };
    res.ci_low = pct(0.025);
    res.ci_high = pct(0.975);
    res.p_value = static_cast<double>(not_better) / static_cast<double>(resamples);
  }
  return res;
}

}  // namespace reltree
