#include "reltree/selector.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <regex>
#include <set>
#include <sstream>

#include "reltree/error.hpp"
#include "reltree/io.hpp"
#include "reltree/random.hpp"

namespace reltree {

using json = nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Index of the option whose id, or failing that name, equals `key`.
std::optional<std::size_t> resolve(const OptionSet& options, const std::string& key) {
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (options.options[i].id == key) return i;
  }
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (options.options[i].name == key) return i;
  }
  return std::nullopt;
}

UsageRecord estimated_call(const std::string& backend, const Instance& instance, const OptionSet& options,
                           const std::string& tmpl, const std::vector<NodeId>& ranking, int ranked) {
  UsageRecord rec;
  rec.backend = backend;
  rec.purpose = "select:" + view_name(options.view);
  rec.timestamp = std::chrono::system_clock::now();
  if (tmpl.empty()) return rec;
  rec.input_tokens = estimate_tokens(render_prompt(instance, options, tmpl));
  std::string answer;
  for (std::size_t i = 0; i < ranking.size() && i < static_cast<std::size_t>(std::max(ranked, 1)); ++i) {
    const auto idx = resolve(options, ranking[i]);
    answer += (i ? "; " : "") + ordinal(i + 1) + ": " + (idx ? options.options[*idx].name : ranking[i]);
  }
  rec.output_tokens = estimate_tokens(answer);
  return rec;
}

Selection forced(const OptionSet& options) {
  Selection s;
  s.ranking = {options.options.front().id};
  s.confidences = {1.0};
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

OptionSet OptionSet::from_ids(const RelationTree& tree, const std::vector<NodeId>& ids, int view) {
  OptionSet set;
  set.view = view;
  for (const NodeId& id : ids) set.options.push_back({id, tree.display_name(id)});
  return set;
}

void OptionSet::check() const {
  if (options.empty()) throw ValidationError("option set is empty");
  std::set<NodeId> seen;
  for (const Option& o : options) {
    if (!seen.insert(o.id).second) throw ValidationError("option '" + o.id + "' appears twice");
  }
}

bool OptionSet::contains(const NodeId& id) const {
  return std::any_of(options.begin(), options.end(), [&](const Option& o) { return o.id == id; });
}

std::vector<NodeId> OptionSet::ids() const {
  std::vector<NodeId> out;
  out.reserve(options.size());
  for (const Option& o : options) out.push_back(o.id);
  return out;
}

std::uint64_t OptionSet::hash() const {
  std::uint64_t h = fnv1a("");
  for (const Option& o : options) {
    h = fnv1a(o.id, h);
    h = fnv1a(std::string_view("\x1f", 1), h);
  }
  return h;
}

std::string OptionSet::hash_hex() const {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << hash();
  return out.str();
}

std::string view_name(int view) { return view == 0 ? "base" : "v" + std::to_string(view); }

UsageTotals Selection::usage() const {
  UsageTotals t;
  for (const UsageRecord& r : calls) {
    ++t.calls;
    t.input_tokens += r.input_tokens;
    t.output_tokens += r.output_tokens;
  }
  return t;
}

void Selection::check(const OptionSet& options) const {
  if (ranking.empty()) throw BackendError("selection has no best option");
  std::set<NodeId> seen;
  for (const NodeId& id : ranking) {
    if (!options.contains(id)) throw BackendError("selected '" + id + "' is not among the options");
    if (!seen.insert(id).second) throw BackendError("option '" + id + "' ranked twice");
  }
  if (confidences.size() != ranking.size()) throw BackendError("confidences do not match the ranking");
  for (double c : confidences) {
    if (!(c >= 0.0 && c <= 1.0)) throw BackendError("confidence outside [0, 1]");
  }
  if (!per_option_scores.empty()) {
    double sum = 0.0;
    for (const auto& [id, score] : per_option_scores) {
      if (!options.contains(id)) throw BackendError("score for unknown option '" + id + "'");
      if (!(score >= 0.0)) throw BackendError("negative option score");
      sum += score;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw BackendError("option scores do not sum to 1");
  }
}

std::vector<double> rank_default_confidences(std::size_t ranked, std::size_t option_count) {
  std::vector<double> out;
  if (option_count == 1) return std::vector<double>(std::min<std::size_t>(ranked, 1), 1.0);
  for (std::size_t i = 0; i < ranked; ++i) {
    if (i == 0) {
      out.push_back(0.6);
    } else if (i == 1) {
      out.push_back(option_count == 2 ? 0.4 : 0.3);
    } else {
      out.push_back(0.1 / static_cast<double>(option_count - 2));
    }
  }
  return out;
}

std::string ordinal(std::size_t n) {
  const std::size_t tens = n % 100;
  const char* suffix = "th";
  if (tens < 11 || tens > 13) {
    switch (n % 10) {
      case 1: suffix = "st"; break;
      case 2: suffix = "nd"; break;
      case 3: suffix = "rd"; break;
      default: break;
    }
  }
  return std::to_string(n) + suffix;
}

// ---------------------------------------------------------------------------

std::string render_prompt(const Instance& instance, const OptionSet& options, const std::string& tmpl) {
  static const char* const kKeys[] = {"context", "head", "tail", "options"};
  for (const char* key : kKeys) {
    if (tmpl.find(std::string("{") + key + "}") == std::string::npos) {
      throw ValidationError(std::string("classification template lacks the {") + key + "} placeholder");
    }
  }
  std::string context;
  for (std::size_t i = 0; i < instance.context.size(); ++i) {
    context += (i ? "\n" : "") + ("Document " + std::to_string(i + 1) + ": " + instance.context[i]);
  }
  std::string listing;
  for (std::size_t i = 0; i < options.size(); ++i) {
    listing += (i ? "\n" : "") + (std::to_string(i + 1) + ". " + options.options[i].name);
  }
  const std::map<std::string, const std::string*> values = {
      {"context", &context}, {"head", &instance.head}, {"tail", &instance.tail}, {"options", &listing}};

  std::string out;
  out.reserve(tmpl.size() + context.size() + listing.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string::npos) break;
    const auto close = tmpl.find('}', open);
    if (close == std::string::npos) break;
    auto it = values.find(tmpl.substr(open + 1, close - open - 1));
    if (it == values.end()) {
      out.append(tmpl, pos, open + 1 - pos);
      pos = open + 1;
      continue;
    }
    out.append(tmpl, pos, open - pos);
    out += *it->second;
    pos = close + 1;
  }
  out.append(tmpl, pos, std::string::npos);
  return out;
}

std::vector<std::string> truncate_context(const std::vector<std::string>& context, std::int64_t max_tokens) {
  if (max_tokens <= 0 || context.empty()) return context;
  std::int64_t total = 0;
  for (const auto& doc : context) total += estimate_tokens(doc);
  if (total <= max_tokens) return context;

  const std::int64_t share = std::max<std::int64_t>(1, max_tokens / static_cast<std::int64_t>(context.size()));
  std::vector<std::string> out;
  for (const auto& doc : context) {
    if (estimate_tokens(doc) <= share) {
      out.push_back(doc);
      continue;
    }
    // Largest prefix within the share, cut at a whitespace boundary when one exists.
    std::size_t lo = 0;
    std::size_t hi = doc.size();
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      if (estimate_tokens(std::string_view(doc).substr(0, mid)) <= share) {
        lo = mid;
      } else {
        hi = mid - 1;
      }
    }
    std::size_t cut = lo;
    const auto space = doc.rfind(' ', cut);
    if (space != std::string::npos && space > 0 && cut < doc.size() && doc[cut] != ' ') cut = space;
    out.push_back(trim(doc.substr(0, cut)));
  }
  return out;
}

// ---------------------------------------------------------------------------

ScriptedSelector::ScriptedSelector(std::vector<Entry> entries, std::string classification_template)
    : entries_(std::move(entries)), template_(std::move(classification_template)) {
  for (const Entry& e : entries_) {
    if (e.ranking.empty()) throw ValidationError("script entry for '" + e.instance_id + "' has no best option");
    has_scores_ = has_scores_ || !e.scores.empty();
  }
  if (has_scores_) {
    for (const Entry& e : entries_) {
      if (e.scores.empty()) {
        throw ValidationError("script mixes entries with and without scores (instance '" + e.instance_id + "')");
      }
    }
  }
}

ScriptedSelector ScriptedSelector::from_json(const json& doc, std::string classification_template) {
  const json& list = doc.is_object() && doc.contains("entries") ? doc["entries"] : doc;
  if (!list.is_array()) throw ValidationError("selector script must be a JSON array of entries");
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const json& item = list[i];
    const std::string where = "script entry " + std::to_string(i + 1);
    if (!item.is_object()) throw ValidationError(where + ": not an object");
    Entry e;
    e.instance_id = item.value("instance_id", std::string("*"));
    if (item.contains("option_hash")) e.option_hash = lower(item["option_hash"].get<std::string>());
    if (item.contains("options")) e.options = item["options"].get<std::vector<std::string>>();
    if (item.contains("ranking")) {
      e.ranking = item["ranking"].get<std::vector<std::string>>();
    } else {
      if (!item.contains("best")) throw ValidationError(where + ": needs 'best' or 'ranking'");
      e.ranking.push_back(item["best"].get<std::string>());
      if (item.contains("suboptimal") && !item["suboptimal"].is_null()) {
        e.ranking.push_back(item["suboptimal"].get<std::string>());
      }
    }
    if (item.contains("scores")) e.scores = item["scores"].get<std::map<std::string, double>>();
    entries.push_back(std::move(e));
  }
  return ScriptedSelector(std::move(entries), std::move(classification_template));
}

ScriptedSelector ScriptedSelector::from_file(const std::string& path, std::string classification_template) {
  try {
    return from_json(json::parse(io::read_file(path)), std::move(classification_template));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

Selection ScriptedSelector::select(const Instance& instance, const OptionSet& options, int ranked) {
  options.check();
  if (options.size() == 1) return forced(options);

  auto options_match = [&](const Entry& e) {
    if (e.option_hash) return *e.option_hash == options.hash_hex();
    if (e.options) {
      if (e.options->size() != options.size()) return false;
      for (std::size_t i = 0; i < options.size(); ++i) {
        const std::string& want = (*e.options)[i];
        if (want != options.options[i].id && want != options.options[i].name) return false;
      }
      return true;
    }
    return false;
  };
  // Priority: exact instance with options, wildcard with options, exact fallback, wildcard fallback.
  std::vector<std::size_t> candidates;
  int tier = 0;
  for (; tier < 4 && candidates.empty(); ++tier) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const Entry& e = entries_[i];
      const bool exact = e.instance_id == instance.id;
      const bool wild = e.instance_id == "*";
      const bool keyed = e.option_hash || e.options;
      const bool ok = (tier == 0 && exact && keyed && options_match(e)) ||
                      (tier == 1 && wild && keyed && options_match(e)) || (tier == 2 && exact && !keyed) ||
                      (tier == 3 && wild && !keyed);
      if (ok) candidates.push_back(i);
    }
  }
  if (candidates.empty()) {
    throw BackendError("no script entry for instance '" + instance.id + "' with options " + options.hash_hex());
  }
  std::size_t pick = 0;
  {
    std::lock_guard lock(mutex_);
    std::size_t& cur = cursor_[instance.id + "|" + options.hash_hex() + "|" + std::to_string(tier)];
    pick = candidates[std::min(cur, candidates.size() - 1)];
    ++cur;
  }
  const Entry& e = entries_[pick];

  Selection s;
  for (const std::string& key : e.ranking) {
    const auto idx = resolve(options, key);
    if (!idx) throw BackendError("scripted answer '" + key + "' is not among the options for instance '" + instance.id + "'");
    s.ranking.push_back(options.options[*idx].id);
  }
  // Pad to the requested depth in option order.
  for (const Option& o : options.options) {
    if (static_cast<int>(s.ranking.size()) >= ranked) break;
    if (std::find(s.ranking.begin(), s.ranking.end(), o.id) == s.ranking.end()) s.ranking.push_back(o.id);
  }
  if (!e.scores.empty()) {
    double sum = 0.0;
    for (const auto& [key, score] : e.scores) {
      const auto idx = resolve(options, key);
      if (!idx) throw BackendError("scripted score for unknown option '" + key + "'");
      s.per_option_scores[options.options[*idx].id] += score;
      sum += score;
    }
    if (!(sum > 0.0)) throw BackendError("scripted scores sum to zero");
    for (const Option& o : options.options) s.per_option_scores.try_emplace(o.id, 0.0);
    for (auto& [id, score] : s.per_option_scores) score /= sum;
    for (const NodeId& id : s.ranking) s.confidences.push_back(s.per_option_scores.at(id));
  } else {
    s.confidences = rank_default_confidences(s.ranking.size(), options.size());
    s.synthetic_confidence = true;
  }
  s.calls.push_back(estimated_call(id(), instance, options, template_, s.ranking, ranked));
  s.check(options);
  return s;
}

// ---------------------------------------------------------------------------

double AccuracyTable::at(int level, bool verification_view) const {
  const auto& table = verification_view ? verification_by_level : base_by_level;
  if (auto it = table.find(level); it != table.end()) return it->second;
  return verification_view ? verification : base;
}

void AccuracyTable::check() const {
  auto ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!ok(base) || !ok(verification)) throw ValidationError("accuracy values must lie in [0, 1]");
  for (const auto* table : {&base_by_level, &verification_by_level}) {
    for (const auto& [level, p] : *table) {
      if (!ok(p)) throw ValidationError("accuracy at level " + std::to_string(level) + " must lie in [0, 1]");
    }
  }
}

AccuracyTable AccuracyTable::from_json(const json& doc) {
  AccuracyTable t;
  auto read = [](const json& node, double& fallback, std::map<int, double>& by_level) {
    if (node.is_number()) {
      fallback = node.get<double>();
    } else if (node.is_object()) {
      for (const auto& [key, value] : node.items()) {
        if (key == "default") {
          fallback = value.get<double>();
        } else {
          by_level[std::stoi(key)] = value.get<double>();
        }
      }
    } else {
      throw ValidationError("accuracy entries must be a number or an object keyed by level");
    }
  };
  if (doc.contains("base")) read(doc["base"], t.base, t.base_by_level);
  if (doc.contains("verification")) read(doc["verification"], t.verification, t.verification_by_level);
  t.check();
  return t;
}

json AccuracyTable::to_json() const {
  auto write = [](double fallback, const std::map<int, double>& by_level) {
    json node = {{"default", fallback}};
    for (const auto& [level, p] : by_level) node[std::to_string(level)] = p;
    return node;
  };
  return {{"base", write(base, base_by_level)}, {"verification", write(verification, verification_by_level)}};
}

SyntheticSelector::SyntheticSelector(const RelationTree& tree, SyntheticConfig config, std::string classification_template)
    : tree_(tree), config_(std::move(config)), template_(std::move(classification_template)) {
  config_.accuracy.check();
  if (!(config_.confusion >= 0.0 && config_.confusion <= 1.0)) throw ValidationError("confusion must lie in [0, 1]");
}

bool SyntheticSelector::gold_consistent(const NodeId& node, const std::string& relation) const {
  for (const NodeId& leaf : tree_.leaves_for(relation)) {
    if (tree_.is_ancestor_or_self(node, leaf)) return true;
  }
  return false;
}

Selection SyntheticSelector::select(const Instance& instance, const OptionSet& options, int ranked) {
  options.check();
  if (options.size() == 1) return forced(options);

  int level = tree_.node(options.options.front().id).level;
  for (const Option& o : options.options) level = std::min(level, tree_.node(o.id).level);
  const double accuracy = config_.accuracy.at(level, options.view > 0);

  std::vector<std::size_t> good;
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < options.size(); ++i) {
    (instance.gold && gold_consistent(options.options[i].id, *instance.gold) ? good : bad).push_back(i);
  }

  Rng rng(hash_combine(hash_combine(config_.seed, fnv1a(instance.id)),
                       hash_combine(options.hash(), static_cast<std::uint64_t>(options.view))));
  auto draw = [&](const std::vector<std::size_t>& from) { return from[rng.below(from.size())]; };

  const bool hit = rng.uniform() < accuracy;
  const bool correct = !good.empty() && (hit || bad.empty());
  const std::size_t best = correct ? draw(good) : draw(bad);

  std::vector<std::size_t> rest_good;
  std::vector<std::size_t> rest_bad;
  for (std::size_t i : good) {
    if (i != best) rest_good.push_back(i);
  }
  for (std::size_t i : bad) {
    if (i != best) rest_bad.push_back(i);
  }
  std::vector<std::size_t> pool;
  const double u = rng.uniform();
  if (correct) {
    pool = rest_bad;
    pool.insert(pool.end(), rest_good.begin(), rest_good.end());
    std::sort(pool.begin(), pool.end());
  } else {
    const bool confuse = !rest_good.empty() && (u < config_.confusion || rest_bad.empty());
    pool = confuse ? rest_good : rest_bad;
  }
  const std::size_t second = draw(pool);

  std::vector<std::size_t> order{best, second};
  std::vector<std::size_t> tail;
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (i != best && i != second) tail.push_back(i);
  }
  for (std::size_t i = tail.size(); i > 1; --i) std::swap(tail[i - 1], tail[rng.below(i)]);
  order.insert(order.end(), tail.begin(), tail.end());

  const double c = correct ? 0.6 + 0.35 * rng.uniform() : 0.5 + 0.25 * rng.uniform();
  const std::size_t n = options.size();
  Selection s;
  for (std::size_t rank = 0; rank < n; ++rank) {
    double score = c;
    if (rank == 1) score = n == 2 ? 1.0 - c : (1.0 - c) * 0.7;
    if (rank >= 2) score = (1.0 - c) * 0.3 / static_cast<double>(n - 2);
    const NodeId& id = options.options[order[rank]].id;
    s.per_option_scores[id] = score;
    s.ranking.push_back(id);
    s.confidences.push_back(score);
  }
  s.calls.push_back(estimated_call(id(), instance, options, template_, s.ranking, ranked));
  return s;
}

// ---------------------------------------------------------------------------

LlmSelector::LlmSelector(LlmGateway& gateway, std::string classification_template, std::int64_t context_budget,
                         std::optional<std::uint64_t> seed)
    : gateway_(gateway), template_(std::move(classification_template)), context_budget_(context_budget), seed_(seed) {}

std::vector<std::optional<NodeId>> LlmSelector::parse_ranked(const std::string& answer, const OptionSet& options,
                                                             int ranked) {
  std::vector<std::optional<NodeId>> out;
  std::set<NodeId> used;
  for (int r = 1; r <= ranked; ++r) {
    const std::regex pattern("(^|[^0-9A-Za-z])" + ordinal(static_cast<std::size_t>(r)) + R"(\s*[:：]\s*([^;\n]*))",
                             std::regex::icase);
    std::smatch m;
    std::optional<NodeId> found;
    if (std::regex_search(answer, m, pattern)) {
      std::string value = trim(m[2].str());
      static const std::regex numbering(R"(^\d+\s*[.)]\s*)");
      value = std::regex_replace(value, numbering, "");
      while (!value.empty() && std::string("\"'`*<[(").find(value.front()) != std::string::npos) value.erase(0, 1);
      while (!value.empty() && std::string("\"'`*>]).,").find(value.back()) != std::string::npos) value.pop_back();
      const std::string want = lower(trim(value));
      for (const Option& o : options.options) {
        if (lower(o.name) == want && !used.contains(o.id)) {
          found = o.id;
          break;
        }
      }
    }
    if (found) used.insert(*found);
    out.push_back(found);
  }
  return out;
}

Selection LlmSelector::select(const Instance& instance, const OptionSet& options, int ranked) {
  options.check();
  if (options.size() == 1) return forced(options);
  const int depth = std::clamp(ranked, 1, static_cast<int>(options.size()));

  Instance shown = instance;
  shown.context = truncate_context(instance.context, context_budget_);
  std::string prompt = render_prompt(shown, options, template_);
  prompt += "\nAnswer with the ";
  prompt += depth == 1 ? std::string("best option") : std::to_string(depth) + " best options, best first,";
  prompt += " using the exact option names, in the format: ";
  for (int r = 1; r <= depth; ++r) prompt += (r > 1 ? "; " : "") + ordinal(static_cast<std::size_t>(r)) + ": <name>";
  prompt += "\n";

  Selection s;
  std::string last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string request = prompt;
    if (attempt == 1) {
      request += "Your answer must be one of: ";
      for (std::size_t i = 0; i < options.size(); ++i) request += (i ? ", " : "") + ("\"" + options.options[i].name + "\"");
      request += ".\n";
    }
    const Completion reply = gateway_.complete({request, "select:" + view_name(options.view), false, seed_});
    UsageRecord rec;
    rec.backend = gateway_.backend_id();
    rec.purpose = "select:" + view_name(options.view);
    rec.input_tokens = reply.input_tokens ? reply.input_tokens : estimate_tokens(request);
    rec.output_tokens = reply.output_tokens ? reply.output_tokens : estimate_tokens(reply.text);
    rec.timestamp = std::chrono::system_clock::now();
    s.calls.push_back(rec);
    last = reply.text;

    const auto parsed = parse_ranked(reply.text, options, depth);
    if (std::all_of(parsed.begin(), parsed.end(), [](const auto& p) { return p.has_value(); })) {
      for (const auto& p : parsed) s.ranking.push_back(*p);
      s.confidences = rank_default_confidences(s.ranking.size(), options.size());
      s.synthetic_confidence = true;
      return s;
    }
  }
  throw ParseError("model answer names no listed option after one repair (instance '" + instance.id + "')", last);
}

// ---------------------------------------------------------------------------

Selection MeteredSelector::select(const Instance& instance, const OptionSet& options, int ranked) {
  Selection s = inner_.select(instance, options, ranked);
  for (const UsageRecord& rec : s.calls) ledger_.record(rec);
  return s;
}

}  // namespace reltree
