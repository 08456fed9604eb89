#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "reltree/error.hpp"
#include "reltree/evaluation.hpp"
#include "support.hpp"

using namespace reltree;

namespace {

PredictionRecord rec(std::string id, std::string pred, std::string gold, double conf, std::string bag = {}) {
  PredictionRecord r;
  r.instance_id = std::move(id);
  r.predicted = std::move(pred);
  r.gold = std::move(gold);
  r.confidence = conf;
  if (!bag.empty()) r.bag_id = std::move(bag);
  return r;
}

std::vector<PredictionRecord> five() {
  return {rec("r1", "a", "a", 0.9), rec("r2", "b", "a", 0.8), rec("r3", "a", "NA", 0.7), rec("r4", "NA", "b", 0.6),
          rec("r5", "b", "b", 0.5)};
}

InferenceTrace trace(std::string id, std::string gold, std::vector<NodeId> chosen, std::string final_rel) {
  InferenceTrace t;
  t.instance_id = std::move(id);
  t.gold = std::move(gold);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    LevelTrace l;
    l.level = static_cast<int>(i) + 1;
    l.chosen = chosen[i];
    l.outcome = "predicted";
    t.levels.push_back(l);
  }
  t.final_leaf = chosen.back();
  t.final_relation = std::move(final_rel);
  return t;
}

}  // namespace

TEST_CASE("hand-computed headline metrics") {
  const auto r = five();
  const auto c = micro_confusion(r, "NA");
  CHECK(c.tp == 2);
  CHECK(c.fp == 2);
  CHECK(c.fn == 2);
  CHECK(micro_f1(r, "NA") == doctest::Approx(50.0));
  CHECK(binary_f1(r, "NA") == doctest::Approx(75.0));
  CHECK(f1_percent({}) == 0.0);
}

TEST_CASE("hand-computed score metrics") {
  const auto r = five();
  const auto curve = pr_curve(r, "NA");
  REQUIRE(curve.size() == 4);
  CHECK(curve[0].threshold == 0.9);
  CHECK(curve[0].precision == doctest::Approx(100.0));
  CHECK(curve[0].recall == doctest::Approx(25.0));
  CHECK(curve[1].f1 == doctest::Approx(100.0 / 3.0));
  CHECK(curve[3].f1 == doctest::Approx(50.0));
  CHECK(max_f1(r, "NA") == doctest::Approx(50.0));
  CHECK(auc(r, "NA") == doctest::Approx((25.0 * 100.0 + 25.0 * (100.0 / 3.0 + 50.0) / 2.0) / 100.0));
  CHECK(precision_at_k(r, 1, "NA") == doctest::Approx(100.0));
  CHECK(precision_at_k(r, 2, "NA") == doctest::Approx(50.0));
  CHECK(precision_at_k(r, 10, "NA") == doctest::Approx(50.0));
  CHECK_THROWS_AS((void)precision_at_k(r, 0, "NA"), ValidationError);
  CHECK(micro_f1(apply_threshold(r, "NA", 0.85), "NA") == doctest::Approx(curve[0].f1));
}

TEST_CASE("distributions drive the positive candidate") {
  auto r = rec("x", "NA", "b", 0.6);
  CHECK_FALSE(positive_candidate(r, "NA").has_value());
  r.distribution = std::map<std::string, double>{{"NA", 0.6}, {"a", 0.1}, {"b", 0.3}};
  const auto cand = positive_candidate(r, "NA");
  REQUIRE(cand.has_value());
  CHECK(cand->first == "b");
  CHECK(cand->second == doctest::Approx(0.3));
  CHECK(apply_threshold({r}, "NA", 0.25)[0].predicted == "b");
  CHECK(apply_threshold({r}, "NA", 0.35)[0].predicted == "NA");
}

TEST_CASE("precision at K breaks ties by instance id") {
  const std::vector<PredictionRecord> r{rec("b", "x", "y", 0.5), rec("a", "x", "x", 0.5)};
  CHECK(precision_at_k(r, 1, "NA") == doctest::Approx(100.0));
}

TEST_CASE("record checks and JSON lines") {
  auto r = rec("x", "a", "a", 1.5);
  CHECK_THROWS_AS(check_record(r), ValidationError);
  r.confidence = 0.5;
  r.distribution = std::map<std::string, double>{{"a", 0.5}};
  CHECK_THROWS_AS(check_record(r), ValidationError);
  r.distribution = std::map<std::string, double>{{"a", 0.5}, {"NA", 0.5}};
  r.bag_id = "b1";
  const auto back = load_records(save_records({r}));
  REQUIRE(back.size() == 1);
  CHECK(back[0] == r);
  try {
    (void)load_records(save_records({r}) + "{\"instance_id\": 3}\n");
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("bag aggregation") {
  const std::vector<PredictionRecord> r{rec("1", "a", "a", 0.4, "B"), rec("2", "b", "a", 0.9, "B"),
                                        rec("3", "a", "a", 0.3, "B"), rec("4", "NA", "NA", 0.8, "C"),
                                        rec("5", "b", "b", 0.6, "D"), rec("6", "c", "b", 0.6, "D")};
  const auto bags = bag_aggregate(r, "NA");
  REQUIRE(bags.size() == 3);
  CHECK(bags[0].predicted == "a");  // majority
  CHECK(bags[0].confidence == doctest::Approx(0.4));
  CHECK(bags[1].predicted == "NA");
  CHECK(bags[2].predicted == "b");  // tie on count and confidence: name order
  CHECK_THROWS_AS((void)bag_aggregate({rec("1", "a", "a", 0.5)}, "NA"), ValidationError);
  CHECK_THROWS_AS((void)bag_aggregate({rec("1", "a", "a", 0.5, "B"), rec("2", "a", "b", 0.5, "B")}, "NA"),
                  ValidationError);
}

TEST_CASE("per-level diagnostics") {
  const auto t = testsupport::ptv_tree();
  const std::vector<InferenceTrace> traces{
      trace("t1", "spouse_of", {"n1", "n4", "n8", "n16"}, "born_in"),
      trace("t2", "NA", {"n2", "n22"}, "NA"),
      trace("t3", "born_in", {"n1", "n4", "n9", "n17"}, "located_in"),
  };
  const auto d = level_diagnostics(traces, t);
  REQUIRE(d.size() == 4);
  CHECK(d[0].cp == 3);
  CHECK_FALSE(d[0].ratio_defined);
  CHECK(d[1].cp == 2);
  CHECK(d[1].sc == 1);
  CHECK(d[1].propagation_ratio == 0.0);
  CHECK(d[1].ratio_defined);
  CHECK(d[2].cp == 1);
  CHECK(d[2].wp == 1);
  CHECK(d[2].sc == 1);
  CHECK(d[2].propagation_ratio == doctest::Approx(50.0));
  CHECK(d[3].wp == 2);
  CHECK(d[3].propagation_ratio == doctest::Approx(100.0));
  CHECK(d[3].accuracy == doctest::Approx(100.0 / 3.0));
  const auto table = format_diagnostics(d);
  CHECK(table.find("no errors") != std::string::npos);
  CHECK(format_diagnostics_pair("A", d, "B", d).find("%SC") != std::string::npos);
}

TEST_CASE("full report and efficiency table") {
  auto r = five();
  const char* bag_of[] = {"x", "x", "y", "z", "z"};
  for (std::size_t i = 0; i < r.size(); ++i) r[i].bag_id = bag_of[i];
  EvalOptions o;
  o.bag = true;
  const auto rep = evaluate(r, "NA", o);
  CHECK(rep.records == 5);
  CHECK(rep.p_at_k.at(500) == doctest::Approx(50.0));
  REQUIRE(rep.bag.has_value());
  CHECK(rep.bag->bags == 3);
  const auto text = rep.text();
  CHECK(text.find("micro F1") != std::string::npos);
  CHECK(text.find("P@500") != std::string::npos);
  CHECK(rep.to_json()["micro_f1"].get<double>() == doctest::Approx(50.0));
  const auto eff = format_efficiency({{"w/o PtV", 612.4, 12345, 1.5}, {"w/ PtV", 610.0, 98765, 7.25}});
  CHECK(eff.find("12,345") != std::string::npos);
  CHECK(eff.find("#LLM Calls") != std::string::npos);
}

TEST_CASE("paired bootstrap") {
  std::vector<PredictionRecord> a, b;
  for (int i = 0; i < 200; ++i) {
    const std::string id = "i" + std::to_string(i);
    a.push_back(rec(id, i % 10 == 0 ? "b" : "a", "a", 0.9));
    b.push_back(rec(id, i % 2 == 0 ? "b" : "a", "a", 0.9));
  }
  const Metric m = [](const std::vector<PredictionRecord>& r) { return micro_f1(r, "NA"); };
  const auto res = paired_bootstrap(a, b, m, 300, 3);
  CHECK(res.observed_delta > 0.0);
  CHECK(res.ci_low > 0.0);
  CHECK(res.ci_low <= res.ci_high);
  CHECK(res.p_value < 0.01);
  const auto again = paired_bootstrap(a, b, m, 300, 3);
  CHECK(again.ci_low == res.ci_low);
  CHECK_THROWS_AS((void)paired_bootstrap(a, {rec("zz", "a", "a", 1.0)}, m, 10, 1), ValidationError);
}
