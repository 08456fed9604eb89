#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>

#include "doctest.h"
#include "reltree/error.hpp"
#include "reltree/io.hpp"
#include "reltree/random.hpp"
#include "reltree/tree_builder.hpp"
#include "support.hpp"

using namespace reltree;
using testsupport::data;

namespace {

BuildConfig small_config() {
  BuildConfig c;
  c.depth_limit = 5;
  c.min_children = 2;
  c.max_children = 3;
  return c;
}

RelationSchema random_schema(Rng& rng, std::size_t positives) {
  std::vector<Relation> rels;
  for (std::size_t i = 0; i < positives; ++i) {
    rels.push_back({"rel_" + std::to_string(i) + "_" + std::to_string(rng.below(1000)), "relation number " + std::to_string(i)});
  }
  rels.push_back({"NA", "no relation"});
  return RelationSchema(std::move(rels), "NA");
}

}  // namespace

TEST_CASE("config checks") {
  BuildConfig c;
  c.depth_limit = 2;
  CHECK_THROWS_AS(c.check(), ValidationError);
  c = BuildConfig{};
  c.criteria = {"only one"};
  CHECK_THROWS_AS(c.check(), ValidationError);
  c = BuildConfig{};
  c.min_children = 5;
  c.max_children = 4;
  CHECK_THROWS_AS(c.check(), ValidationError);
}

TEST_CASE("level-wise build reproduces the scripted golden") {
  auto gw = ScriptedGateway::from_file(data("build/levelwise_script.json"));
  UsageLedger ledger;
  MeteredGateway metered(gw, ledger);
  TreeBuilder builder(metered, small_config());
  const auto schema = testsupport::ptv_schema();
  const auto result = builder.build_levelwise(schema);
  CHECK(dump_tree(result.tree) == io::read_file(data("build/levelwise_expected.txt")));
  CHECK(validate(result.tree, schema).ok());
  CHECK(result.schedule == std::vector<std::string>{"Entity Type", "Relation Theme"});
  CHECK(result.criteria.size() == 3);
  // criteria (one repair) + 4 partitions + 10 assignments per split level
  CHECK(ledger.totals().calls == 26);
}

TEST_CASE("single-shot build prunes, collapses and places") {
  auto gw = ScriptedGateway::from_file(data("build/singleshot_script.json"));
  TreeBuilder builder(gw, small_config());
  const auto schema = testsupport::ptv_schema();
  const auto result = builder.build_singleshot(schema);
  CHECK(dump_tree(result.tree) == io::read_file(data("build/singleshot_expected.txt")));
  CHECK(validate(result.tree, schema).ok());
  auto logged = [&](const std::string& needle) {
    return std::any_of(result.log.begin(), result.log.end(),
                       [&](const std::string& l) { return l.find(needle) != std::string::npos; });
  };
  CHECK(logged("married_to"));
  CHECK(logged("collapsed subtree below 'geography'"));
  CHECK(logged("placed missing relation 'owned_by'"));
}

TEST_CASE("coherence uses first-token probabilities") {
  auto gw = ScriptedGateway::from_file(data("build/singleshot_script.json"));
  TreeBuilder builder(gw, small_config());
  const auto tree = builder.build_singleshot(testsupport::ptv_schema()).tree;
  const auto rows = score_coherence(tree, gw);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].pairs == 5);
  CHECK(rows[0].percent == doctest::Approx(75.0));
  CHECK(rows[2].pairs == 9);
  CHECK(rows[2].percent == doctest::Approx((8 * 75.0 + 25.0) / 9.0));
  CHECK(format_coherence(rows).find("Level 3") != std::string::npos);

  FunctionGateway plain([](const ChatRequest&) { return Completion{"Yes", 0, 0, {}}; });
  CHECK_THROWS_AS((void)score_coherence(tree, plain), CapabilityError);
}

TEST_CASE("unparseable responses exhaust the repair budget") {
  int calls = 0;
  FunctionGateway gw([&](const ChatRequest&) {
    ++calls;
    return Completion{"no json here", 0, 0, {}};
  });
  BuildConfig c = small_config();
  c.max_repair_retries = 2;
  TreeBuilder builder(gw, c);
  CHECK_THROWS_AS((void)builder.generate_criteria(testsupport::ptv_schema()), ParseError);
  CHECK(calls == 3);
}

TEST_CASE("single relation passes through without a call") {
  int calls = 0;
  FunctionGateway gw([&](const ChatRequest&) {
    ++calls;
    return Completion{"{}", 0, 0, {}};
  });
  TreeBuilder builder(gw, small_config());
  const auto kids = builder.partition_node("x", {"Domain", "", {}}, {{"born_in", "birth place"}});
  REQUIRE(kids.size() == 1);
  CHECK(kids[0].name == "born_in");
  CHECK(calls == 0);
}

TEST_CASE("assignment answers are deduplicated in answer order") {
  FunctionGateway gw([](const ChatRequest&) { return Completion{R"(["b", "a", "b"])", 0, 0, {}}; });
  TreeBuilder builder(gw, small_config());
  const auto got = builder.assign_relation({"r", "d"}, {{"a", ""}, {"b", ""}}, {"Domain", "", {}});
  CHECK(got == std::vector<std::string>{"b", "a"});
}

TEST_CASE("offline builds are valid on random schemas") {
  Rng rng(7);
  for (int i = 0; i < 12; ++i) {
    const auto schema = random_schema(rng, 1 + rng.below(30));
    BuildConfig c;
    c.depth_limit = 3 + static_cast<int>(rng.below(4));
    c.min_children = 2;
    c.max_children = 2 + static_cast<int>(rng.below(4));
    c.seed = rng.next();
    OfflineBuildGateway gw(c.seed);
    TreeBuilder builder(gw, c);
    const auto lw = builder.build_levelwise(schema);
    INFO(validate(lw.tree, schema).summary());
    CHECK(validate(lw.tree, schema).ok());
    const auto ss = builder.build_singleshot(schema);
    INFO(validate(ss.tree, schema).summary());
    CHECK(validate(ss.tree, schema).ok());
  }
}
