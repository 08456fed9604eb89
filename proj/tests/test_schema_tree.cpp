#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "reltree/error.hpp"
#include "reltree/schema.hpp"
#include "reltree/tree.hpp"
#include "support.hpp"

using namespace reltree;
using testsupport::data;

namespace {

RelationSchema small_schema() { return RelationSchema({{"a", "rel a"}, {"b", "rel b"}, {"NA", "none"}}, "NA"); }

RelationTree small_tree(int depth = 4) {
  TreeDraft d;
  const auto valid = d.add_intermediate(d.root(), "valid relations");
  const auto none = d.add_intermediate(d.root(), "no valid relation");
  const auto g = d.add_intermediate(valid, "group");
  d.add_leaf(g, "a");
  d.add_leaf(valid, "b");
  d.add_leaf(none, "NA");
  return d.finish(depth);
}

}  // namespace

TEST_CASE("schema rejects malformed relation sets") {
  CHECK_THROWS_AS(RelationSchema({{"a", "x"}, {"a", "y"}, {"NA", "z"}}, "NA"), ValidationError);
  CHECK_THROWS_AS(RelationSchema({{"a", ""}, {"NA", "z"}}, "NA"), ValidationError);
  CHECK_THROWS_AS(RelationSchema({{"a", "x"}}, "NA"), ValidationError);
  CHECK_THROWS_AS((void)load_schema("{\"relations\": []}"), ValidationError);
  CHECK_THROWS_AS((void)load_schema("not json"), ValidationError);
}

TEST_CASE("schema round-trips through JSON") {
  const auto s = load_schema_file(data("toy_schema.json"));
  CHECK(s.size() == 11);
  CHECK(s.na_label() == "NA");
  CHECK(s.positive_relations().size() == 10);
  CHECK(load_schema(save_schema(s)) == s);
  CHECK_THROWS_AS((void)s.at("nope"), ValidationError);
}

TEST_CASE("dataset loading reports line numbers") {
  const auto s = small_schema();
  const std::string good = R"({"id": "x1", "context": ["d"], "head": "h", "tail": "t", "gold": "a"})";
  const std::string bad = R"({"id": "x2", "context": ["d"], "head": "h", "tail": "t", "gold": "zzz"})";
  CHECK(load_dataset(good + "\n\n" + good.substr(0, 0), s).size() == 1);
  try {
    (void)load_dataset(good + "\n\n" + bad + "\n", s);
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS((void)load_dataset(good + "\n" + good, s), ValidationError);  // duplicate id
  CHECK_THROWS_AS((void)load_dataset(R"({"id": "x", "context": [], "head": "h", "tail": "t"})", s), ValidationError);
}

TEST_CASE("toy dataset groups into bags") {
  const auto s = load_schema_file(data("toy_schema.json"));
  const auto d = load_dataset_file(data("toy_dataset.jsonl"), s);
  CHECK(d.size() == 44);
  const auto bags = group_bags(d);
  CHECK(bags.size() == 11);
  for (const auto& [id, members] : bags) CHECK(members.size() == 4);
  CHECK(load_dataset(save_dataset(d), s) == d);
}

TEST_CASE("tree navigation") {
  const auto t = small_tree();
  CHECK(t.root_id() == "n0");
  const auto leaf = t.leaves_for("a").front();
  CHECK(t.children_of(leaf) == std::vector<NodeId>{leaf});
  CHECK(t.path_to(leaf).size() == 4);
  CHECK(t.node(leaf).level == 3);
  CHECK(t.is_ancestor_or_self(t.path_to(leaf)[1], leaf));
  CHECK_FALSE(t.is_ancestor_or_self(leaf, t.root_id()));
  CHECK(t.level_one_node("no valid relation").has_value());
  CHECK(t.display_name(leaf) == "a");
  CHECK(validate(t, small_schema()).ok());
}

TEST_CASE("structural errors are rejected at construction") {
  std::vector<TreeNode> nodes{{"r", "root", "", 0, std::nullopt, {"x"}, std::nullopt},
                              {"x", "x", "", 0, std::string("q"), {}, std::string("a")}};
  CHECK_THROWS_AS(RelationTree(nodes, 3), ValidationError);
  CHECK_THROWS_AS((void)load_tree(R"({"nodes": []})"), ValidationError);
}

TEST_CASE("validate reports each invariant") {
  SUBCASE("missing and hallucinated relations") {
    TreeDraft d;
    const auto valid = d.add_intermediate(d.root(), "valid relations");
    const auto none = d.add_intermediate(d.root(), "no valid relation");
    d.add_leaf(valid, "a");
    d.add_leaf(valid, "ghost");
    d.add_leaf(none, "NA");
    const auto rep = validate(d.finish(4), small_schema());
    CHECK(rep.has(Finding::Kind::missing_relation));
    CHECK(rep.has(Finding::Kind::hallucinated_relation));
  }
  SUBCASE("level-one shape and NA placement") {
    TreeDraft d;
    const auto valid = d.add_intermediate(d.root(), "valid relations");
    d.add_leaf(valid, "a");
    d.add_leaf(valid, "b");
    d.add_leaf(valid, "NA");
    const auto rep = validate(d.finish(4), small_schema());
    CHECK(rep.has(Finding::Kind::level_one_shape));
    CHECK(rep.has(Finding::Kind::na_placement));
  }
  SUBCASE("depth overflow") {
    const auto rep = validate(small_tree(3), small_schema());
    CHECK(rep.has(Finding::Kind::depth_overflow));
    CHECK_FALSE(rep.summary().empty());
  }
  SUBCASE("sibling clash") {
    TreeDraft d;
    const auto valid = d.add_intermediate(d.root(), "valid relations");
    const auto none = d.add_intermediate(d.root(), "no valid relation");
    d.add_leaf(d.add_intermediate(valid, "g"), "a");
    d.add_leaf(d.add_intermediate(valid, "g"), "b");
    d.add_leaf(none, "NA");
    CHECK(validate(d.finish(4), small_schema()).has(Finding::Kind::sibling_name_clash));
  }
}

TEST_CASE("stats identities on the fixture tree") {
  const auto t = testsupport::ptv_tree();
  const auto s = stats(t);
  CHECK(s.depth == 5);
  CHECK(s.nodes_per_level == std::vector<std::size_t>{1, 2, 4, 6, 10});
  CHECK(s.leaf_count == 11);
  CHECK(t.size() == 1 + s.intermediate_count + s.leaf_count);
  CHECK(s.non_root_count == t.size() - 1);
  CHECK(s.avg_children == doctest::Approx(double(s.non_root_count) / double(s.parent_count)));
}

TEST_CASE("edit distance on small trees") {
  TreeDraft a;
  a.add_intermediate(a.root(), "x");
  a.add_intermediate(a.root(), "y");
  TreeDraft b;
  b.add_intermediate(b.root(), "x");
  b.add_intermediate(b.root(), "z");
  TreeDraft c;
  const auto cx = c.add_intermediate(c.root(), "x");
  c.add_intermediate(cx, "y");
  const auto ta = a.finish(3), tb = b.finish(3), tc = c.finish(3);
  CHECK(tree_edit_distance(ta, ta) == 0);
  CHECK(tree_edit_distance(ta, tb) == 1);
  // y moves under x: delete + insert.
  CHECK(tree_edit_distance(ta, tc) == 2);
  CHECK(tree_edit_similarity(ta, tb) == doctest::Approx(100.0 * (1.0 - 1.0 / 3.0)));
}

TEST_CASE("tree JSON and text round trip") {
  const auto t = testsupport::ptv_tree();
  const auto back = load_tree(save_tree(t));
  CHECK(dump_tree(back) == dump_tree(t));
  CHECK(tree_edit_distance(back, t) == 0);
  const auto paths = paths_to_relation(t, "born_in");
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].back() == t.leaves_for("born_in").front());
  CHECK_THROWS_AS((void)paths_to_relation(t, "nope"), ValidationError);
}
