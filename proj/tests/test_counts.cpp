#include <catch2/catch_amalgamated.hpp>

#include <folm/counts.hpp>
#include <folm/lattice.hpp>

#include "helpers.hpp"

using namespace folm;

namespace {

bool tables_equal(const CountTable& a, const CountTable& b) {
  return a.joints() == b.joints() && a.marginals() == b.marginals() &&
         a.support_by_shape() == b.support_by_shape();
}

std::string okey(const SchemaPtr& schema, const std::string& w) {
  return canonical_key(testutil::ev(schema, {{"w", w}}));
}
std::string ckey(const SchemaPtr& schema, const std::string& h) {
  return canonical_key(testutil::ev(schema, {{"h1", h}}));
}

}  // namespace

TEST_CASE("bigram ingest of 'a b a b a c'", "[counts]") {
  Lattice lat = build_ngram_chain(2);
  auto schema = lat.schema();
  auto obs = testutil::bigram_pairs(schema, {"a", "b", "a", "b", "a", "c"});
  NodeCounts counts = ingest(obs, lat);

  const CountTable& root = counts.at(0);
  CHECK(root.joint(okey(schema, "b"), ckey(schema, "a")) == 2);
  CHECK(root.joint(okey(schema, "a"), ckey(schema, "b")) == 2);
  CHECK(root.joint(okey(schema, "c"), ckey(schema, "a")) == 1);
  CHECK(root.marginal(ckey(schema, "a")) == 3);
  CHECK(root.marginal(ckey(schema, "b")) == 2);

  // unigram node sees the same outcomes under the empty context
  const CountTable& uni = counts.at(1);
  std::string empty_ctx = canonical_key(Event(schema));
  CHECK(uni.marginal(empty_ctx) == 5);
  CHECK(uni.joint(okey(schema, "b"), empty_ctx) == 2);
}

TEST_CASE("empty stream produces empty tables", "[counts]") {
  Lattice lat = build_ngram_chain(2);
  NodeCounts counts = ingest({}, lat);
  REQUIRE(counts.size() == lat.nodes().size());
  for (const auto& [id, table] : counts) CHECK(table.empty());
}

TEST_CASE("multiplicity is linear", "[counts]") {
  Lattice lat = build_ngram_chain(2);
  auto schema = lat.schema();
  Observation one{testutil::q(schema, {{"w", "b"}}, {{"h1", "a"}}), 1};
  Observation three{testutil::q(schema, {{"w", "b"}}, {{"h1", "a"}}), 3};
  NodeCounts repeated = ingest({one, one, one}, lat);
  NodeCounts weighted = ingest({three}, lat);
  for (const auto& node : lat.nodes())
    CHECK(tables_equal(repeated.at(node.id), weighted.at(node.id)));
}

TEST_CASE("ingest validates observations", "[counts]") {
  Lattice lat = build_ngram_chain(2);
  auto schema = lat.schema();
  SECTION("zero multiplicity") {
    Observation bad{testutil::q(schema, {{"w", "b"}}, {{"h1", "a"}}), 0};
    CHECK_THROWS_WITH(ingest({bad}, lat), Catch::Matchers::ContainsSubstring("observation 0"));
  }
  SECTION("partial assignment") {
    Observation bad{testutil::q(schema, {{"w", "b"}}, {}), 1};
    CHECK_THROWS_AS(ingest({bad}, lat), Error);
  }
  SECTION("foreign schema") {
    auto other = testutil::flat_schema({"h1", "w"});
    Observation bad{testutil::q(other, {{"w", "b"}}, {{"h1", "a"}}), 1};
    CHECK_THROWS_AS(ingest({bad}, lat), Error);
  }
}

TEST_CASE("sharded ingest merges to the same tables", "[counts]") {
  Lattice lat = build_pp_lattice();
  auto records = gen_pp_synthetic(11, 60);
  auto obs = pp_observations(lat.schema(), records);
  NodeCounts whole = ingest(obs, lat, 1);
  NodeCounts sharded = ingest(obs, lat, 4);
  for (const auto& node : lat.nodes())
    CHECK(tables_equal(whole.at(node.id), sharded.at(node.id)));
}

TEST_CASE("marginals equal the sum of joint counts", "[counts]") {
  Lattice lat = build_pp_lattice();
  auto obs = pp_observations(lat.schema(), gen_pp_synthetic(3, 100));
  NodeCounts counts = ingest(obs, lat);
  for (const auto& [id, table] : counts) {
    for (const auto& [ckey, row] : table.joints()) {
      std::int64_t sum = 0;
      for (const auto& [okey, c] : row) sum += c;
      CHECK(table.marginal(ckey) == sum);
    }
  }
}

TEST_CASE("projecting counts commutes with projecting observations", "[counts]") {
  Lattice lat = build_pp_lattice();
  auto obs = pp_observations(lat.schema(), gen_pp_synthetic(17, 100));
  NodeCounts counts = ingest(obs, lat);

  // recount each node directly from projected observations
  for (const auto& node : lat.nodes()) {
    CountTable direct;
    for (const auto& o : obs) {
      for (std::size_t s = 0; s < node.shapes.size(); ++s) {
        Event po = o.query.outcome.project(node.shapes[s].outcome);
        Event pc = o.query.context.project(node.shapes[s].context);
        direct.add(static_cast<int>(s), canonical_key(po), canonical_key(pc),
                   o.multiplicity);
      }
    }
    CHECK(tables_equal(direct, counts.at(node.id)));
  }
}

TEST_CASE("count_of_counts tallies distinct joint events", "[counts]") {
  SECTION("hand tally of the bigram example") {
    Lattice lat = build_ngram_chain(2);
    auto obs = testutil::bigram_pairs(lat.schema(), {"a", "b", "a", "b", "a", "c"});
    NodeCounts counts = ingest(obs, lat);
    CountOfCounts noc = count_of_counts(counts.at(0), 5);
    CHECK(noc.at(1) == 1);
    CHECK(noc.at(2) == 2);
    CHECK(noc.at(3) == 0);
    CHECK(noc.total_mass() == 5);
  }
  SECTION("empty table") {
    CountOfCounts noc = count_of_counts(CountTable{}, 5);
    for (int r = 1; r <= 6; ++r) CHECK(noc.at(r) == 0);
  }
  SECTION("single event above the range") {
    CountTable t;
    t.add(0, "o", "c", 7);
    CountOfCounts noc = count_of_counts(t, 5);
    for (int r = 1; r <= 6; ++r) CHECK(noc.at(r) == 0);
    CHECK(noc.at(7) == 1);
    CHECK(noc.total_mass() == 7);
  }
  SECTION("max_r must be positive") {
    CHECK_THROWS_AS(count_of_counts(CountTable{}, 0), Error);
  }
}

TEST_CASE("count override files replace a node's statistics", "[counts]") {
  Lattice lat = build_ngram_chain(2);
  auto schema = lat.schema();
  std::string o = okey(schema, "b");
  std::string c = ckey(schema, "a");

  SECTION("well-formed file") {
    testutil::TempFile f("override_ok.tsv", o + "\t" + c + "\t4\n");
    CountTable t = load_count_override(f.path, lat, 0);
    CHECK(t.joint(o, c) == 4);
    CHECK(t.marginal(c) == 4);
    CHECK(t.support(0).count(o) == 1);
  }
  SECTION("fractional counts rejected") {
    testutil::TempFile f("override_frac.tsv", o + "\t" + c + "\t1.5\n");
    CHECK_THROWS_WITH(load_count_override(f.path, lat, 0),
                      Catch::Matchers::ContainsSubstring(":1:"));
  }
  SECTION("keys must match the node's shape") {
    testutil::TempFile f("override_shape.tsv", o + "\t" + o + "\t2\n");
    CHECK_THROWS_AS(load_count_override(f.path, lat, 0), Error);
  }
  SECTION("field count") {
    testutil::TempFile f("override_fields.tsv", o + "\t3\n");
    CHECK_THROWS_AS(load_count_override(f.path, lat, 0), Error);
  }
}
