#include <catch2/catch_amalgamated.hpp>

#include <folm/model_io.hpp>
#include <folm/pipeline.hpp>
#include <folm/tasks.hpp>

#include "helpers.hpp"

using namespace folm;

namespace {

std::string pp_text(const std::vector<PpRecord>& records) {
  std::string s;
  for (const auto& r : records)
    s += r.v.str() + " " + r.n1.str() + " " + r.p.str() + " " + r.n2.str() + " " +
         std::to_string(r.label) + "\n";
  return s;
}

// Every query answer of the reloaded model must match the original bit for
// bit: full distributions at every node for every trained context.
void check_roundtrip(const TrainResult& r, const std::string& file) {
  save_model(file, *r.data, r.weights, r.meta);
  StoredModel loaded = load_model(file);
  Model reloaded(loaded.data, loaded.weights);
  const Model& original = *r.model;

  CHECK(loaded.meta == r.meta);
  for (const auto& node : original.lattice().nodes()) {
    const CountTable& ct = original.counts(node.id);
    for (const auto& [ckey, cc] : ct.marginals()) {
      Event ctx = event_from_key(original.schema(), ckey);
      SlotSet assigned = ctx.assigned_slots();
      bool matches_shape = false;
      for (const auto& s : node.shapes) matches_shape |= s.context == assigned;
      if (!matches_shape) continue;
      auto d1 = original.full_distribution(node.id, ctx);
      auto d2 = reloaded.full_distribution(node.id, event_from_key(reloaded.schema(), ckey));
      REQUIRE(d1.size() == d2.size());
      for (const auto& [okey, p] : d1) {
        // bit-identical, not merely close
        CHECK(d2.at(okey) == p);
      }
    }
  }
  std::filesystem::remove(file);
}

}  // namespace

TEST_CASE("model files round-trip bit-identically", "[io]") {
  SECTION("ngram") {
    auto corpus = testutil::skewed_corpus(77, 4, 10);
    testutil::TempFile f("io_ng.txt", testutil::render_sentences(corpus));
    TrainConfig cfg;
    cfg.task = TaskKind::ngram;
    cfg.ngram_n = 3;
    cfg.corpus = f.path;
    cfg.heldout_fraction = 0.0;
    check_roundtrip(train_model(cfg), "io_ng_model.json");
  }
  SECTION("ppattach with trained weights") {
    testutil::TempFile f("io_pp.txt", pp_text(gen_pp_synthetic(42, 120)));
    check_roundtrip(testutil::train_pp_model(f.path, 0.1), "io_pp_model.json");
  }
  SECTION("syncdep") {
    auto pairs = gen_syncdep_synthetic(42, 100);
    std::string text;
    for (const auto& d : pairs)
      text += d.parent1.str() + "\t" + d.child1.str() + "\t" + d.parent2.str() + "\t" +
              d.child2.str() + "\n";
    testutil::TempFile f("io_sd.txt", text);
    TrainConfig cfg;
    cfg.task = TaskKind::syncdep;
    cfg.corpus = f.path;
    cfg.heldout_fraction = 0.0;
    check_roundtrip(train_model(cfg), "io_sd_model.json");
  }
}

TEST_CASE("trained weights survive the model file", "[io]") {
  testutil::TempFile f("io_w.txt", pp_text(gen_pp_synthetic(8, 200)));
  TrainResult r = testutil::train_pp_model(f.path, 0.15);
  save_model("io_w_model.json", *r.data, r.weights, r.meta);
  StoredModel loaded = load_model("io_w_model.json");
  for (const auto& [node, w] : r.weights.per_node) {
    const auto& lw = loaded.weights.at(node);
    REQUIRE(lw.size() == w.size());
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(lw[i] == w[i]);
  }
  std::filesystem::remove("io_w_model.json");
}

TEST_CASE("lattice specs round-trip through JSON", "[io]") {
  for (const Lattice& lat :
       {build_pp_lattice(), build_ngram_chain(4), build_syncdep_lattice()}) {
    nlohmann::json j = lattice_to_json(lat);
    Lattice back = lattice_from_json(j);
    CHECK(validate(back).ok());
    REQUIRE(back.nodes().size() == lat.nodes().size());
    REQUIRE(back.edges().size() == lat.edges().size());
    for (std::size_t i = 0; i < lat.nodes().size(); ++i)
      CHECK(back.node(static_cast<NodeId>(i)).shapes ==
            lat.node(static_cast<NodeId>(i)).shapes);
    for (std::size_t e = 0; e < lat.edges().size(); ++e) {
      CHECK(back.edge(e).parent == lat.edge(e).parent);
      CHECK(back.edge(e).child == lat.edge(e).child);
      CHECK(back.edge(e).weight == lat.edge(e).weight);
      CHECK(back.edge(e).independence == lat.edge(e).independence);
    }
  }
}

TEST_CASE("a custom lattice spec file drives training", "[io]") {
  // the two-level drop-one lattice over (o | c1), written by hand
  nlohmann::json spec = {
      {"slots",
       {{{"name", "o"}, {"row", 0}, {"col", 0}, {"droppable", false}},
        {{"name", "c1"}, {"row", 0}, {"col", 1}, {"droppable", true}}}},
      {"nodes",
       {{{"id", 0},
         {"shapes", {{{"outcome", {"o"}}, {"context", {"c1"}}}}}},
        {{"id", 1}, {"shapes", {{{"outcome", {"o"}}, {"context", nlohmann::json::array()}}}}}}},
      {"edges",
       {{{"parent", 0},
         {"child", 1},
         {"parent_shape", 0},
         {"weight", 1.0},
         {"independence", false},
         {"children",
          {{{"outcome", nlohmann::json::array()}, {"context", nlohmann::json::array()}}}}}}}};
  testutil::TempFile spec_file("custom_lat.json", spec.dump());
  testutil::TempFile corpus("custom_corpus.txt", "o=x c1=a\no=x c1=a\no=y c1=b\n");

  TrainConfig cfg;
  cfg.task = TaskKind::custom;
  cfg.lattice_spec = spec_file.path;
  cfg.corpus = corpus.path;
  cfg.heldout_fraction = 0.0;
  TrainResult r = train_model(cfg);
  const Model& m = *r.model;
  Event ctx = testutil::ev(m.schema(), {{"c1", "a"}});
  auto dist = m.full_distribution(0, ctx);
  double sum = 0;
  for (const auto& [k, p] : dist) sum += p;
  CHECK(sum == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("model loader rejects foreign versions", "[io]") {
  testutil::TempFile f("io_badver.json", "{\"format_version\": 99}");
  CHECK_THROWS_AS(load_model(f.path), Error);
}

TEST_CASE("held-out data must be disjoint from training", "[io]") {
  testutil::TempFile f("io_overlap.txt", pp_text(gen_pp_synthetic(3, 20)));
  TrainConfig cfg;
  cfg.task = TaskKind::ppattach;
  cfg.corpus = f.path;
  cfg.heldout_path = f.path;
  CHECK_THROWS_WITH(train_model(cfg), Catch::Matchers::ContainsSubstring("disjoint"));

  // byte-identical copies are refused too
  testutil::TempFile copy("io_overlap_copy.txt", pp_text(gen_pp_synthetic(3, 20)));
  cfg.heldout_path = copy.path;
  CHECK_THROWS_AS(train_model(cfg), Error);
}

TEST_CASE("train config JSON covers the pipeline options", "[io]") {
  nlohmann::json j = {{"task", "ppattach"},
                      {"corpus", "pp.txt"},
                      {"K", 3},
                      {"heldout_fraction", 0.2},
                      {"em", {{"max_iters", 7}, {"tol", 1e-4}}},
                      {"oov", "error"},
                      {"seed", 99},
                      {"output", "model.json"}};
  TrainConfig cfg = config_from_json(j);
  CHECK(cfg.task == TaskKind::ppattach);
  CHECK(cfg.corpus == "pp.txt");
  CHECK(cfg.K == 3);
  CHECK(cfg.heldout_fraction == 0.2);
  CHECK(cfg.em.max_iters == 7);
  CHECK(cfg.em.tol == 1e-4);
  CHECK(cfg.oov == OovPolicy::error);
  CHECK(cfg.seed == 99);
  CHECK(cfg.output == "model.json");
  CHECK_THROWS_AS(config_from_json({{"task", "nope"}}), Error);
}

TEST_CASE("provenance hashing is deterministic", "[io]") {
  CHECK(fnv1a_hex("abc") == fnv1a_hex("abc"));
  CHECK(fnv1a_hex("abc") != fnv1a_hex("abd"));
  CHECK(fnv1a("") == 1469598103934665603ull);
}
