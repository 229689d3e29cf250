#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <folm/mixture.hpp>

#include "helpers.hpp"

using namespace folm;
using testutil::ev;
using testutil::flat_schema;

namespace {

// Root (o | c1,c2) with two asynchronous drop edges to leaf children.
struct TwoEdgeFixture {
  SchemaPtr schema = flat_schema({"o", "c1", "c2"});
  Lattice lattice = make();
  Lattice make() {
    EventShape root{SlotSet{0}, SlotSet{1, 2}};
    EventShape keep_c1{SlotSet{0}, SlotSet{1}};
    EventShape keep_c2{SlotSet{0}, SlotSet{2}};
    ProjectionSpec to_c1{{{SlotSet{}, SlotSet{1}}}};
    ProjectionSpec to_c2{{{SlotSet{}, SlotSet{2}}}};
    return Lattice(schema,
                   {LatticeNode{0, {root}, true}, LatticeNode{1, {keep_c1}, false},
                    LatticeNode{2, {keep_c2}, false}},
                   {{0, 1, 0, to_c1, 0.5, false}, {0, 2, 0, to_c2, 0.5, false}});
  }
  ConditionalQuery query(const std::string& o, const std::string& c1,
                         const std::string& c2) const {
    return testutil::q(schema, {{"o", o}}, {{"c1", c1}, {"c2", c2}});
  }
};

// The lexical/syntactic dependency split: two independence edges.
struct DependencyFixture {
  SchemaPtr schema = flat_schema({"cw", "ct", "pw", "pt"});
  Lattice lattice = make();
  Lattice make() {
    EventShape root{SlotSet{0, 1}, SlotSet{2, 3}};
    // straight split: (cw|pw) and (ct|pt)
    EventShape lex{SlotSet{0}, SlotSet{2}};
    EventShape syn{SlotSet{1}, SlotSet{3}};
    // crossed split: (ct|pw) and (cw|pt)
    EventShape cross1{SlotSet{1}, SlotSet{2}};
    EventShape cross2{SlotSet{0}, SlotSet{3}};
    ProjectionSpec straight{{{SlotSet{0}, SlotSet{2}}, {SlotSet{1}, SlotSet{3}}}};
    ProjectionSpec crossed{{{SlotSet{1}, SlotSet{2}}, {SlotSet{0}, SlotSet{3}}}};
    return Lattice(schema,
                   {LatticeNode{0, {root}, true}, LatticeNode{1, {lex, syn}, false},
                    LatticeNode{2, {cross1, cross2}, false}},
                   {{0, 1, 0, straight, 0.6, true}, {0, 2, 0, crossed, 0.4, true}});
  }
};

}  // namespace

TEST_CASE("a single edge passes the child value through", "[mixture]") {
  TwoEdgeFixture f;
  EventShape root{SlotSet{0}, SlotSet{1, 2}};
  EventShape keep_c1{SlotSet{0}, SlotSet{1}};
  ProjectionSpec to_c1{{{SlotSet{}, SlotSet{1}}}};
  Lattice single(f.schema, {LatticeNode{0, {root}, true}, LatticeNode{1, {keep_c1}, false}},
                 {{0, 1, 0, to_c1, 1.0, false}});
  MixtureWeights w = MixtureWeights::from_lattice(single);
  auto child = [](NodeId, const ConditionalQuery&) { return 0.37; };
  CHECK(evaluate(single, 0, f.query("a", "x", "y"), child, w, CombineMode::mixture) == 0.37);
}

TEST_CASE("mixture is the weighted average of edge values", "[mixture]") {
  TwoEdgeFixture f;
  MixtureWeights w = MixtureWeights::from_lattice(f.lattice);
  auto child = [](NodeId node, const ConditionalQuery&) {
    return node == 1 ? 0.2 : 0.4;
  };
  double got = evaluate(f.lattice, 0, f.query("a", "x", "y"), child, w,
                        CombineMode::mixture);
  CHECK(got == Catch::Approx(0.3).margin(1e-15));
}

TEST_CASE("independence edges multiply their sub-events", "[mixture]") {
  DependencyFixture f;
  MixtureWeights w = MixtureWeights::from_lattice(f.lattice);
  ConditionalQuery q = testutil::q(f.schema, {{"cw", "June"}, {"ct", "NN"}},
                                   {{"pw", "in"}, {"pt", "IN"}});
  auto child = [&](NodeId, const ConditionalQuery& cq) {
    // Pr(June|in)=0.5, Pr(NN|IN)=0.4; the crossed pairs get 0.3 and 0.2
    const Event& o = cq.outcome;
    if (o.assigned(0) && cq.context.assigned(2)) return 0.5;
    if (o.assigned(1) && cq.context.assigned(3)) return 0.4;
    if (o.assigned(1) && cq.context.assigned(2)) return 0.3;
    return 0.2;
  };
  // straight edge alone: 0.5 * 0.4 = 0.2
  const auto& out = f.lattice.out_edges(0);
  CHECK(edge_value(f.lattice, out[0], q, child) == Catch::Approx(0.2).margin(1e-15));
  // full mixture: 0.6*0.2 + 0.4*(0.3*0.2)
  double got = evaluate(f.lattice, 0, q, child, w, CombineMode::mixture);
  CHECK(got == Catch::Approx(0.6 * 0.2 + 0.4 * 0.06).margin(1e-15));
}

TEST_CASE("max-path ignores the weights", "[mixture]") {
  TwoEdgeFixture f;
  auto child = [](NodeId node, const ConditionalQuery&) {
    return node == 1 ? 0.2 : 0.4;
  };
  MixtureWeights w1 = MixtureWeights::from_lattice(f.lattice);
  MixtureWeights w2 = w1;
  w2.per_node[0] = {0.9, 0.1};
  ConditionalQuery q = f.query("a", "x", "y");
  double m1 = evaluate(f.lattice, 0, q, child, w1, CombineMode::max_path);
  double m2 = evaluate(f.lattice, 0, q, child, w2, CombineMode::max_path);
  CHECK(m1 == 0.4);
  CHECK(m1 == m2);
}

TEST_CASE("mixture lies between the extreme edge values", "[mixture]") {
  TwoEdgeFixture f;
  std::mt19937_64 g(99);
  for (int trial = 0; trial < 50; ++trial) {
    double p1 = folm::detail::rng_unit(g);
    double p2 = folm::detail::rng_unit(g);
    double a = folm::detail::rng_unit(g);
    MixtureWeights w = MixtureWeights::from_lattice(f.lattice);
    w.per_node[0] = {a, 1.0 - a};
    auto child = [&](NodeId node, const ConditionalQuery&) {
      return node == 1 ? p1 : p2;
    };
    double got = evaluate(f.lattice, 0, f.query("a", "x", "y"), child, w,
                          CombineMode::mixture);
    CHECK(got >= std::min(p1, p2) - 1e-15);
    CHECK(got <= std::max(p1, p2) + 1e-15);
  }
}

TEST_CASE("evaluate refuses leaf nodes", "[mixture]") {
  TwoEdgeFixture f;
  MixtureWeights w = MixtureWeights::from_lattice(f.lattice);
  auto child = [](NodeId, const ConditionalQuery&) { return 0.5; };
  ConditionalQuery leaf_query = testutil::q(f.schema, {{"o", "a"}}, {{"c1", "x"}});
  CHECK_THROWS_AS(evaluate(f.lattice, 1, leaf_query, child, w, CombineMode::mixture),
                  Error);
}

TEST_CASE("mixture of proper child distributions is proper", "[mixture]") {
  SECTION("two joint edges") {
    TwoEdgeFixture f;
    MixtureWeights w = MixtureWeights::from_lattice(f.lattice);
    w.per_node[0] = {0.4, 0.6};
    const std::vector<std::string> outcomes{"a", "b", "c"};
    auto child = [&](NodeId node, const ConditionalQuery& cq) {
      std::map<std::string, double> d1{{"a", 0.5}, {"b", 0.3}, {"c", 0.2}};
      std::map<std::string, double> d2{{"a", 0.1}, {"b", 0.6}, {"c", 0.3}};
      const std::string& term = cq.outcome.term(0).str();
      return node == 1 ? d1.at(term) : d2.at(term);
    };
    double sum = 0.0;
    for (const auto& o : outcomes)
      sum += evaluate(f.lattice, 0, f.query(o, "x", "y"), child, w, CombineMode::mixture);
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));
  }
  SECTION("independence edge over a product outcome space") {
    DependencyFixture f;
    MixtureWeights w = MixtureWeights::from_lattice(f.lattice);
    std::map<std::string, double> words{{"June", 0.7}, {"May", 0.3}};
    std::map<std::string, double> tags{{"NN", 0.4}, {"VB", 0.6}};
    auto child = [&](NodeId, const ConditionalQuery& cq) {
      const std::string& term =
          cq.outcome.assigned(0) ? cq.outcome.term(0).str() : cq.outcome.term(1).str();
      auto wi = words.find(term);
      return wi != words.end() ? wi->second : tags.at(term);
    };
    double sum = 0.0;
    for (const auto& [word, pw] : words)
      for (const auto& [tag, pt] : tags)
        sum += evaluate(f.lattice, 0,
                        testutil::q(f.schema, {{"cw", word}, {"ct", tag}},
                                    {{"pw", "in"}, {"pt", "IN"}}),
                        child, w, CombineMode::mixture);
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));
  }
}

// ---------------------------------------------------------------------------
// EM
// ---------------------------------------------------------------------------

TEST_CASE("em_fit on symmetric items converges to even weights", "[mixture][em]") {
  EmFitResult fit = em_fit({{0.8, 0.2}, {0.2, 0.8}}, {1, 1}, {0.3, 0.7},
                           EmOptions{200, 1e-12});
  CHECK(fit.weights[0] == Catch::Approx(0.5).margin(1e-6));
  CHECK(fit.weights[1] == Catch::Approx(0.5).margin(1e-6));
}

TEST_CASE("em_fit log-likelihood never decreases", "[mixture][em]") {
  std::mt19937_64 g(1234);
  std::vector<std::vector<double>> comp;
  std::vector<std::int64_t> mult;
  for (int i = 0; i < 60; ++i) {
    comp.push_back({folm::detail::rng_unit(g), folm::detail::rng_unit(g),
                    folm::detail::rng_unit(g)});
    mult.push_back(1 + static_cast<std::int64_t>(folm::detail::rng_below(g, 3)));
  }
  EmFitResult fit = em_fit(comp, mult, {1.0 / 3, 1.0 / 3, 1.0 / 3}, EmOptions{100, 1e-9});
  REQUIRE(fit.log_likelihood.size() >= 2);
  for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
    CHECK(fit.log_likelihood[i] >= fit.log_likelihood[i - 1] - 1e-12);
}

TEST_CASE("em_fit matches a grid search of the held-out likelihood", "[mixture][em]") {
  std::mt19937_64 g(4321);
  std::vector<std::vector<double>> comp;
  std::vector<std::int64_t> mult;
  for (int i = 0; i < 50; ++i) {
    comp.push_back({0.01 + 0.99 * folm::detail::rng_unit(g),
                    0.01 + 0.99 * folm::detail::rng_unit(g)});
    mult.push_back(1);
  }
  EmFitResult fit = em_fit(comp, mult, {0.5, 0.5}, EmOptions{2000, 1e-13});

  auto loglik = [&](double w) {
    double ll = 0.0;
    for (const auto& row : comp) ll += std::log(w * row[0] + (1.0 - w) * row[1]);
    return ll;
  };
  double best_w = 0.0, best_ll = loglik(0.0);
  for (int i = 1; i <= 1000; ++i) {
    double w = i / 1000.0;
    double ll = loglik(w);
    if (ll > best_ll) {
      best_ll = ll;
      best_w = w;
    }
  }
  CHECK(std::abs(fit.weights[0] - best_w) <= 2e-3);
}

TEST_CASE("em_fit flags all-zero items and keeps the prior", "[mixture][em]") {
  EmFitResult fit = em_fit({{0.0, 0.0}, {0.0, 0.0}}, {1, 1}, {0.7, 0.3}, EmOptions{});
  CHECK(fit.degenerate);
  CHECK(fit.weights == std::vector<double>{0.7, 0.3});
}

TEST_CASE("train_em trains parent nodes from held-out items", "[mixture][em]") {
  TwoEdgeFixture f;
  std::vector<Observation> heldout{
      Observation{f.query("a", "u", "u"), 1},
      Observation{f.query("a", "v", "v"), 1},
  };
  auto child = [&](NodeId node, const ConditionalQuery& cq) {
    const std::string& c =
        node == 1 ? cq.context.term(1).str() : cq.context.term(2).str();
    if (node == 1) return c == "u" ? 0.8 : 0.2;
    return c == "u" ? 0.2 : 0.8;
  };
  EmReport report = train_em(f.lattice, heldout, child, EmOptions{500, 1e-12});
  REQUIRE(report.traces.size() == 1);
  CHECK(report.traces[0].node == 0);
  CHECK(report.weights.at(0)[0] == Catch::Approx(0.5).margin(1e-6));
  CHECK(report.weights.at(0)[1] == Catch::Approx(0.5).margin(1e-6));
}

TEST_CASE("single-edge nodes keep weight one", "[mixture][em]") {
  Lattice chain = build_ngram_chain(3);
  std::vector<Observation> heldout;
  auto schema = chain.schema();
  heldout.push_back(Observation{
      testutil::q(schema, {{"w", "b"}}, {{"h1", "a"}, {"h2", "c"}}), 1});
  auto child = [](NodeId, const ConditionalQuery&) { return 0.5; };
  EmReport report = train_em(chain, heldout, child, EmOptions{});
  CHECK(report.traces.empty());  // nothing with two edges to train
  CHECK(report.weights.at(0) == std::vector<double>{1.0});
  CHECK(report.weights.at(1) == std::vector<double>{1.0});
}
