#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <folm/backoff.hpp>
#include <folm/counts.hpp>
#include <folm/error.hpp>
#include <folm/event.hpp>
#include <folm/lattice.hpp>

namespace folm {

// Reserved symbols for the n-gram task. Corpus tokens may not collide with
// them; unknown test tokens map to kUnkToken under the default OOV policy.
inline constexpr std::string_view kBoundaryToken = "<s>";
inline constexpr std::string_view kUnkToken = "<unk>";

enum class OovPolicy { map_to_unk, error };

// ---------------------------------------------------------------------------
// Task records and loaders
// ---------------------------------------------------------------------------

// One PP-attachment instance: label 1 attaches the prepositional phrase to
// the noun, 0 to the verb.
struct PpRecord {
  Term v, n1, p, n2;
  int label = 1;
};

// Two lexical dependencies, each the translation of the other.
struct DependencyPair {
  Term parent1, child1, parent2, child2;
};

// Plain text, whitespace tokens, one sentence per line. Blank lines skipped.
inline std::vector<std::vector<Term>> load_sentences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open corpus: " + path);
  std::vector<std::vector<Term>> sentences;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<Term> sent;
    std::string tok;
    while (ss >> tok) {
      if (tok == kBoundaryToken || tok == kUnkToken)
        throw_data(path + ":" + std::to_string(lineno) + ": token \"" + tok +
                   "\" collides with a reserved symbol");
      try {
        sent.emplace_back(tok);
      } catch (const Error& e) {
        throw_data(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (!sent.empty()) sentences.push_back(std::move(sent));
  }
  return sentences;
}

// One record per line: "v n1 p n2 label", whitespace separated.
inline std::vector<PpRecord> load_pp_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open PP data: " + path);
  std::vector<PpRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string v, n1, p, n2, label;
    if (!(ss >> v >> n1 >> p >> n2 >> label))
      throw_data(path + ":" + std::to_string(lineno) +
                 ": expected 5 fields \"v n1 p n2 label\"");
    std::string extra;
    if (ss >> extra)
      throw_data(path + ":" + std::to_string(lineno) + ": trailing field \"" + extra + "\"");
    if (label != "0" && label != "1")
      throw_data(path + ":" + std::to_string(lineno) + ": label must be 0 or 1, got \"" +
                 label + "\"");
    try {
      records.push_back(PpRecord{Term(v), Term(n1), Term(p), Term(n2), label == "1"});
    } catch (const Error& e) {
      throw_data(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

// One record per line, tab separated: "parent1<TAB>child1<TAB>parent2<TAB>child2".
inline std::vector<DependencyPair> load_dependency_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open dependency data: " + path);
  std::vector<DependencyPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4)
      throw_data(path + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    try {
      pairs.push_back(DependencyPair{Term(fields[0]), Term(fields[1]), Term(fields[2]),
                                     Term(fields[3])});
    } catch (const Error& e) {
      throw_data(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Task lattices and observations
// ---------------------------------------------------------------------------

// Drop-one lattice over context (v, n1, p, n2) with the preposition pinned:
// every back-off level keeps p, bottoming out at Pr(label | p).
inline Lattice build_pp_lattice() {
  return build_dropone({SlotId{0, 0, "label"}},
                       {DropSlot{SlotId{0, 1, "v"}, true},
                        DropSlot{SlotId{0, 2, "n1"}, true},
                        DropSlot{SlotId{0, 3, "p"}, false},
                        DropSlot{SlotId{0, 4, "n2"}, true}},
                       0);
}

// 2x1 synchronous split: two languages, one dependency each side.
inline Lattice build_syncdep_lattice() { return build_sync_split(2, 1); }

namespace detail {
inline std::size_t slot_index(const SchemaPtr& schema, std::string_view name) {
  auto idx = schema->index_of(name);
  if (!idx) throw_internal("schema is missing slot " + std::string(name));
  return *idx;
}
}  // namespace detail

// Sentences to n-gram observations; histories are padded with the boundary
// token, the boundary itself is never an outcome.
inline std::vector<Observation> ngram_observations(
    const std::vector<std::vector<Term>>& sentences, const SchemaPtr& schema, int n) {
  std::size_t w = detail::slot_index(schema, "w");
  std::vector<std::size_t> hist;  // hist[k] = slot of h_{k+1}
  for (int k = 1; k < n; ++k)
    hist.push_back(detail::slot_index(schema, "h" + std::to_string(k)));

  const Term boundary{std::string(kBoundaryToken)};
  std::vector<Observation> out;
  for (const auto& sent : sentences) {
    std::vector<Term> window(static_cast<std::size_t>(n - 1), boundary);
    for (const Term& tok : sent) {
      std::vector<std::pair<std::size_t, Term>> octx;
      for (int k = 1; k < n; ++k)
        octx.emplace_back(hist[k - 1], window[window.size() - static_cast<std::size_t>(k)]);
      Event outcome = Event::from_pairs(schema, {{w, tok}});
      Event context = Event::from_pairs(schema, octx);
      out.push_back(Observation{ConditionalQuery(std::move(outcome), std::move(context)), 1});
      if (!window.empty()) {
        window.erase(window.begin());
        window.push_back(tok);
      }
    }
  }
  return out;
}

inline Observation pp_observation(const SchemaPtr& schema, const PpRecord& rec) {
  Event outcome = Event::from_pairs(
      schema, {{detail::slot_index(schema, "label"), Term(rec.label ? "1" : "0")}});
  Event context = Event::from_pairs(schema, {{detail::slot_index(schema, "v"), rec.v},
                                             {detail::slot_index(schema, "n1"), rec.n1},
                                             {detail::slot_index(schema, "p"), rec.p},
                                             {detail::slot_index(schema, "n2"), rec.n2}});
  return Observation{ConditionalQuery(std::move(outcome), std::move(context)), 1};
}

inline std::vector<Observation> pp_observations(const SchemaPtr& schema,
                                                const std::vector<PpRecord>& records) {
  std::vector<Observation> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(pp_observation(schema, r));
  return out;
}

inline Observation syncdep_observation(const SchemaPtr& schema, const DependencyPair& d) {
  Event outcome = Event::from_pairs(schema, {{detail::slot_index(schema, "a0_0"), d.child1},
                                             {detail::slot_index(schema, "a1_0"), d.child2}});
  Event context = Event::from_pairs(schema, {{detail::slot_index(schema, "b0_0"), d.parent1},
                                             {detail::slot_index(schema, "b1_0"), d.parent2}});
  return Observation{ConditionalQuery(std::move(outcome), std::move(context)), 1};
}

inline std::vector<Observation> syncdep_observations(
    const SchemaPtr& schema, const std::vector<DependencyPair>& pairs) {
  std::vector<Observation> out;
  out.reserve(pairs.size());
  for (const auto& d : pairs) out.push_back(syncdep_observation(schema, d));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// exp of the average negative log-probability per scored token. Histories are
// padded with the boundary token; unknown tokens map to <unk> or raise,
// depending on the policy the model was built with.
inline double perplexity(const Model& model, const std::vector<std::vector<Term>>& sentences,
                         int n, OovPolicy policy = OovPolicy::map_to_unk) {
  const SchemaPtr& schema = model.schema();
  NodeId root = model.lattice().root();
  std::size_t w = detail::slot_index(schema, "w");

  std::set<std::string> known;
  for (const std::string& okey : model.outcome_vocab(root, 0)) {
    Event e = event_from_key(schema, okey);
    if (e.assigned(w)) known.insert(e.term(w).str());
  }

  const Term boundary{std::string(kBoundaryToken)};
  const Term unk{std::string(kUnkToken)};
  auto normalize = [&](const Term& t, std::size_t sent, std::size_t pos) -> Term {
    if (known.count(t.str())) return t;
    if (policy == OovPolicy::map_to_unk) return unk;
    throw_data("out-of-vocabulary token \"" + t.str() + "\" at sentence " +
               std::to_string(sent + 1) + " position " + std::to_string(pos + 1));
  };

  std::vector<std::size_t> hist;
  for (int k = 1; k < n; ++k)
    hist.push_back(detail::slot_index(schema, "h" + std::to_string(k)));

  double log_sum = 0.0;
  std::size_t scored = 0;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    std::vector<Term> window(static_cast<std::size_t>(n - 1), boundary);
    for (std::size_t t = 0; t < sentences[s].size(); ++t) {
      Term tok = normalize(sentences[s][t], s, t);
      std::vector<std::pair<std::size_t, Term>> octx;
      for (int k = 1; k < n; ++k)
        octx.emplace_back(hist[k - 1], window[window.size() - static_cast<std::size_t>(k)]);
      ConditionalQuery q(Event::from_pairs(schema, {{w, tok}}),
                         Event::from_pairs(schema, octx));
      double p = model.prob(root, q);
      if (!(p > 0.0))
        throw_data("zero probability at sentence " + std::to_string(s + 1) +
                   " position " + std::to_string(t + 1));
      log_sum += std::log(p);
      ++scored;
      if (!window.empty()) {
        window.erase(window.begin());
        window.push_back(tok);
      }
    }
  }
  if (scored == 0) throw_data("no tokens to score");
  return std::exp(-log_sum / static_cast<double>(scored));
}

// Argmax over the two attachment labels; ties break toward noun attachment.
inline std::pair<int, double> classify_pp(const Model& model, const PpRecord& rec,
                                          CombineMode mode = CombineMode::mixture) {
  const SchemaPtr& schema = model.schema();
  NodeId root = model.lattice().root();
  Observation obs = pp_observation(schema, PpRecord{rec.v, rec.n1, rec.p, rec.n2, 1});
  const Event& context = obs.query.context;
  std::size_t label_slot = detail::slot_index(schema, "label");
  double p1 = model.prob(root, ConditionalQuery(
      Event::from_pairs(schema, {{label_slot, Term("1")}}), context), mode);
  double p0 = model.prob(root, ConditionalQuery(
      Event::from_pairs(schema, {{label_slot, Term("0")}}), context), mode);
  return p1 >= p0 ? std::make_pair(1, p1) : std::make_pair(0, p0);
}

// Root-table relative frequencies with no back-off at all; unseen contexts
// fall to the declared tie-break. The no-back-off baseline for comparisons.
inline std::pair<int, double> classify_pp_mle_only(const Model& model, const PpRecord& rec) {
  const SchemaPtr& schema = model.schema();
  NodeId root = model.lattice().root();
  Observation obs = pp_observation(schema, PpRecord{rec.v, rec.n1, rec.p, rec.n2, 1});
  std::string ckey = canonical_key(obs.query.context);
  std::size_t label_slot = detail::slot_index(schema, "label");
  std::string k1 = canonical_key(Event::from_pairs(schema, {{label_slot, Term("1")}}));
  std::string k0 = canonical_key(Event::from_pairs(schema, {{label_slot, Term("0")}}));
  const CountTable& ct = model.counts(root);
  std::int64_t cc = ct.marginal(ckey);
  if (cc <= 0) return {1, 0.5};
  double p1 = static_cast<double>(ct.joint(k1, ckey)) / static_cast<double>(cc);
  double p0 = static_cast<double>(ct.joint(k0, ckey)) / static_cast<double>(cc);
  return p1 >= p0 ? std::make_pair(1, p1) : std::make_pair(0, p0);
}

// Level-by-level frequency-ratio baseline: at each back-off depth, if the
// summed context counts are positive, answer with the pooled label-1 ratio;
// otherwise descend. The final level is the label prior, and an entirely
// empty table answers 1 (noun attachment).
inline std::pair<int, double> collins_brooks_baseline(const Lattice& lat,
                                                      const NodeCounts& counts,
                                                      const PpRecord& rec) {
  const SchemaPtr& schema = lat.schema();
  Observation obs = pp_observation(schema, PpRecord{rec.v, rec.n1, rec.p, rec.n2, 1});
  std::size_t label_slot = detail::slot_index(schema, "label");
  std::string k1 = canonical_key(Event::from_pairs(schema, {{label_slot, Term("1")}}));

  std::map<std::size_t, std::vector<NodeId>, std::greater<>> levels;  // context size desc
  for (const auto& node : lat.nodes())
    levels[node.shapes[0].context.size()].push_back(node.id);

  for (const auto& [size, nodes] : levels) {
    std::int64_t sum1 = 0, total = 0;
    for (NodeId id : nodes) {
      const EventShape& shape = lat.node(id).shapes[0];
      std::string ckey = canonical_key(obs.query.context.project(shape.context));
      const CountTable& ct = counts.at(id);
      sum1 += ct.joint(k1, ckey);
      total += ct.marginal(ckey);
    }
    if (total > 0) {
      double score = static_cast<double>(sum1) / static_cast<double>(total);
      return {score >= 0.5 ? 1 : 0, score};
    }
  }

  // label prior over the whole training set
  const CountTable& root_ct = counts.at(lat.root());
  std::int64_t prior1 = 0, prior_total = root_ct.total();
  for (const auto& [ckey, row] : root_ct.joints()) {
    auto it = row.find(k1);
    if (it != row.end()) prior1 += it->second;
  }
  if (prior_total > 0) {
    double score = static_cast<double>(prior1) / static_cast<double>(prior_total);
    return {score >= 0.5 ? 1 : 0, score};
  }
  return {1, 1.0};
}

// Element-wise synchronous factorization of a 2x1 bilingual dependency:
// the probability is the product of the per-language dependency factors.
inline double sync_dependency_prob(const Model& model, const DependencyPair& pair) {
  const Lattice& lat = model.lattice();
  NodeId root = lat.root();
  const auto& out = lat.out_edges(root);
  if (out.size() != 1 || !lat.edge(out[0]).independence)
    throw_data("model is not a synchronous 2x1 factorization");
  Observation obs = syncdep_observation(model.schema(), pair);
  const FactorizationEdge& e = lat.edge(out[0]);
  double p = 1.0;
  for (const ConditionalQuery& q : apply_factorization(obs.query, e.spec))
    p *= model.prob(e.child, q);
  return p;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace detail {
// Distribution helpers with engine-defined output only, so generated corpora
// are identical across platforms.
inline double rng_unit(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * (1.0 / 9007199254740992.0);
}
inline std::size_t rng_below(std::mt19937_64& g, std::size_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = g();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}
inline double rng_range(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * rng_unit(g);
}
}  // namespace detail

// PP records drawn from a known factored distribution: the attachment logit
// is a sum of per-word effects, dominated by the preposition.
inline std::vector<PpRecord> gen_pp_synthetic(std::uint64_t seed, std::size_t size) {
  std::mt19937_64 g(seed);
  const std::size_t nv = 8, nn1 = 12, np = 6, nn2 = 12;
  std::vector<double> wv(nv), wn1(nn1), wp(np), wn2(nn2);
  for (auto& x : wp) x = detail::rng_range(g, -2.5, 2.5);
  for (auto& x : wv) x = detail::rng_range(g, -0.8, 0.8);
  for (auto& x : wn1) x = detail::rng_range(g, -0.8, 0.8);
  for (auto& x : wn2) x = detail::rng_range(g, -0.8, 0.8);

  std::vector<PpRecord> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    std::size_t v = detail::rng_below(g, nv);
    std::size_t n1 = detail::rng_below(g, nn1);
    std::size_t p = detail::rng_below(g, np);
    std::size_t n2 = detail::rng_below(g, nn2);
    double logit = wv[v] + wn1[n1] + wp[p] + wn2[n2];
    double pr1 = 1.0 / (1.0 + std::exp(-logit));
    int label = detail::rng_unit(g) < pr1 ? 1 : 0;
    out.push_back(PpRecord{Term("v" + std::to_string(v)), Term("n" + std::to_string(n1)),
                           Term("p" + std::to_string(p)), Term("m" + std::to_string(n2)),
                           label});
  }
  return out;
}

// Bilingual dependency pairs: each parent favors three children, and the
// second language mirrors the first through a noisy one-to-one lexicon.
inline std::vector<DependencyPair> gen_syncdep_synthetic(std::uint64_t seed,
                                                         std::size_t size) {
  std::mt19937_64 g(seed);
  const std::size_t nparents = 10, nchildren = 12;
  std::vector<DependencyPair> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    std::size_t parent = detail::rng_below(g, nparents);
    double r = detail::rng_unit(g);
    std::size_t child;
    if (r < 0.6) child = (parent * 3) % nchildren;
    else if (r < 0.9) child = (parent * 3 + 1) % nchildren;
    else child = (parent * 3 + 2) % nchildren;
    std::size_t child2 = detail::rng_unit(g) < 0.1 ? detail::rng_below(g, nchildren) : child;
    out.push_back(DependencyPair{Term("e" + std::to_string(parent)),
                                 Term("c" + std::to_string(child)),
                                 Term("f" + std::to_string(parent)),
                                 Term("d" + std::to_string(child2))});
  }
  return out;
}

inline void write_pp_records(const std::string& path, const std::vector<PpRecord>& records) {
  std::ofstream outf(path);
  if (!outf) throw_data("cannot write " + path);
  for (const auto& r : records)
    outf << r.v.str() << ' ' << r.n1.str() << ' ' << r.p.str() << ' ' << r.n2.str() << ' '
         << r.label << '\n';
}

inline void write_dependency_pairs(const std::string& path,
                                   const std::vector<DependencyPair>& pairs) {
  std::ofstream outf(path);
  if (!outf) throw_data("cannot write " + path);
  for (const auto& d : pairs)
    outf << d.parent1.str() << '\t' << d.child1.str() << '\t' << d.parent2.str() << '\t'
         << d.child2.str() << '\n';
}

}  // namespace folm
