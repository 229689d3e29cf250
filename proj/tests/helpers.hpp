#pragma once

// Shared fixtures for the test suite: tiny schemas, corpora and models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <folm/backoff.hpp>
#include <folm/counts.hpp>
#include <folm/event.hpp>
#include <folm/lattice.hpp>
#include <folm/pipeline.hpp>
#include <folm/tasks.hpp>

namespace testutil {

// Flat 1 x n schema from role names.
inline folm::SchemaPtr flat_schema(const std::vector<std::string>& names) {
  std::vector<folm::SlotId> slots;
  for (std::size_t i = 0; i < names.size(); ++i)
    slots.push_back(folm::SlotId{0, static_cast<int>(i), names[i]});
  return std::make_shared<const folm::EventSchema>(std::move(slots));
}

inline folm::Event ev(const folm::SchemaPtr& schema,
                      const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::vector<std::pair<std::size_t, folm::Term>> idx;
  for (const auto& [name, term] : pairs) {
    auto i = schema->index_of(name);
    if (!i) folm::throw_internal("test schema has no slot " + name);
    idx.emplace_back(*i, folm::Term(term));
  }
  return folm::Event::from_pairs(schema, idx);
}

inline folm::ConditionalQuery q(const folm::SchemaPtr& schema,
                                const std::vector<std::pair<std::string, std::string>>& outcome,
                                const std::vector<std::pair<std::string, std::string>>& context) {
  return folm::ConditionalQuery(ev(schema, outcome), ev(schema, context));
}

// Writes content to a file in the current (build) directory.
struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content) : path(name) {
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

// Bigram observations straight from adjacent token pairs (no padding).
inline std::vector<folm::Observation> bigram_pairs(const folm::SchemaPtr& schema,
                                                   const std::vector<std::string>& tokens) {
  std::vector<folm::Observation> obs;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
    obs.push_back(folm::Observation{
        q(schema, {{"w", tokens[i + 1]}}, {{"h1", tokens[i]}}), 1});
  return obs;
}

// A skewed 8-word corpus for the chain-equivalence checks; deterministic.
inline std::vector<std::vector<folm::Term>> skewed_corpus(std::uint64_t seed,
                                                          std::size_t sentences,
                                                          std::size_t length) {
  static const char* words[8] = {"w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7"};
  std::mt19937_64 g(seed);
  // Zipf-ish weights 1/(i+1)
  double total = 0.0;
  double weight[8];
  for (int i = 0; i < 8; ++i) {
    weight[i] = 1.0 / (i + 1);
    total += weight[i];
  }
  std::vector<std::vector<folm::Term>> corpus;
  for (std::size_t s = 0; s < sentences; ++s) {
    std::vector<folm::Term> sent;
    for (std::size_t t = 0; t < length; ++t) {
      double r = folm::detail::rng_unit(g) * total;
      int pick = 0;
      while (pick < 7 && r > weight[pick]) {
        r -= weight[pick];
        ++pick;
      }
      sent.emplace_back(words[pick]);
    }
    corpus.push_back(std::move(sent));
  }
  return corpus;
}

inline std::string render_sentences(const std::vector<std::vector<folm::Term>>& corpus) {
  std::string out;
  for (const auto& sent : corpus) {
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (i) out += ' ';
      out += sent[i].str();
    }
    out += '\n';
  }
  return out;
}

inline folm::TrainResult train_pp_model(const std::string& corpus_path,
                                        double heldout = 0.1) {
  folm::TrainConfig cfg;
  cfg.task = folm::TaskKind::ppattach;
  cfg.corpus = corpus_path;
  cfg.heldout_fraction = heldout;
  return folm::train_model(cfg);
}

}  // namespace testutil
