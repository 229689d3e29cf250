#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include <folm/backoff.hpp>
#include <folm/counts.hpp>
#include <folm/error.hpp>
#include <folm/estimation.hpp>
#include <folm/lattice.hpp>
#include <folm/mixture.hpp>
#include <folm/model_io.hpp>
#include <folm/tasks.hpp>

namespace folm {

enum class TaskKind { ngram, ppattach, syncdep, custom };

inline TaskKind task_from_string(const std::string& s) {
  if (s == "ngram") return TaskKind::ngram;
  if (s == "ppattach") return TaskKind::ppattach;
  if (s == "syncdep") return TaskKind::syncdep;
  if (s == "custom-lattice" || s == "custom") return TaskKind::custom;
  throw_usage("unknown task: " + s);
}

inline std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::ngram: return "ngram";
    case TaskKind::ppattach: return "ppattach";
    case TaskKind::syncdep: return "syncdep";
    case TaskKind::custom: return "custom-lattice";
  }
  return "?";
}

struct TrainConfig {
  TaskKind task = TaskKind::ngram;
  std::string corpus;
  int ngram_n = 3;
  std::int64_t K = 5;
  std::map<NodeId, std::int64_t> K_per_node;
  double heldout_fraction = 0.1;
  std::string heldout_path;
  EmOptions em;
  std::string lattice_spec;  // custom-lattice task
  std::string vocab_file;    // optional declared outcome vocabulary
  std::map<NodeId, std::string> count_overrides;
  OovPolicy oov = OovPolicy::map_to_unk;
  std::uint64_t seed = 1;  // synthetic generators only; the pipeline is deterministic
  std::string output;
};

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  if (j.contains("task")) cfg.task = task_from_string(j.at("task").get<std::string>());
  cfg.corpus = j.value("corpus", cfg.corpus);
  cfg.ngram_n = j.value("n", cfg.ngram_n);
  cfg.K = j.value("K", cfg.K);
  if (j.contains("K_per_node"))
    for (const auto& [id, k] : j.at("K_per_node").items())
      cfg.K_per_node[std::stoi(id)] = k.get<std::int64_t>();
  cfg.heldout_fraction = j.value("heldout_fraction", cfg.heldout_fraction);
  cfg.heldout_path = j.value("heldout_path", cfg.heldout_path);
  if (j.contains("em")) {
    cfg.em.max_iters = j.at("em").value("max_iters", cfg.em.max_iters);
    cfg.em.tol = j.at("em").value("tol", cfg.em.tol);
  }
  cfg.lattice_spec = j.value("lattice_spec", cfg.lattice_spec);
  cfg.vocab_file = j.value("vocab", cfg.vocab_file);
  if (j.contains("count_overrides"))
    for (const auto& [id, path] : j.at("count_overrides").items())
      cfg.count_overrides[std::stoi(id)] = path.get<std::string>();
  if (j.contains("oov")) {
    std::string o = j.at("oov").get<std::string>();
    if (o == "unk") cfg.oov = OovPolicy::map_to_unk;
    else if (o == "error") cfg.oov = OovPolicy::error;
    else throw_usage("oov policy must be \"unk\" or \"error\"");
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.output = j.value("output", cfg.output);
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_data(path + ": " + e.what());
  }
  return config_from_json(j);
}

struct TrainResult {
  std::shared_ptr<const ModelData> data;
  MixtureWeights weights;
  EmReport em;
  nlohmann::json meta;
  std::shared_ptr<Model> model;  // finalized, alpha cache warmed
  std::size_t train_records = 0;
  std::size_t heldout_records = 0;
};

namespace detail {

inline Lattice build_task_lattice(const TrainConfig& cfg) {
  switch (cfg.task) {
    case TaskKind::ngram: return build_ngram_chain(cfg.ngram_n);
    case TaskKind::ppattach: return build_pp_lattice();
    case TaskKind::syncdep: return build_syncdep_lattice();
    case TaskKind::custom:
      if (cfg.lattice_spec.empty())
        throw_usage("custom-lattice task needs a lattice_spec file");
      return load_lattice_spec(cfg.lattice_spec);
  }
  throw_internal("unhandled task kind");
}

// Custom-lattice corpus format: whitespace separated slot=term pairs per
// line, covering the root shape exactly.
inline std::vector<Observation> load_custom_observations(const std::string& path,
                                                         const Lattice& lat) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open corpus: " + path);
  const SchemaPtr& schema = lat.schema();
  const EventShape& root = lat.node(lat.root()).shapes[0];
  std::vector<Observation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::pair<std::size_t, Term>> opairs, cpairs;
    std::string field;
    bool any = false;
    while (ss >> field) {
      any = true;
      std::size_t eq = field.find('=');
      if (eq == std::string::npos)
        throw_data(path + ":" + std::to_string(lineno) + ": expected slot=term, got \"" +
                   field + "\"");
      auto idx = schema->index_of(field.substr(0, eq));
      if (!idx)
        throw_data(path + ":" + std::to_string(lineno) + ": unknown slot \"" +
                   field.substr(0, eq) + "\"");
      Term term(field.substr(eq + 1));
      if (root.outcome.contains(*idx)) opairs.emplace_back(*idx, std::move(term));
      else if (root.context.contains(*idx)) cpairs.emplace_back(*idx, std::move(term));
      else
        throw_data(path + ":" + std::to_string(lineno) + ": slot \"" +
                   field.substr(0, eq) + "\" is not part of the root event");
    }
    if (!any) continue;
    Observation obs{ConditionalQuery(Event::from_pairs(schema, opairs),
                                     Event::from_pairs(schema, cpairs)),
                    1};
    if (obs.query.outcome.assigned_slots() != root.outcome ||
        obs.query.context.assigned_slots() != root.context)
      throw_data(path + ":" + std::to_string(lineno) +
                 ": record does not cover the root event shape");
    out.push_back(std::move(obs));
  }
  return out;
}

inline std::vector<Observation> load_observations(const TrainConfig& cfg,
                                                  const std::string& path,
                                                  const Lattice& lat) {
  switch (cfg.task) {
    case TaskKind::ngram:
      return ngram_observations(load_sentences(path), lat.schema(), cfg.ngram_n);
    case TaskKind::ppattach:
      return pp_observations(lat.schema(), load_pp_records(path));
    case TaskKind::syncdep:
      return syncdep_observations(lat.schema(), load_dependency_pairs(path));
    case TaskKind::custom:
      return load_custom_observations(path, lat);
  }
  throw_internal("unhandled task kind");
}

// Injects a term into the vocabulary of every single-slot outcome shape.
inline void inject_outcome_term(const Lattice& lat,
                                std::map<NodeId, std::map<int, std::vector<std::string>>>& vocab,
                                const Term& term) {
  for (const auto& node : lat.nodes()) {
    for (int s = 0; s < static_cast<int>(node.shapes.size()); ++s) {
      const EventShape& shape = node.shapes[s];
      if (shape.outcome.size() != 1) continue;
      std::size_t slot = *shape.outcome.begin();
      std::string key = canonical_key(Event::from_pairs(lat.schema(), {{slot, term}}));
      auto& keys = vocab[node.id][s];
      if (!std::binary_search(keys.begin(), keys.end(), key)) {
        keys.insert(std::upper_bound(keys.begin(), keys.end(), key), key);
      }
    }
  }
}

}  // namespace detail

// The whole training pipeline: build the lattice, ingest, discount, train
// the mixture weights on held-out data, finalize. Deterministic given the
// same config and corpus bytes.
inline TrainResult train_model(const TrainConfig& cfg) {
  if (cfg.corpus.empty()) throw_usage("no corpus given");
  auto lattice = std::make_shared<const Lattice>(detail::build_task_lattice(cfg));
  {
    ValidationReport rep = validate(*lattice);
    if (!rep.ok()) throw_data("invalid lattice:\n" + rep.to_string());
  }

  std::vector<Observation> train = detail::load_observations(cfg, cfg.corpus, *lattice);
  std::vector<Observation> heldout;
  if (!cfg.heldout_path.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (fs::weakly_canonical(cfg.heldout_path, ec) == fs::weakly_canonical(cfg.corpus, ec))
      throw_data("held-out path equals the training corpus; the two must be disjoint");
    if (hash_file(cfg.heldout_path) == hash_file(cfg.corpus))
      throw_data("held-out data is byte-identical to the training corpus");
    heldout = detail::load_observations(cfg, cfg.heldout_path, *lattice);
  } else if (cfg.heldout_fraction > 0.0) {
    if (cfg.heldout_fraction >= 1.0) throw_usage("heldout fraction must be < 1");
    std::size_t held = static_cast<std::size_t>(
        std::llround(cfg.heldout_fraction * static_cast<double>(train.size())));
    if (held > 0 && held < train.size()) {
      heldout.assign(train.end() - static_cast<std::ptrdiff_t>(held), train.end());
      train.erase(train.end() - static_cast<std::ptrdiff_t>(held), train.end());
    }
  }

  auto data = std::make_shared<ModelData>();
  data->lattice = lattice;
  data->counts = ingest(train, *lattice);
  for (const auto& [id, path] : cfg.count_overrides)
    data->counts[id] = load_count_override(path, *lattice, id);

  for (const auto& node : lattice->nodes()) {
    std::int64_t k = cfg.K;
    if (auto it = cfg.K_per_node.find(node.id); it != cfg.K_per_node.end()) k = it->second;
    data->discounts[node.id] =
        good_turing_discounts(count_of_counts(data->counts[node.id], k), k);
  }

  data->base_vocab = vocab_from_counts(*lattice, data->counts);
  if (cfg.task == TaskKind::ngram && cfg.oov == OovPolicy::map_to_unk)
    detail::inject_outcome_term(*lattice, data->base_vocab, Term(std::string(kUnkToken)));
  if (!cfg.vocab_file.empty()) {
    std::ifstream vf(cfg.vocab_file);
    if (!vf) throw_data("cannot open vocabulary file: " + cfg.vocab_file);
    std::string term;
    while (vf >> term)
      detail::inject_outcome_term(*lattice, data->base_vocab, Term(term));
  }

  TrainResult result;
  result.data = data;
  result.train_records = train.size();
  result.heldout_records = heldout.size();

  MixtureWeights current = MixtureWeights::from_lattice(*lattice);
  if (!heldout.empty()) {
    auto view = std::make_shared<Model>(data, current);
    ChildProbFn child_prob = [&view](NodeId node, const ConditionalQuery& q) {
      return view->prob(node, q, CombineMode::mixture);
    };
    NodeTrainedFn refresh = [&](NodeId node, const std::vector<double>& w) {
      current.per_node[node] = w;
      view = std::make_shared<Model>(data, current);
    };
    result.em = train_em(*lattice, heldout, child_prob, cfg.em, refresh);
    current = result.em.weights;
  } else {
    result.em.weights = current;
  }

  result.weights = current;
  result.model = std::make_shared<Model>(data, current);
  result.model->warm_alpha_cache();

  nlohmann::json meta;
  meta["task"] = to_string(cfg.task);
  if (cfg.task == TaskKind::ngram) {
    meta["n"] = cfg.ngram_n;
    meta["oov"] = cfg.oov == OovPolicy::map_to_unk ? "unk" : "error";
  }
  meta["provenance"] = {{"corpus_hash", hash_file(cfg.corpus)},
                        {"K", cfg.K},
                        {"seed", cfg.seed},
                        {"heldout", cfg.heldout_path.empty()
                                        ? nlohmann::json(cfg.heldout_fraction)
                                        : nlohmann::json(cfg.heldout_path)}};
  result.meta = std::move(meta);
  return result;
}

}  // namespace folm
