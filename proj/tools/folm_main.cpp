// folm: build, train, query and evaluate factored back-off language models.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <folm/backoff.hpp>
#include <folm/error.hpp>
#include <folm/lattice.hpp>
#include <folm/model_io.hpp>
#include <folm/pipeline.hpp>
#include <folm/tasks.hpp>

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// --------------------------------------------------------------------------
// query string parsing: "w=c | h1=b h2=a"
// --------------------------------------------------------------------------

folm::ConditionalQuery parse_query(const folm::SchemaPtr& schema, const std::string& text) {
  std::size_t bar = text.find(folm::kKeySep);
  if (bar == std::string::npos)
    folm::throw_data("query must look like \"outcome... | context...\"");
  auto parse_side = [&](std::string side) {
    std::vector<std::pair<std::size_t, folm::Term>> pairs;
    std::istringstream ss(side);
    std::string field;
    while (ss >> field) {
      std::size_t eq = field.find('=');
      if (eq == std::string::npos)
        folm::throw_data("expected slot=term, got \"" + field + "\"");
      auto idx = schema->index_of(field.substr(0, eq));
      if (!idx) folm::throw_data("unknown slot \"" + field.substr(0, eq) + "\"");
      pairs.emplace_back(*idx, folm::Term(field.substr(eq + 1)));
    }
    return pairs;
  };
  auto opairs = parse_side(text.substr(0, bar));
  auto cpairs = parse_side(text.substr(bar + 1));
  return folm::ConditionalQuery(folm::Event::from_pairs(schema, opairs),
                                folm::Event::from_pairs(schema, cpairs));
}

// --------------------------------------------------------------------------
// trace printing
// --------------------------------------------------------------------------

std::string shape_label(const folm::Lattice& lat, folm::NodeId id) {
  const auto& node = lat.node(id);
  std::string out;
  for (std::size_t s = 0; s < node.shapes.size(); ++s) {
    if (s) out += " ; ";
    out += folm::detail::slot_names(*lat.schema(), node.shapes[s].outcome);
    out += " | ";
    out += folm::detail::slot_names(*lat.schema(), node.shapes[s].context);
  }
  return out;
}

void print_trace(std::ostream& os, const folm::Lattice& lat, const folm::TraceNode& t,
                 int depth) {
  std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
  os << pad << "node " << t.node << " (" << shape_label(lat, t.node) << ")"
     << " C(o,c)=" << t.count_joint << " C(c)=" << t.count_context << " K=" << t.threshold
     << " branch=" << folm::to_string(t.branch);
  if (t.branch == folm::TraceNode::Branch::discounted) os << " beta=" << fmt(t.beta);
  if (t.has_alpha) {
    os << " alpha[" << folm::to_string(t.alpha.kase) << "]=" << fmt(t.alpha.value)
       << " (reserved=" << fmt(t.alpha.numerator)
       << ", unseen-mixture=" << fmt(t.alpha.denominator) << ")";
  }
  os << " value=" << fmt(t.value) << "\n";
  for (const auto& e : t.edges) {
    const auto& edge = lat.edge(e.edge_id);
    os << pad << "  edge " << e.edge_id << " -> node " << edge.child
       << " w=" << fmt(e.weight) << (edge.independence ? " [product]" : "")
       << " P=" << fmt(e.value) << "\n";
    for (const auto& c : e.children) print_trace(os, lat, c, depth + 2);
  }
}

// --------------------------------------------------------------------------
// subcommands
// --------------------------------------------------------------------------

struct TrainFlags {
  std::string config;
  std::string task, corpus, heldout_path, lattice_spec, vocab, oov, output;
  int n = -1;
  std::int64_t K = -1;
  double heldout_fraction = -1.0;
  int em_max_iters = -1;
  double em_tol = -1.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int run_train(const TrainFlags& f) {
  folm::TrainConfig cfg;
  if (!f.config.empty()) cfg = folm::load_train_config(f.config);
  if (!f.task.empty()) cfg.task = folm::task_from_string(f.task);
  if (!f.corpus.empty()) cfg.corpus = f.corpus;
  if (!f.heldout_path.empty()) cfg.heldout_path = f.heldout_path;
  if (!f.lattice_spec.empty()) cfg.lattice_spec = f.lattice_spec;
  if (!f.vocab.empty()) cfg.vocab_file = f.vocab;
  if (!f.output.empty()) cfg.output = f.output;
  if (f.n > 0) cfg.ngram_n = f.n;
  if (f.K > 0) cfg.K = f.K;
  if (f.heldout_fraction >= 0.0) cfg.heldout_fraction = f.heldout_fraction;
  if (f.em_max_iters >= 0) cfg.em.max_iters = f.em_max_iters;
  if (f.em_tol >= 0.0) cfg.em.tol = f.em_tol;
  if (f.seed_set) cfg.seed = f.seed;
  if (!f.oov.empty()) {
    if (f.oov == "unk") cfg.oov = folm::OovPolicy::map_to_unk;
    else if (f.oov == "error") cfg.oov = folm::OovPolicy::error;
    else folm::throw_usage("--oov must be unk or error");
  }
  if (cfg.output.empty()) folm::throw_usage("no output model path (--output)");

  folm::TrainResult result = folm::train_model(cfg);
  const folm::Lattice& lat = result.model->lattice();

  std::cout << "task = " << folm::to_string(cfg.task) << "\n";
  std::cout << "train records = " << result.train_records
            << ", held-out records = " << result.heldout_records << "\n";
  for (const auto& node : lat.nodes()) {
    if (lat.out_edges(node.id).empty()) continue;
    std::cout << "node " << node.id << " (" << shape_label(lat, node.id) << ") weights:";
    for (double w : result.weights.at(node.id)) std::cout << ' ' << fmt(w);
    std::cout << "\n";
  }
  for (const auto& trace : result.em.traces) {
    std::cout << "node " << trace.node << " EM items=" << trace.items;
    if (trace.fit.degenerate) std::cout << " (degenerate: prior weights kept)";
    std::cout << " log-likelihood:";
    for (double ll : trace.fit.log_likelihood) std::cout << ' ' << fmt(ll);
    std::cout << "\n";
  }
  for (const auto& msg : result.model->drain_log())
    std::cerr << "note: " << msg << "\n";

  folm::save_model(cfg.output, *result.data, result.weights, result.meta);
  std::cout << "model written to " << cfg.output << "\n";
  return 0;
}

int run_query(const std::string& model_path, const std::string& query_text,
              const std::string& mode_text, int node_id) {
  folm::StoredModel stored = folm::load_model(model_path);
  folm::Model model(stored.data, stored.weights);
  folm::CombineMode mode = folm::combine_mode_from_string(mode_text);
  folm::ConditionalQuery q = parse_query(model.schema(), query_text);
  folm::NodeId node = node_id >= 0 ? node_id : model.lattice().root();

  folm::TraceNode trace;
  double p = model.prob_traced(node, q, mode, trace);
  std::cout << "probability = " << fmt(p) << "\n";
  std::cout << "mode = " << folm::to_string(mode) << "\n";
  std::cout << "trace:\n";
  print_trace(std::cout, model.lattice(), trace, 1);
  return 0;
}

int run_eval(const std::string& model_path, const std::string& test_path,
             std::string task_text) {
  folm::StoredModel stored = folm::load_model(model_path);
  folm::Model model(stored.data, stored.weights);
  if (task_text.empty()) task_text = stored.meta.value("task", "");
  if (task_text.empty()) folm::throw_usage("no task given and none recorded in the model");
  folm::TaskKind task = folm::task_from_string(task_text);

  switch (task) {
    case folm::TaskKind::ngram: {
      int n = stored.meta.value("n", 0);
      if (n < 1) folm::throw_data("model does not record its n-gram order");
      folm::OovPolicy policy = stored.meta.value("oov", "unk") == std::string("error")
                                   ? folm::OovPolicy::error
                                   : folm::OovPolicy::map_to_unk;
      auto sentences = folm::load_sentences(test_path);
      double pp = folm::perplexity(model, sentences, n, policy);
      std::cout << "perplexity = " << fmt(pp) << "\n";
      return 0;
    }
    case folm::TaskKind::ppattach: {
      auto records = folm::load_pp_records(test_path);
      if (records.empty()) folm::throw_data(test_path + ": no records to evaluate");
      std::size_t hit_mix = 0, hit_max = 0, hit_cb = 0;
      for (const auto& r : records) {
        if (folm::classify_pp(model, r, folm::CombineMode::mixture).first == r.label)
          ++hit_mix;
        if (folm::classify_pp(model, r, folm::CombineMode::max_path).first == r.label)
          ++hit_max;
        if (folm::collins_brooks_baseline(model.lattice(), model.data().counts, r).first ==
            r.label)
          ++hit_cb;
      }
      double n = static_cast<double>(records.size());
      std::cout << "records = " << records.size() << "\n";
      std::cout << "accuracy mixture        = " << fmt4(hit_mix / n) << "\n";
      std::cout << "accuracy max-path       = " << fmt4(hit_max / n) << "\n";
      std::cout << "accuracy collins-brooks = " << fmt4(hit_cb / n) << "\n";
      return 0;
    }
    case folm::TaskKind::syncdep: {
      auto pairs = folm::load_dependency_pairs(test_path);
      if (pairs.empty()) folm::throw_data(test_path + ": no records to evaluate");
      double log_sum = 0.0;
      for (const auto& d : pairs) {
        double p = folm::sync_dependency_prob(model, d);
        if (!(p > 0.0)) folm::throw_data("zero probability for a dependency pair");
        log_sum += std::log(p);
      }
      std::cout << "records = " << pairs.size() << "\n";
      std::cout << "mean log-probability = "
                << fmt(log_sum / static_cast<double>(pairs.size())) << "\n";
      return 0;
    }
    case folm::TaskKind::custom:
      folm::throw_usage("eval supports the ngram, ppattach and syncdep tasks");
  }
  return 0;
}

int run_lattice_export(const std::string& model_path, const std::string& task_text, int n,
                       const std::string& spec_path, const std::string& out_path) {
  std::unique_ptr<folm::Lattice> lat;
  if (!model_path.empty()) {
    folm::StoredModel stored = folm::load_model(model_path);
    lat = std::make_unique<folm::Lattice>(*stored.data->lattice);
  } else if (!spec_path.empty()) {
    lat = std::make_unique<folm::Lattice>(folm::load_lattice_spec(spec_path));
  } else if (!task_text.empty()) {
    folm::TaskKind task = folm::task_from_string(task_text);
    switch (task) {
      case folm::TaskKind::ngram:
        lat = std::make_unique<folm::Lattice>(folm::build_ngram_chain(n));
        break;
      case folm::TaskKind::ppattach:
        lat = std::make_unique<folm::Lattice>(folm::build_pp_lattice());
        break;
      case folm::TaskKind::syncdep:
        lat = std::make_unique<folm::Lattice>(folm::build_syncdep_lattice());
        break;
      case folm::TaskKind::custom:
        folm::throw_usage("use --spec to export a custom lattice");
    }
  } else {
    folm::throw_usage("lattice export needs --model, --task or --spec");
  }

  folm::ValidationReport rep = folm::validate(*lat);
  if (!rep.ok()) folm::throw_data("invalid lattice:\n" + rep.to_string());
  std::string dot = folm::export_dot(*lat);
  if (out_path.empty()) {
    std::cout << dot;
  } else {
    std::ofstream out(out_path);
    if (!out) folm::throw_data("cannot write " + out_path);
    out << dot;
    std::cout << "lattice written to " << out_path << "\n";
  }
  return 0;
}

int run_gen_synth(const std::string& task_text, std::uint64_t seed, std::size_t size,
                  const std::string& out_path) {
  folm::TaskKind task = folm::task_from_string(task_text);
  if (size == 0) folm::throw_usage("--size must be positive");
  if (task == folm::TaskKind::ppattach) {
    auto records = folm::gen_pp_synthetic(seed, size);
    if (out_path.empty()) {
      for (const auto& r : records)
        std::cout << r.v.str() << ' ' << r.n1.str() << ' ' << r.p.str() << ' '
                  << r.n2.str() << ' ' << r.label << '\n';
    } else {
      folm::write_pp_records(out_path, records);
      std::cout << records.size() << " records written to " << out_path << "\n";
    }
    return 0;
  }
  if (task == folm::TaskKind::syncdep) {
    auto pairs = folm::gen_syncdep_synthetic(seed, size);
    if (out_path.empty()) {
      for (const auto& d : pairs)
        std::cout << d.parent1.str() << '\t' << d.child1.str() << '\t' << d.parent2.str()
                  << '\t' << d.child2.str() << '\n';
    } else {
      folm::write_dependency_pairs(out_path, pairs);
      std::cout << pairs.size() << " records written to " << out_path << "\n";
    }
    return 0;
  }
  folm::throw_usage("gen-synth supports the ppattach and syncdep tasks");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"factored back-off language modeling toolkit"};
  app.require_subcommand(1);

  TrainFlags tf;
  CLI::App* train = app.add_subcommand("train", "build and train a model");
  train->add_option("config", tf.config, "JSON config file");
  train->add_option("--task", tf.task, "ngram | ppattach | syncdep | custom-lattice");
  train->add_option("--corpus", tf.corpus, "training corpus");
  train->add_option("--n", tf.n, "n-gram order");
  train->add_option("--K", tf.K, "discount frequency threshold");
  train->add_option("--heldout-fraction", tf.heldout_fraction,
                    "tail fraction reserved for EM");
  train->add_option("--heldout-path", tf.heldout_path, "explicit held-out file");
  train->add_option("--em-max-iters", tf.em_max_iters, "EM iteration cap");
  train->add_option("--em-tol", tf.em_tol, "EM log-likelihood tolerance");
  train->add_option("--lattice-spec", tf.lattice_spec, "custom lattice JSON");
  train->add_option("--vocab", tf.vocab, "declared outcome vocabulary file");
  train->add_option("--oov", tf.oov, "unk | error");
  train->add_option("--seed", tf.seed, "seed for synthetic generators")
      ->each([&tf](const std::string&) { tf.seed_set = true; });
  train->add_option("--output,-o", tf.output, "model file to write");

  std::string q_model, q_text, q_mode = "mixture";
  int q_node = -1;
  CLI::App* query = app.add_subcommand("query", "score one conditional query");
  query->add_option("--model,-m", q_model, "model file")->required();
  query->add_option("--query,-q", q_text, "e.g. \"w=c | h1=b h2=a\"")->required();
  query->add_option("--mode", q_mode, "mixture | max-path");
  query->add_option("--node", q_node, "lattice node to query (default: root)");

  std::string e_model, e_test, e_task;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a model on a test set");
  eval->add_option("--model,-m", e_model, "model file")->required();
  eval->add_option("--test,-t", e_test, "test file")->required();
  eval->add_option("--task", e_task, "override the task recorded in the model");

  CLI::App* lattice = app.add_subcommand("lattice", "lattice utilities");
  lattice->require_subcommand(1);
  CLI::App* lexport = lattice->add_subcommand("export", "render a lattice");
  std::string l_model, l_task, l_spec, l_out;
  int l_n = 3;
  bool l_dot = false;
  lexport->add_flag("--dot", l_dot, "emit DOT graph text");
  lexport->add_option("--model,-m", l_model, "take the lattice from a model file");
  lexport->add_option("--task", l_task, "build a task lattice");
  lexport->add_option("--n", l_n, "n-gram order for --task ngram");
  lexport->add_option("--spec", l_spec, "lattice spec JSON");
  lexport->add_option("--output,-o", l_out, "write here instead of stdout");

  std::string g_task;
  std::uint64_t g_seed = 1;
  std::size_t g_size = 0;
  std::string g_out;
  CLI::App* gen = app.add_subcommand("gen-synth", "generate synthetic task data");
  gen->add_option("--task", g_task, "ppattach | syncdep")->required();
  gen->add_option("--seed", g_seed, "generator seed");
  gen->add_option("--size", g_size, "number of records")->required();
  gen->add_option("--output,-o", g_out, "write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return run_train(tf);
    if (query->parsed()) return run_query(q_model, q_text, q_mode, q_node);
    if (eval->parsed()) return run_eval(e_model, e_test, e_task);
    if (lattice->parsed()) {
      if (!l_dot) folm::throw_usage("lattice export currently requires --dot");
      return run_lattice_export(l_model, l_task, l_n, l_spec, l_out);
    }
    if (gen->parsed()) return run_gen_synth(g_task, g_seed, g_size, g_out);
  } catch (const folm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
