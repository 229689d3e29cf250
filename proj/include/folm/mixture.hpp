#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <folm/counts.hpp>
#include <folm/error.hpp>
#include <folm/event.hpp>
#include <folm/lattice.hpp>

namespace folm {

// How parallel factorization paths combine: the trained mixture (default) or
// picking the best path, kept only for comparison with max-value selection.
enum class CombineMode { mixture, max_path };

inline CombineMode combine_mode_from_string(const std::string& s) {
  if (s == "mixture") return CombineMode::mixture;
  if (s == "max-path") return CombineMode::max_path;
  throw_usage("unknown combine mode: " + s);
}

inline std::string to_string(CombineMode m) {
  return m == CombineMode::mixture ? "mixture" : "max-path";
}

// Edge priors Pr(Phi_i), one vector per parent node aligned with its
// out-edge order; within each parent-shape group the weights sum to 1.
struct MixtureWeights {
  std::map<NodeId, std::vector<double>> per_node;

  static MixtureWeights from_lattice(const Lattice& lat) {
    MixtureWeights w;
    for (const auto& n : lat.nodes()) {
      const auto& out = lat.out_edges(n.id);
      if (out.empty()) continue;
      std::vector<double> v;
      v.reserve(out.size());
      for (std::size_t e : out) v.push_back(lat.edge(e).weight);
      w.per_node.emplace(n.id, std::move(v));
    }
    return w;
  }

  const std::vector<double>& at(NodeId id) const {
    auto it = per_node.find(id);
    if (it == per_node.end())
      throw_internal("no mixture weights for node " + std::to_string(id));
    return it->second;
  }
};

using ChildProbFn = std::function<double(NodeId child, const ConditionalQuery&)>;

// Index of the node-set event the query instantiates.
inline int shape_index_of(const LatticeNode& node, const ConditionalQuery& q) {
  SlotSet o = q.outcome.assigned_slots();
  SlotSet c = q.context.assigned_slots();
  for (std::size_t s = 0; s < node.shapes.size(); ++s) {
    if (node.shapes[s].outcome == o && node.shapes[s].context == c)
      return static_cast<int>(s);
  }
  throw_data("query does not match any event shape of node " + std::to_string(node.id));
}

// Positions (into the node's out-edge list) of the edges factorizing the
// given event of the node set.
inline std::vector<std::size_t> applicable_out_positions(const Lattice& lat, NodeId node,
                                                         int shape) {
  std::vector<std::size_t> pos;
  const auto& out = lat.out_edges(node);
  for (std::size_t p = 0; p < out.size(); ++p)
    if (lat.edge(out[p]).parent_shape == shape) pos.push_back(p);
  return pos;
}

// P_i of one factorization manner: the product of the child sub-event
// probabilities when the edge assumes independence, otherwise the single
// child's joint probability.
inline double edge_value(const Lattice& lat, std::size_t edge_id,
                         const ConditionalQuery& q, const ChildProbFn& child_prob) {
  const FactorizationEdge& e = lat.edge(edge_id);
  std::vector<ConditionalQuery> children = apply_factorization(q, e.spec);
  if (e.independence) {
    double p = 1.0;
    for (const auto& cq : children) p *= child_prob(e.child, cq);
    return p;
  }
  return child_prob(e.child, children.front());
}

inline double combine_values(const std::vector<double>& values,
                             const std::vector<double>& weights, CombineMode mode) {
  if (values.empty()) throw_internal("no factorization values to combine");
  if (mode == CombineMode::max_path)
    return *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) sum += weights[i] * values[i];
  return sum;
}

// The mixture of factored models at one lattice node: sum over factorization
// manners of Pr(Phi_i) times the manner's value, conditioning each manner on
// its own projected context. max-path mode ignores the weights.
inline double evaluate(const Lattice& lat, NodeId node, const ConditionalQuery& q,
                       const ChildProbFn& child_prob, const MixtureWeights& weights,
                       CombineMode mode) {
  int shape = shape_index_of(lat.node(node), q);
  std::vector<std::size_t> pos = applicable_out_positions(lat, node, shape);
  if (pos.empty())
    throw_internal("node " + std::to_string(node) +
                   " has no factorization edge for this event (leaf)");
  const auto& out = lat.out_edges(node);
  const auto& w = weights.at(node);
  std::vector<double> values, wsub;
  values.reserve(pos.size());
  wsub.reserve(pos.size());
  for (std::size_t p : pos) {
    values.push_back(edge_value(lat, out[p], q, child_prob));
    wsub.push_back(w[p]);
  }
  return combine_values(values, wsub, mode);
}

// ---------------------------------------------------------------------------
// EM weight training
// ---------------------------------------------------------------------------

struct EmOptions {
  int max_iters = 100;
  double tol = 1e-6;  // stop when held-out log-likelihood gains less than this
};

struct EmFitResult {
  std::vector<double> weights;
  std::vector<double> log_likelihood;  // one entry per evaluated iterate
  bool degenerate = false;             // every item had zero mass; prior kept
};

// EM for fixed mixture components: items carry per-edge values P_i(x) and a
// multiplicity. Items whose components are all zero cannot be attributed and
// are excluded from both the responsibilities and the likelihood.
inline EmFitResult em_fit(const std::vector<std::vector<double>>& components,
                          const std::vector<std::int64_t>& multiplicity,
                          std::vector<double> init, const EmOptions& opt = {}) {
  EmFitResult res;
  res.weights = std::move(init);
  const std::size_t k = res.weights.size();

  std::vector<std::size_t> usable;
  std::int64_t total_mult = 0;
  for (std::size_t x = 0; x < components.size(); ++x) {
    if (components[x].size() != k) throw_internal("component row width mismatch");
    bool any = false;
    for (double v : components[x]) any |= v > 0.0;
    if (any) {
      usable.push_back(x);
      total_mult += multiplicity[x];
    }
  }
  if (usable.empty() || k < 2) {
    res.degenerate = usable.empty();
    return res;
  }

  auto loglik = [&](const std::vector<double>& w) {
    double ll = 0.0;
    for (std::size_t x : usable) {
      double denom = 0.0;
      for (std::size_t i = 0; i < k; ++i) denom += w[i] * components[x][i];
      if (denom > 0.0) ll += static_cast<double>(multiplicity[x]) * std::log(denom);
    }
    return ll;
  };

  double ll = loglik(res.weights);
  res.log_likelihood.push_back(ll);
  for (int it = 0; it < opt.max_iters; ++it) {
    std::vector<double> resp(k, 0.0);
    double resp_total = 0.0;
    for (std::size_t x : usable) {
      double denom = 0.0;
      for (std::size_t i = 0; i < k; ++i) denom += res.weights[i] * components[x][i];
      if (denom <= 0.0) continue;
      const double m = static_cast<double>(multiplicity[x]);
      for (std::size_t i = 0; i < k; ++i)
        resp[i] += m * res.weights[i] * components[x][i] / denom;
      resp_total += m;
    }
    if (resp_total <= 0.0) break;
    for (std::size_t i = 0; i < k; ++i) res.weights[i] = resp[i] / resp_total;
    double nll = loglik(res.weights);
    res.log_likelihood.push_back(nll);
    if (nll - ll < opt.tol) break;
    ll = nll;
  }
  return res;
}

// Observations reserved from training; the CLI split keeps them disjoint
// from the counting corpus.
using HeldOutSet = std::vector<Observation>;

struct EmNodeTrace {
  NodeId node = 0;
  int shape = 0;
  std::int64_t items = 0;
  EmFitResult fit;
};

struct EmReport {
  MixtureWeights weights;
  std::vector<EmNodeTrace> traces;
};

using NodeTrainedFn = std::function<void(NodeId, const std::vector<double>&)>;

// Trains the edge priors per parent node on held-out observations, walking
// the lattice children-first so every child model is already final when its
// parents' components are computed. child_prob must reflect the weights
// announced through on_node_trained.
inline EmReport train_em(const Lattice& lat, const std::vector<Observation>& heldout,
                         const ChildProbFn& child_prob, const EmOptions& opt = {},
                         const NodeTrainedFn& on_node_trained = {}) {
  EmReport report;
  report.weights = MixtureWeights::from_lattice(lat);

  std::vector<NodeId> order = lat.topological_order();
  std::reverse(order.begin(), order.end());

  for (NodeId id : order) {
    const auto& out = lat.out_edges(id);
    if (out.empty()) continue;
    const LatticeNode& node = lat.node(id);
    bool touched = false;
    for (int shape = 0; shape < static_cast<int>(node.shapes.size()); ++shape) {
      std::vector<std::size_t> pos = applicable_out_positions(lat, id, shape);
      if (pos.size() < 2) continue;

      std::vector<std::vector<double>> components;
      std::vector<std::int64_t> mult;
      const EventShape& es = node.shapes[shape];
      for (const Observation& obs : heldout) {
        ConditionalQuery q(obs.query.outcome.project(es.outcome),
                           obs.query.context.project(es.context));
        std::vector<double> row;
        row.reserve(pos.size());
        for (std::size_t p : pos)
          row.push_back(edge_value(lat, out[p], q, child_prob));
        components.push_back(std::move(row));
        mult.push_back(obs.multiplicity);
      }

      std::vector<double> init;
      for (std::size_t p : pos) init.push_back(report.weights.at(id)[p]);
      EmFitResult fit = em_fit(components, mult, std::move(init), opt);

      auto& w = report.weights.per_node[id];
      for (std::size_t i = 0; i < pos.size(); ++i) w[pos[i]] = fit.weights[i];
      report.traces.push_back(
          EmNodeTrace{id, shape, static_cast<std::int64_t>(components.size()), std::move(fit)});
      touched = true;
    }
    if (touched && on_node_trained) on_node_trained(id, report.weights.at(id));
  }
  return report;
}

}  // namespace folm
