#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <folm/counts.hpp>
#include <folm/error.hpp>
#include <folm/estimation.hpp>
#include <folm/event.hpp>
#include <folm/lattice.hpp>
#include <folm/mixture.hpp>

namespace folm {

// The back-off weight for one (node, context), with the two boundary cases
// the plain ratio cannot express:
//  - normal:       alpha = reserved mass / unseen mixture mass
//  - redistribute: the mixture left (almost) nothing for unseen outcomes but
//                  mass was reserved; each unseen outcome gets `value`
//  - renormalize:  the context has no unseen outcome at all, so the seen
//                  branch values are scaled by `value` instead
struct AlphaInfo {
  enum class Case { normal, redistribute, renormalize };
  Case kase = Case::normal;
  double value = 1.0;
  double numerator = 1.0;    // 1 - sum of seen back-off probabilities
  double denominator = 1.0;  // 1 - sum of seen mixture values (normal case)
};

inline std::string to_string(AlphaInfo::Case c) {
  switch (c) {
    case AlphaInfo::Case::normal: return "normal";
    case AlphaInfo::Case::redistribute: return "redistribute";
    case AlphaInfo::Case::renormalize: return "renormalize";
  }
  return "?";
}

struct EvalStats {
  std::size_t evaluations = 0;  // distinct (node, query) visits, memo misses
};

struct TraceNode;

struct TraceEdge {
  std::size_t edge_id = 0;
  double weight = 0.0;
  double value = 0.0;
  std::vector<TraceNode> children;
};

struct TraceNode {
  enum class Branch { mle, discounted, backoff, leaf, memo };
  NodeId node = 0;
  std::string okey, ckey;
  Branch branch = Branch::mle;
  std::int64_t count_joint = 0;
  std::int64_t count_context = 0;
  std::int64_t threshold = 0;
  double beta = 1.0;
  bool has_alpha = false;
  AlphaInfo alpha;
  double value = 0.0;
  std::vector<TraceEdge> edges;
};

inline std::string to_string(TraceNode::Branch b) {
  switch (b) {
    case TraceNode::Branch::mle: return "MLE";
    case TraceNode::Branch::discounted: return "DISCOUNTED";
    case TraceNode::Branch::backoff: return "ALPHA*MIXTURE";
    case TraceNode::Branch::leaf: return "ALPHA*UNIFORM";
    case TraceNode::Branch::memo: return "MEMOIZED";
  }
  return "?";
}

// Everything a finalized model owns besides the trained weights. Shared so
// weight variants during training do not copy the tables.
struct ModelData {
  std::shared_ptr<const Lattice> lattice;
  NodeCounts counts;
  std::map<NodeId, DiscountTable> discounts;
  // node -> shape -> sorted outcome keys (observed support plus injections)
  std::map<NodeId, std::map<int, std::vector<std::string>>> base_vocab;
};

inline std::map<NodeId, std::map<int, std::vector<std::string>>> vocab_from_counts(
    const Lattice& lat, const NodeCounts& counts) {
  std::map<NodeId, std::map<int, std::vector<std::string>>> vocab;
  for (const auto& node : lat.nodes()) {
    auto it = counts.find(node.id);
    for (int s = 0; s < static_cast<int>(node.shapes.size()); ++s) {
      std::vector<std::string>& keys = vocab[node.id][s];
      if (it != counts.end()) {
        const auto& sup = it->second.support(s);
        keys.assign(sup.begin(), sup.end());
      }
    }
  }
  return vocab;
}

// The immutable query engine: lattice + counts + discounts + trained weights.
// Thread-safe for concurrent queries; the alpha cache inserts once under a
// lock and is computed outside it.
class Model {
 public:
  Model(std::shared_ptr<const ModelData> data, MixtureWeights weights)
      : data_(std::move(data)), weights_(std::move(weights)) {
    ValidationReport rep = folm::validate(*data_->lattice);
    if (!rep.ok()) throw_data("invalid lattice:\n" + rep.to_string());
    check_weights();
    build_expanded_vocab();
  }

  const Lattice& lattice() const { return *data_->lattice; }
  const SchemaPtr& schema() const { return data_->lattice->schema(); }
  const ModelData& data() const { return *data_; }
  const MixtureWeights& weights() const { return weights_; }

  const CountTable& counts(NodeId id) const {
    auto it = data_->counts.find(id);
    if (it == data_->counts.end()) throw_internal("no count table for node");
    return it->second;
  }
  const DiscountTable& discounts(NodeId id) const {
    auto it = data_->discounts.find(id);
    if (it == data_->discounts.end()) throw_internal("no discount table for node");
    return it->second;
  }

  // Outcome vocabulary of one node-set event. For events factorized by an
  // independence edge this is the product of the child vocabularies, so the
  // mixture has an outcome space it can be normalized over.
  const std::vector<std::string>& outcome_vocab(NodeId id, int shape) const {
    return expanded_vocab_.at({id, shape});
  }

  double prob(const ConditionalQuery& q, CombineMode mode = CombineMode::mixture) const {
    return prob(data_->lattice->root(), q, mode);
  }

  double prob(NodeId node, const ConditionalQuery& q,
              CombineMode mode = CombineMode::mixture, EvalStats* stats = nullptr) const {
    EvalCtx ctx{mode, {}, stats};
    return prob_impl(node, q, ctx, nullptr);
  }

  double prob_traced(NodeId node, const ConditionalQuery& q, CombineMode mode,
                     TraceNode& trace, EvalStats* stats = nullptr) const {
    EvalCtx ctx{mode, {}, stats};
    return prob_impl(node, q, ctx, &trace);
  }

  // The back-off weight of Formula form alpha(E2): cached per
  // (node, context, mode); use_cache=false recomputes from scratch and
  // leaves the cache untouched.
  AlphaInfo alpha(NodeId node, const Event& context,
                  CombineMode mode = CombineMode::mixture, bool use_cache = true) const {
    int shape = shape_for_context(node, context);
    if (!use_cache) {
      EvalCtx ctx{mode, {}, nullptr};
      return compute_alpha(node, shape, context, ctx);
    }
    EvalCtx ctx{mode, {}, nullptr};
    return alpha_entry(node, shape, context, ctx);
  }

  // prob for every outcome in the node's vocabulary given the context.
  std::map<std::string, double> full_distribution(
      NodeId node, const Event& context, CombineMode mode = CombineMode::mixture) const {
    int shape = shape_for_context(node, context);
    std::map<std::string, double> dist;
    for (const std::string& okey : outcome_vocab(node, shape)) {
      ConditionalQuery q(event_from_key(schema(), okey), context);
      dist.emplace(okey, prob(node, q, mode));
    }
    return dist;
  }

  // Precomputes alpha for every context observed in training.
  void warm_alpha_cache(CombineMode mode = CombineMode::mixture) const {
    for (const auto& node : lattice().nodes()) {
      const CountTable& ct = counts(node.id);
      for (const auto& [ckey, cc] : ct.marginals()) {
        Event context = event_from_key(schema(), ckey);
        SlotSet assigned = context.assigned_slots();
        for (int s = 0; s < static_cast<int>(node.shapes.size()); ++s) {
          if (node.shapes[s].context != assigned) continue;
          EvalCtx ctx{mode, {}, nullptr};
          (void)alpha_entry(node.id, s, context, ctx);
        }
      }
    }
  }

  std::vector<std::string> drain_log() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<std::string> out = std::move(log_);
    log_.clear();
    return out;
  }

 private:
  struct EvalCtx {
    CombineMode mode;
    std::map<std::tuple<NodeId, std::string, std::string>, double> memo;
    EvalStats* stats;
  };

  void check_weights() const {
    for (const auto& node : lattice().nodes()) {
      const auto& out = lattice().out_edges(node.id);
      if (out.empty()) continue;
      const auto& w = weights_.at(node.id);
      if (w.size() != out.size()) throw_data("mixture weights misaligned with edges");
      std::map<int, double> sums;
      for (std::size_t p = 0; p < out.size(); ++p)
        sums[lattice().edge(out[p]).parent_shape] += w[p];
      for (const auto& [shape, sum] : sums)
        if (std::abs(sum - 1.0) > 1e-9)
          throw_data("mixture weights of node " + std::to_string(node.id) +
                     " sum to " + std::to_string(sum));
    }
  }

  // Child-product expansion, children before parents.
  void build_expanded_vocab() {
    std::vector<NodeId> order = lattice().topological_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const LatticeNode& node = lattice().node(*it);
      for (int s = 0; s < static_cast<int>(node.shapes.size()); ++s) {
        std::set<std::string> keys;
        auto base_node = data_->base_vocab.find(node.id);
        if (base_node != data_->base_vocab.end()) {
          auto base_shape = base_node->second.find(s);
          if (base_shape != base_node->second.end())
            keys.insert(base_shape->second.begin(), base_shape->second.end());
        }
        for (std::size_t p : applicable_out_positions(lattice(), node.id, s)) {
          const FactorizationEdge& e = lattice().edge(lattice().out_edges(node.id)[p]);
          if (!e.independence) continue;
          expand_product(e, node.shapes[s], keys);
        }
        expanded_vocab_[{node.id, s}] =
            std::vector<std::string>(keys.begin(), keys.end());
      }
    }
  }

  void expand_product(const FactorizationEdge& e, const EventShape& pshape,
                      std::set<std::string>& keys) {
    // the sub-event outcomes must partition the parent outcome
    SlotSet covered;
    std::vector<std::pair<NodeId, int>> parts;
    for (const auto& c : e.spec.children) {
      EventShape r = detail::resolve_child_shape(c, pshape);
      if (!covered.disjoint_with(r.outcome)) return;
      covered = covered.unite(r.outcome);
      const LatticeNode& child = lattice().node(e.child);
      int cs = -1;
      for (std::size_t i = 0; i < child.shapes.size(); ++i)
        if (child.shapes[i] == r) cs = static_cast<int>(i);
      if (cs < 0) return;
      parts.emplace_back(e.child, cs);
    }
    if (!(covered == pshape.outcome)) return;

    std::vector<Event> combos{Event(schema())};
    for (const auto& [child_id, cs] : parts) {
      const auto& child_keys = expanded_vocab_.at({child_id, cs});
      if (child_keys.empty()) return;
      std::vector<Event> next;
      next.reserve(combos.size() * child_keys.size());
      for (const Event& base : combos)
        for (const std::string& key : child_keys)
          next.push_back(base.merged_with(event_from_key(schema(), key)));
      combos = std::move(next);
    }
    for (const Event& e2 : combos) keys.insert(canonical_key(e2));
  }

  int shape_for_context(NodeId id, const Event& context) const {
    const LatticeNode& node = lattice().node(id);
    SlotSet assigned = context.assigned_slots();
    int found = -1;
    for (std::size_t s = 0; s < node.shapes.size(); ++s) {
      if (node.shapes[s].context == assigned) {
        if (found >= 0)
          throw_data("context matches several event shapes of node " + std::to_string(id));
        found = static_cast<int>(s);
      }
    }
    if (found < 0)
      throw_data("context does not match any event shape of node " + std::to_string(id));
    return found;
  }

  // How many of the context's seen outcomes belong to this shape.
  std::size_t seen_of_shape(const CountTable& ct, int shape, const std::string& ckey) const {
    const auto* seen = ct.seen_outcomes(ckey);
    if (!seen) return 0;
    const auto& sup = ct.support(shape);
    std::size_t n = 0;
    for (const auto& [okey, c] : *seen)
      if (sup.count(okey)) ++n;
    return n;
  }

  double prob_impl(NodeId id, const ConditionalQuery& q, EvalCtx& ctx,
                   TraceNode* trace) const {
    const std::string okey = canonical_key(q.outcome);
    const std::string ckey = canonical_key(q.context);
    if (trace) {
      trace->node = id;
      trace->okey = okey;
      trace->ckey = ckey;
    }
    auto memo_key = std::make_tuple(id, okey, ckey);
    if (auto it = ctx.memo.find(memo_key); it != ctx.memo.end()) {
      if (trace) {
        trace->branch = TraceNode::Branch::memo;
        trace->value = it->second;
      }
      return it->second;
    }
    if (ctx.stats) ctx.stats->evaluations++;

    const LatticeNode& node = lattice().node(id);
    int shape = shape_index_of(node, q);
    const CountTable& ct = counts(id);
    const DiscountTable& dt = discounts(id);
    const std::int64_t cj = ct.joint(okey, ckey);
    const std::int64_t cc = ct.marginal(ckey);
    if (trace) {
      trace->count_joint = cj;
      trace->count_context = cc;
      trace->threshold = dt.K;
    }

    double value = 0.0;
    if (cj > 0) {
      double raw = seen_prob(cj, cc, dt);
      if (trace) {
        trace->branch = cj > dt.K ? TraceNode::Branch::mle : TraceNode::Branch::discounted;
        if (cj <= dt.K) trace->beta = dt.discount(cj);
      }
      const std::size_t vocab_size = outcome_vocab(id, shape).size();
      if (vocab_size > 0 && seen_of_shape(ct, shape, ckey) == vocab_size) {
        AlphaInfo a = alpha_entry(id, shape, q.context, ctx);
        value = raw * a.value;  // renormalize: no unseen outcome exists
        if (trace) {
          trace->has_alpha = true;
          trace->alpha = a;
        }
      } else {
        value = raw;
      }
    } else {
      AlphaInfo a = alpha_entry(id, shape, q.context, ctx);
      if (trace) {
        trace->has_alpha = true;
        trace->alpha = a;
      }
      switch (a.kase) {
        case AlphaInfo::Case::renormalize:
          value = 0.0;  // vocabulary fully covered; nothing left to assign
          if (trace) trace->branch = TraceNode::Branch::backoff;
          break;
        case AlphaInfo::Case::redistribute:
          value = a.value;
          if (trace) trace->branch = TraceNode::Branch::backoff;
          break;
        case AlphaInfo::Case::normal: {
          std::vector<std::size_t> pos = applicable_out_positions(lattice(), id, shape);
          if (pos.empty()) {
            const std::size_t vocab_size = outcome_vocab(id, shape).size();
            if (vocab_size == 0)
              throw_data("node " + std::to_string(id) +
                         " is a leaf with an empty outcome vocabulary; cannot score");
            value = a.value / static_cast<double>(vocab_size);
            if (trace) trace->branch = TraceNode::Branch::leaf;
          } else {
            double mix = mixture_value(id, shape, q, ctx, trace);
            value = a.value * mix;
            if (trace) trace->branch = TraceNode::Branch::backoff;
          }
          break;
        }
      }
    }

    if (trace) trace->value = value;
    ctx.memo.emplace(std::move(memo_key), value);
    return value;
  }

  // The conditional mixture over the node's factorization manners, child
  // probabilities given by the recursion itself.
  double mixture_value(NodeId id, int shape, const ConditionalQuery& q, EvalCtx& ctx,
                       TraceNode* trace) const {
    std::vector<std::size_t> pos = applicable_out_positions(lattice(), id, shape);
    const auto& out = lattice().out_edges(id);
    const auto& w = weights_.at(id);
    std::vector<double> values, wsub;
    values.reserve(pos.size());
    wsub.reserve(pos.size());
    for (std::size_t p : pos) {
      TraceEdge te;
      te.edge_id = out[p];
      te.weight = w[p];
      ChildProbFn recurse = [&](NodeId child, const ConditionalQuery& cq) {
        TraceNode* child_trace = nullptr;
        if (trace) {
          te.children.emplace_back();
          child_trace = &te.children.back();
        }
        return prob_impl(child, cq, ctx, child_trace);
      };
      double v = edge_value(lattice(), out[p], q, recurse);
      te.value = v;
      values.push_back(v);
      wsub.push_back(w[p]);
      if (trace) trace->edges.push_back(std::move(te));
    }
    return combine_values(values, wsub, ctx.mode);
  }

  AlphaInfo alpha_entry(NodeId id, int shape, const Event& context, EvalCtx& ctx) const {
    const std::string ckey = canonical_key(context);
    auto key = std::make_tuple(id, shape, ckey, static_cast<int>(ctx.mode));
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = alpha_cache_.find(key);
      if (it != alpha_cache_.end()) return it->second;
    }
    AlphaInfo info = compute_alpha(id, shape, context, ctx);
    std::lock_guard<std::mutex> lock(mu_);
    auto [it, fresh] = alpha_cache_.emplace(std::move(key), info);
    return it->second;  // first insertion wins; recomputation is bit-identical
  }

  AlphaInfo compute_alpha(NodeId id, int shape, const Event& context, EvalCtx& ctx) const {
    const std::string ckey = canonical_key(context);
    const CountTable& ct = counts(id);
    const DiscountTable& dt = discounts(id);
    const auto& sup = ct.support(shape);

    std::vector<std::pair<std::string, std::int64_t>> seen;
    if (const auto* row = ct.seen_outcomes(ckey)) {
      for (const auto& [okey, c] : *row)
        if (sup.count(okey)) seen.emplace_back(okey, c);
    }
    const std::int64_t cc = ct.marginal(ckey);
    const std::size_t vocab_size = outcome_vocab(id, shape).size();

    double raw_sum = 0.0;
    for (const auto& [okey, cj] : seen) raw_sum += seen_prob(cj, cc, dt);

    AlphaInfo info;
    if (!seen.empty() && seen.size() == vocab_size) {
      info.kase = AlphaInfo::Case::renormalize;
      info.numerator = 1.0 - raw_sum;
      info.denominator = 0.0;
      info.value = 1.0 / raw_sum;
      return info;
    }

    double numerator = 1.0 - raw_sum;
    if (numerator < -1e-9)
      throw_internal("normalization defect at node " + std::to_string(id) +
                     " context " + ckey + ": seen probability mass " +
                     std::to_string(raw_sum) + " exceeds 1");
    if (numerator < 0.0) numerator = 0.0;

    double denominator = 1.0;
    std::vector<std::size_t> pos = applicable_out_positions(lattice(), id, shape);
    if (pos.empty()) {
      if (vocab_size > 0)
        denominator = 1.0 - static_cast<double>(seen.size()) /
                                static_cast<double>(vocab_size);
    } else {
      double mix_sum = 0.0;
      for (const auto& [okey, cj] : seen) {
        ConditionalQuery q(event_from_key(schema(), okey), context);
        mix_sum += mixture_value(id, shape, q, ctx, nullptr);
      }
      denominator = 1.0 - mix_sum;
    }

    info.numerator = numerator;
    info.denominator = denominator;
    if (denominator < -1e-9)
      throw_internal("normalization defect at node " + std::to_string(id) +
                     " context " + ckey + ": reserved=" + std::to_string(numerator) +
                     " unseen-mixture=" + std::to_string(denominator) +
                     " (child model over-assigns seen outcomes)");
    if (denominator <= 1e-9) {
      if (numerator > 1e-9) {
        // Mixture is singular here; spread the reserved mass uniformly.
        const std::size_t unseen = vocab_size - seen.size();
        info.kase = AlphaInfo::Case::redistribute;
        info.value = numerator / static_cast<double>(unseen);
        {
          std::lock_guard<std::mutex> lock(mu_);
          log_.push_back("node " + std::to_string(id) + " context " + ckey +
                         ": mixture assigns all mass to seen outcomes; reserved mass "
                         "redistributed uniformly over " + std::to_string(unseen) +
                         " unseen outcomes");
        }
      } else {
        info.kase = AlphaInfo::Case::normal;
        info.value = 0.0;
      }
      return info;
    }
    info.kase = AlphaInfo::Case::normal;
    info.value = numerator / denominator;
    if (info.value < 0.0) info.value = 0.0;
    return info;
  }

  std::shared_ptr<const ModelData> data_;
  MixtureWeights weights_;
  std::map<std::pair<NodeId, int>, std::vector<std::string>> expanded_vocab_;
  mutable std::mutex mu_;
  mutable std::map<std::tuple<NodeId, int, std::string, int>, AlphaInfo> alpha_cache_;
  mutable std::vector<std::string> log_;
};

}  // namespace folm
