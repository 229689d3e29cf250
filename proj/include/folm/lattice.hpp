#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <folm/error.hpp>
#include <folm/event.hpp>

namespace folm {

using NodeId = int;

// One "dotted oval": an (outcome, context) slot-subset pair. A node holds a
// set of these; most nodes hold exactly one, synchronous children hold one
// per sub-event.
struct EventShape {
  SlotSet outcome;
  SlotSet context;

  friend bool operator==(const EventShape&, const EventShape&) = default;
  friend auto operator<=>(const EventShape&, const EventShape&) = default;
};

struct LatticeNode {
  NodeId id = 0;
  std::vector<EventShape> shapes;
  bool is_root = false;
};

// A factorization manner from one event of the parent set to the child set.
// weight is the prior of choosing this manner; independence means the child
// sub-events multiply instead of being scored jointly.
struct FactorizationEdge {
  NodeId parent = 0;
  NodeId child = 0;
  int parent_shape = 0;
  ProjectionSpec spec;
  double weight = 1.0;
  bool independence = false;
};

namespace detail {
// Resolve a spec child descriptor against the parent shape it factorizes:
// an empty outcome subset inherits the parent outcome.
inline EventShape resolve_child_shape(const ProjectionSpec::Child& c,
                                      const EventShape& parent) {
  return EventShape{c.outcome.empty() ? parent.outcome : c.outcome, c.context};
}
}  // namespace detail

// The backing-off lattice: a DAG of nodes connected by factorization edges.
// Construction performs only structural indexing; semantic checks live in
// validate() so ill-formed lattices can be inspected rather than rejected.
class Lattice {
 public:
  Lattice(SchemaPtr schema, std::vector<LatticeNode> nodes,
          std::vector<FactorizationEdge> edges)
      : schema_(std::move(schema)), nodes_(std::move(nodes)), edges_(std::move(edges)) {
    if (nodes_.empty()) throw_data("lattice needs at least one node");
    out_.resize(nodes_.size());
    in_degree_.assign(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].id != static_cast<NodeId>(i))
        throw_data("lattice node ids must be contiguous from 0");
    }
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const auto& ed = edges_[e];
      if (ed.parent < 0 || ed.parent >= static_cast<NodeId>(nodes_.size()) ||
          ed.child < 0 || ed.child >= static_cast<NodeId>(nodes_.size()))
        throw_data("lattice edge references unknown node id");
      out_[ed.parent].push_back(e);
      in_degree_[ed.child]++;
    }
  }

  const SchemaPtr& schema() const { return schema_; }
  const std::vector<LatticeNode>& nodes() const { return nodes_; }
  const std::vector<FactorizationEdge>& edges() const { return edges_; }
  const LatticeNode& node(NodeId id) const { return nodes_.at(id); }
  const FactorizationEdge& edge(std::size_t e) const { return edges_.at(e); }
  const std::vector<std::size_t>& out_edges(NodeId id) const { return out_.at(id); }
  std::size_t in_degree(NodeId id) const { return in_degree_.at(id); }

  NodeId root() const {
    NodeId found = -1;
    for (const auto& n : nodes_) {
      if (in_degree_[n.id] == 0) {
        if (found >= 0) throw_data("lattice has more than one root");
        found = n.id;
      }
    }
    if (found < 0) throw_data("lattice has no root");
    return found;
  }

  // Kahn topological order, root first. Throws on cycles.
  std::vector<NodeId> topological_order() const {
    std::vector<std::size_t> indeg(in_degree_);
    std::deque<NodeId> ready;
    for (const auto& n : nodes_)
      if (indeg[n.id] == 0) ready.push_back(n.id);
    std::vector<NodeId> order;
    while (!ready.empty()) {
      NodeId n = ready.front();
      ready.pop_front();
      order.push_back(n);
      for (std::size_t e : out_[n]) {
        if (--indeg[edges_[e].child] == 0) ready.push_back(edges_[e].child);
      }
    }
    if (order.size() != nodes_.size()) throw_data("lattice contains a cycle");
    return order;
  }

 private:
  SchemaPtr schema_;
  std::vector<LatticeNode> nodes_;
  std::vector<FactorizationEdge> edges_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::size_t> in_degree_;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const {
    std::string out;
    for (const auto& v : violations) {
      out += v;
      out += '\n';
    }
    return out;
  }
};

// Structural checks: single root, acyclicity, reachability, per-shape weight
// normalization, spec/shape consistency (which is what makes projected counts
// path-independent), and coverage of every node-set event by some edge.
inline ValidationReport validate(const Lattice& lat) {
  ValidationReport rep;
  auto flag = [&rep](std::string msg) { rep.violations.push_back(std::move(msg)); };

  // Roots.
  std::vector<NodeId> roots;
  for (const auto& n : lat.nodes())
    if (lat.in_degree(n.id) == 0) roots.push_back(n.id);
  if (roots.size() != 1)
    flag("expected exactly one root node, found " + std::to_string(roots.size()));
  for (const auto& n : lat.nodes()) {
    bool should_be_root = lat.in_degree(n.id) == 0;
    if (n.is_root != should_be_root)
      flag("node " + std::to_string(n.id) + " root flag does not match edge structure");
  }

  // Node shape sanity.
  const std::size_t nslots = lat.schema()->size();
  for (const auto& n : lat.nodes()) {
    if (n.shapes.empty()) {
      flag("node " + std::to_string(n.id) + " has an empty event set");
      continue;
    }
    std::set<EventShape> seen;
    for (const auto& s : n.shapes) {
      if (s.outcome.empty())
        flag("node " + std::to_string(n.id) + " has a shape with empty outcome");
      if (!s.outcome.disjoint_with(s.context))
        flag("node " + std::to_string(n.id) + " has overlapping outcome/context slots");
      for (std::size_t i : s.outcome)
        if (i >= nslots) flag("node " + std::to_string(n.id) + " outcome slot out of range");
      for (std::size_t i : s.context)
        if (i >= nslots) flag("node " + std::to_string(n.id) + " context slot out of range");
      if (!seen.insert(s).second)
        flag("node " + std::to_string(n.id) + " repeats a shape in its event set");
    }
  }
  if (roots.size() == 1) {
    const auto& root = lat.node(roots[0]);
    if (root.shapes.size() != 1)
      flag("root node must hold exactly one event shape");
    else {
      for (const auto& n : lat.nodes()) {
        for (const auto& s : n.shapes) {
          if (!s.outcome.subset_of(root.shapes[0].outcome) ||
              !s.context.subset_of(root.shapes[0].context))
            flag("node " + std::to_string(n.id) +
                 " shape is not a projection of the root shape");
        }
      }
    }
  }

  // Acyclicity.
  bool acyclic = true;
  try {
    (void)lat.topological_order();
  } catch (const Error&) {
    acyclic = false;
    flag("edge relation contains a cycle");
  }

  // Reachability from the root.
  if (roots.size() == 1 && acyclic) {
    std::vector<bool> reached(lat.nodes().size(), false);
    std::deque<NodeId> q{roots[0]};
    reached[roots[0]] = true;
    while (!q.empty()) {
      NodeId n = q.front();
      q.pop_front();
      for (std::size_t e : lat.out_edges(n)) {
        NodeId c = lat.edge(e).child;
        if (!reached[c]) {
          reached[c] = true;
          q.push_back(c);
        }
      }
    }
    for (const auto& n : lat.nodes())
      if (!reached[n.id]) flag("node " + std::to_string(n.id) + " unreachable from root");
  }

  // Per-(node, parent-shape) weight normalization and coverage.
  for (const auto& n : lat.nodes()) {
    if (lat.out_edges(n.id).empty()) continue;  // terminal node
    std::map<int, double> weight_sum;
    std::set<int> covered;
    for (std::size_t e : lat.out_edges(n.id)) {
      const auto& ed = lat.edge(e);
      weight_sum[ed.parent_shape] += ed.weight;
      covered.insert(ed.parent_shape);
      if (ed.weight < 0.0 || ed.weight > 1.0)
        flag("edge " + std::to_string(e) + " weight outside [0,1]");
    }
    for (const auto& [shape, sum] : weight_sum) {
      if (std::abs(sum - 1.0) > 1e-9)
        flag("node " + std::to_string(n.id) + " shape " + std::to_string(shape) +
             " edge weights sum to " + std::to_string(sum));
    }
    for (int s = 0; s < static_cast<int>(n.shapes.size()); ++s) {
      if (!covered.count(s))
        flag("node " + std::to_string(n.id) + " event " + std::to_string(s) +
             " is neither terminal nor covered by an edge");
    }
  }

  // Edge spec consistency: the resolved child descriptors must equal the
  // child node's event set, for every edge into that child. Together with
  // the projection-of-root check above this gives path independence.
  for (std::size_t e = 0; e < lat.edges().size(); ++e) {
    const auto& ed = lat.edge(e);
    const auto& parent = lat.node(ed.parent);
    if (ed.parent_shape < 0 || ed.parent_shape >= static_cast<int>(parent.shapes.size())) {
      flag("edge " + std::to_string(e) + " references missing parent shape");
      continue;
    }
    const EventShape& pshape = parent.shapes[ed.parent_shape];
    if (ed.spec.children.empty()) {
      flag("edge " + std::to_string(e) + " resolves into no sub-events");
      continue;
    }
    if (!ed.independence && ed.spec.children.size() != 1)
      flag("edge " + std::to_string(e) + " is joint but lists several sub-events");
    std::vector<EventShape> resolved;
    bool bad = false;
    for (const auto& c : ed.spec.children) {
      EventShape r = detail::resolve_child_shape(c, pshape);
      if (!r.outcome.subset_of(pshape.outcome) || !r.context.subset_of(pshape.context)) {
        flag("edge " + std::to_string(e) + " child slots escape the parent shape");
        bad = true;
        break;
      }
      if (r.outcome.empty()) {
        flag("edge " + std::to_string(e) + " resolves a child with empty outcome");
        bad = true;
        break;
      }
      resolved.push_back(std::move(r));
    }
    if (bad) continue;
    std::vector<EventShape> child_shapes = lat.node(ed.child).shapes;
    std::sort(resolved.begin(), resolved.end());
    std::sort(child_shapes.begin(), child_shapes.end());
    if (resolved != child_shapes)
      flag("edge " + std::to_string(e) +
           " spec does not resolve to the child node's event set");
  }

  return rep;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

// Linear back-off chain for n-grams: node k conditions on the (n-1-k) most
// recent history slots, the last node is the unigram with empty context.
inline Lattice build_ngram_chain(int n) {
  if (n < 1) throw_usage("n-gram order must be >= 1");
  std::vector<SlotId> slots;
  std::vector<bool> droppable;
  for (int i = 0; i < n - 1; ++i) {
    // schema order is oldest history first; h1 is the most recent word
    slots.push_back(SlotId{0, i, "h" + std::to_string(n - 1 - i)});
    droppable.push_back(true);
  }
  slots.push_back(SlotId{0, n - 1, "w"});
  droppable.push_back(false);
  auto schema = std::make_shared<const EventSchema>(std::move(slots), std::move(droppable));

  SlotSet outcome{static_cast<std::size_t>(n - 1)};
  std::vector<LatticeNode> nodes;
  std::vector<FactorizationEdge> edges;
  for (int k = 0; k < n; ++k) {
    std::vector<std::size_t> ctx;
    for (int i = k; i < n - 1; ++i) ctx.push_back(static_cast<std::size_t>(i));
    nodes.push_back(LatticeNode{k, {EventShape{outcome, SlotSet(std::move(ctx))}}, k == 0});
  }
  for (int k = 0; k + 1 < n; ++k) {
    ProjectionSpec spec;
    spec.children.push_back({SlotSet{}, nodes[k + 1].shapes[0].context});
    edges.push_back(FactorizationEdge{k, k + 1, 0, std::move(spec), 1.0, false});
  }
  return Lattice(std::move(schema), std::move(nodes), std::move(edges));
}

struct DropSlot {
  SlotId slot;
  bool droppable = true;
};

// Asynchronous drop-one lattice: nodes are the context-slot subsets reachable
// by repeatedly dropping droppable slots, down to min_context slots; children
// shared between drop orders are represented once.
inline Lattice build_dropone(const std::vector<SlotId>& outcome_slots,
                             const std::vector<DropSlot>& context_slots,
                             std::size_t min_context) {
  if (outcome_slots.empty()) throw_usage("drop-one lattice needs an outcome slot");
  bool any_droppable = false;
  for (const auto& c : context_slots) any_droppable |= c.droppable;
  if (!any_droppable) throw_usage("drop-one lattice needs a droppable context slot");
  if (min_context >= context_slots.size())
    throw_usage("min_context must be smaller than the context size");

  std::vector<SlotId> slots(outcome_slots);
  std::vector<bool> droppable(outcome_slots.size(), false);
  for (const auto& c : context_slots) {
    slots.push_back(c.slot);
    droppable.push_back(c.droppable);
  }
  auto schema = std::make_shared<const EventSchema>(std::move(slots), droppable);

  std::vector<std::size_t> out_idx(outcome_slots.size());
  for (std::size_t i = 0; i < out_idx.size(); ++i) out_idx[i] = i;
  SlotSet outcome{SlotSet(std::move(out_idx))};

  std::vector<std::size_t> full_ctx;
  for (std::size_t i = 0; i < context_slots.size(); ++i)
    full_ctx.push_back(outcome_slots.size() + i);

  std::vector<LatticeNode> nodes;
  std::vector<FactorizationEdge> edges;
  std::map<SlotSet, NodeId> ids;
  auto intern = [&](const SlotSet& ctx) -> NodeId {
    auto it = ids.find(ctx);
    if (it != ids.end()) return it->second;
    NodeId id = static_cast<NodeId>(nodes.size());
    nodes.push_back(LatticeNode{id, {EventShape{outcome, ctx}}, ctx.size() == full_ctx.size()});
    ids.emplace(ctx, id);
    return id;
  };

  SlotSet root_ctx(full_ctx);
  intern(root_ctx);
  // breadth first by level so node ids grow with back-off depth
  std::vector<SlotSet> level{root_ctx};
  while (!level.empty()) {
    std::vector<SlotSet> next;
    std::set<SlotSet> next_seen;
    for (const auto& ctx : level) {
      if (ctx.size() <= min_context) continue;
      NodeId parent = ids.at(ctx);
      for (std::size_t s : ctx) {
        if (!schema->droppable(s)) continue;
        SlotSet child_ctx = ctx.minus(SlotSet{s});
        bool fresh = !ids.count(child_ctx);
        NodeId child = intern(child_ctx);
        ProjectionSpec spec;
        spec.children.push_back({SlotSet{}, child_ctx});
        edges.push_back(FactorizationEdge{parent, child, 0, std::move(spec), 0.0, false});
        if (fresh && next_seen.insert(child_ctx).second) next.push_back(child_ctx);
      }
    }
    level = std::move(next);
  }
  // uniform prior over each parent's factorization manners
  std::map<NodeId, int> fanout;
  for (const auto& e : edges) fanout[e.parent]++;
  for (auto& e : edges) e.weight = 1.0 / fanout[e.parent];

  return Lattice(std::move(schema), std::move(nodes), std::move(edges));
}

// Synchronous row/column split of an m x n matrix query: the outcome and the
// conditioning matrix factorize along the same direction, and the sub-events
// of one direction multiply (independence). Degenerate single-row or
// single-column grids keep only the informative direction.
inline Lattice build_sync_split(std::size_t rows, std::size_t cols) {
  if (rows < 1 || cols < 1) throw_usage("sync split needs a non-empty grid");
  std::vector<SlotId> slots;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      slots.push_back(SlotId{static_cast<int>(i), static_cast<int>(j),
                             "a" + std::to_string(i) + "_" + std::to_string(j)});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      slots.push_back(SlotId{static_cast<int>(i), static_cast<int>(j),
                             "b" + std::to_string(i) + "_" + std::to_string(j)});
  auto schema = std::make_shared<const EventSchema>(std::move(slots));

  auto a_at = [cols](std::size_t i, std::size_t j) { return i * cols + j; };
  auto b_at = [rows, cols](std::size_t i, std::size_t j) {
    return rows * cols + i * cols + j;
  };

  std::vector<std::size_t> all_a, all_b;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      all_a.push_back(a_at(i, j));
      all_b.push_back(b_at(i, j));
    }

  std::vector<LatticeNode> nodes;
  nodes.push_back(LatticeNode{0, {EventShape{SlotSet(all_a), SlotSet(all_b)}}, true});

  auto row_children = [&]() {
    std::vector<ProjectionSpec::Child> cs;
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<std::size_t> o, c;
      for (std::size_t j = 0; j < cols; ++j) {
        o.push_back(a_at(i, j));
        c.push_back(b_at(i, j));
      }
      cs.push_back({SlotSet(std::move(o)), SlotSet(std::move(c))});
    }
    return cs;
  };
  auto col_children = [&]() {
    std::vector<ProjectionSpec::Child> cs;
    for (std::size_t j = 0; j < cols; ++j) {
      std::vector<std::size_t> o, c;
      for (std::size_t i = 0; i < rows; ++i) {
        o.push_back(a_at(i, j));
        c.push_back(b_at(i, j));
      }
      cs.push_back({SlotSet(std::move(o)), SlotSet(std::move(c))});
    }
    return cs;
  };

  const bool want_row = rows > 1;  // a single row projects to itself
  const bool want_col = cols > 1;
  std::vector<FactorizationEdge> edges;
  double w = (want_row && want_col) ? 0.5 : 1.0;
  auto add_split = [&](std::vector<ProjectionSpec::Child> cs) {
    std::vector<EventShape> shapes;
    for (const auto& c : cs) shapes.push_back(EventShape{c.outcome, c.context});
    NodeId child = static_cast<NodeId>(nodes.size());
    nodes.push_back(LatticeNode{child, std::move(shapes), false});
    edges.push_back(FactorizationEdge{0, child, 0, ProjectionSpec{std::move(cs)}, w, true});
  };
  if (want_row) add_split(row_children());
  if (want_col) add_split(col_children());

  return Lattice(std::move(schema), std::move(nodes), std::move(edges));
}

// ---------------------------------------------------------------------------
// DOT export
// ---------------------------------------------------------------------------

namespace detail {
inline std::string slot_names(const EventSchema& schema, const SlotSet& set) {
  std::string out;
  bool first = true;
  for (std::size_t i : set) {
    if (!first) out += ",";
    out += schema.slot(i).name;
    first = false;
  }
  return out.empty() ? "-" : out;
}

inline std::string format_weight(double w) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", w);
  return buf;
}
}  // namespace detail

// Deterministic DOT rendering: nodes by id, edges in lattice order, labels
// carry the slot subsets and edge weights.
inline std::string export_dot(const Lattice& lat) {
  std::string out = "digraph backoff_lattice {\n  rankdir=TB;\n";
  const auto& schema = *lat.schema();
  for (const auto& n : lat.nodes()) {
    std::string label;
    for (std::size_t s = 0; s < n.shapes.size(); ++s) {
      if (s) label += " ; ";
      label += detail::slot_names(schema, n.shapes[s].outcome);
      label += " | ";
      label += detail::slot_names(schema, n.shapes[s].context);
    }
    out += "  n" + std::to_string(n.id) + " [label=\"" + label + "\"];\n";
  }
  for (const auto& e : lat.edges()) {
    out += "  n" + std::to_string(e.parent) + " -> n" + std::to_string(e.child) +
           " [label=\"" + detail::format_weight(e.weight) + "\"" +
           (e.independence ? ", style=dashed" : "") + "];\n";
  }
  out += "}\n";
  return out;
}

}  // namespace folm
