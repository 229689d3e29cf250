#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <folm/error.hpp>
#include <folm/event.hpp>
#include <folm/lattice.hpp>

namespace folm {

// A full outcome/context pair as seen in data.
struct Observation {
  ConditionalQuery query;
  std::int64_t multiplicity = 1;
};

// Per-node joint counts, context marginals and outcome support. The marginal
// is maintained as the exact integer sum of joint counts over outcomes.
class CountTable {
 public:
  void add(int shape, const std::string& okey, const std::string& ckey,
           std::int64_t mult) {
    if (mult < 0) throw_data("negative count");
    joint_[ckey][okey] += mult;
    marginal_[ckey] += mult;
    support_[shape].insert(okey);
  }

  void merge(const CountTable& other) {
    for (const auto& [ckey, row] : other.joint_)
      for (const auto& [okey, c] : row) joint_[ckey][okey] += c;
    for (const auto& [ckey, c] : other.marginal_) marginal_[ckey] += c;
    for (const auto& [shape, keys] : other.support_)
      support_[shape].insert(keys.begin(), keys.end());
  }

  std::int64_t joint(const std::string& okey, const std::string& ckey) const {
    auto row = joint_.find(ckey);
    if (row == joint_.end()) return 0;
    auto it = row->second.find(okey);
    return it == row->second.end() ? 0 : it->second;
  }

  std::int64_t marginal(const std::string& ckey) const {
    auto it = marginal_.find(ckey);
    return it == marginal_.end() ? 0 : it->second;
  }

  // Outcomes that co-occurred with this context, or nullptr.
  const std::map<std::string, std::int64_t>* seen_outcomes(const std::string& ckey) const {
    auto it = joint_.find(ckey);
    return it == joint_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, std::map<std::string, std::int64_t>>& joints() const {
    return joint_;
  }
  const std::map<std::string, std::int64_t>& marginals() const { return marginal_; }

  const std::set<std::string>& support(int shape) const {
    static const std::set<std::string> empty;
    auto it = support_.find(shape);
    return it == support_.end() ? empty : it->second;
  }
  const std::map<int, std::set<std::string>>& support_by_shape() const { return support_; }

  bool empty() const { return joint_.empty(); }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& [k, c] : marginal_) t += c;
    return t;
  }

 private:
  std::map<std::string, std::map<std::string, std::int64_t>> joint_;  // ckey -> okey -> c
  std::map<std::string, std::int64_t> marginal_;
  std::map<int, std::set<std::string>> support_;  // shape index -> outcome keys
};

using NodeCounts = std::map<NodeId, CountTable>;

namespace detail {
inline void count_observation(const Observation& obs, const Lattice& lat,
                              NodeCounts& tables) {
  for (const auto& node : lat.nodes()) {
    CountTable& table = tables[node.id];
    for (std::size_t s = 0; s < node.shapes.size(); ++s) {
      const EventShape& shape = node.shapes[s];
      Event o = obs.query.outcome.project(shape.outcome);
      Event c = obs.query.context.project(shape.context);
      table.add(static_cast<int>(s), canonical_key(o), canonical_key(c),
                obs.multiplicity);
    }
  }
}
}  // namespace detail

// Projects every observation down every lattice node and counts it there.
// The stream may be sharded; shards are counted separately and merged by
// count addition, so the result is independent of the sharding.
inline NodeCounts ingest(const std::vector<Observation>& observations,
                         const Lattice& lat, int shards = 1) {
  if (shards < 1) shards = 1;
  NodeId root = lat.root();
  const LatticeNode& root_node = lat.node(root);
  if (root_node.shapes.size() != 1)
    throw_data("ingestion requires a root with exactly one event shape");
  const EventShape& root_shape = root_node.shapes[0];

  for (std::size_t i = 0; i < observations.size(); ++i) {
    const Observation& obs = observations[i];
    if (obs.multiplicity < 1)
      throw_data("observation " + std::to_string(i) + ": multiplicity must be >= 1");
    if (obs.query.outcome.schema() != lat.schema())
      throw_data("observation " + std::to_string(i) + ": schema does not match lattice");
    if (obs.query.outcome.assigned_slots() != root_shape.outcome ||
        obs.query.context.assigned_slots() != root_shape.context)
      throw_data("observation " + std::to_string(i) +
                 ": assignment does not match the root event shape");
  }

  std::vector<NodeCounts> partial(shards);
  for (std::size_t i = 0; i < observations.size(); ++i)
    detail::count_observation(observations[i], lat, partial[i % shards]);

  NodeCounts merged;
  for (const auto& node : lat.nodes()) merged[node.id];  // every node gets a table
  for (const auto& shard : partial)
    for (const auto& [id, table] : shard) merged[id].merge(table);
  return merged;
}

// n_r: how many distinct joint events occur exactly r times. Kept for all
// observed r (one pass); callers read 1..max_r+1.
struct CountOfCounts {
  std::map<std::int64_t, std::int64_t> n;

  std::int64_t at(std::int64_t r) const {
    auto it = n.find(r);
    return it == n.end() ? 0 : it->second;
  }
  std::int64_t total_mass() const {
    std::int64_t t = 0;
    for (const auto& [r, count] : n) t += r * count;
    return t;
  }
};

inline CountOfCounts count_of_counts(const CountTable& table, std::int64_t max_r) {
  if (max_r < 1) throw_usage("count-of-counts needs max_r >= 1");
  CountOfCounts noc;
  for (const auto& [ckey, row] : table.joints())
    for (const auto& [okey, c] : row) noc.n[c]++;
  return noc;
}

// Count-override file: one record per line, tab separated
//   outcome-key <TAB> context-key <TAB> count
// Replaces the projected counts of one node (external-resource combination).
inline CountTable load_count_override(const std::string& path, const Lattice& lat,
                                      NodeId node_id) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open count override file: " + path);
  const LatticeNode& node = lat.node(node_id);
  CountTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto where = [&] { return path + ":" + std::to_string(lineno) + ": "; };
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw_data(where() + "expected 3 tab-separated fields");
    std::string okey = line.substr(0, t1);
    std::string ckey = line.substr(t1 + 1, t2 - t1 - 1);
    std::string count_text = line.substr(t2 + 1);
    std::int64_t count = 0;
    try {
      std::size_t used = 0;
      count = std::stoll(count_text, &used);
      if (used != count_text.size()) throw std::invalid_argument(count_text);
    } catch (const std::exception&) {
      throw_data(where() + "count is not an integer: " + count_text);
    }
    if (count < 0) throw_data(where() + "fractional or negative counts are rejected");
    Event o = event_from_key(lat.schema(), okey);
    Event c = event_from_key(lat.schema(), ckey);
    int shape = -1;
    for (std::size_t s = 0; s < node.shapes.size(); ++s) {
      if (o.assigned_slots() == node.shapes[s].outcome &&
          c.assigned_slots() == node.shapes[s].context) {
        shape = static_cast<int>(s);
        break;
      }
    }
    if (shape < 0) throw_data(where() + "keys do not match any event shape of node " +
                              std::to_string(node_id));
    table.add(shape, okey, ckey, count);
  }
  return table;
}

}  // namespace folm
