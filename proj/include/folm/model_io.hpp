#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include <folm/backoff.hpp>
#include <folm/counts.hpp>
#include <folm/error.hpp>
#include <folm/estimation.hpp>
#include <folm/event.hpp>
#include <folm/lattice.hpp>
#include <folm/mixture.hpp>

namespace folm {

inline constexpr int kModelFormatVersion = 1;

// FNV-1a, for corpus provenance hashes.
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string fnv1a_hex(std::string_view data) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a:%016llx",
                static_cast<unsigned long long>(fnv1a(data)));
  return buf;
}

inline std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open file for hashing: " + path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return fnv1a_hex(content);
}

// ---------------------------------------------------------------------------
// Lattice <-> JSON
// ---------------------------------------------------------------------------

namespace detail {
inline nlohmann::json slotset_to_json(const EventSchema& schema, const SlotSet& set) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i : set) arr.push_back(schema.slot(i).name);
  return arr;
}

inline SlotSet slotset_from_json(const SchemaPtr& schema, const nlohmann::json& arr,
                                 const std::string& where) {
  std::vector<std::size_t> idx;
  for (const auto& name : arr) {
    auto i = schema->index_of(name.get<std::string>());
    if (!i) throw_data(where + ": unknown or ambiguous slot name \"" +
                       name.get<std::string>() + "\"");
    idx.push_back(*i);
  }
  return SlotSet(std::move(idx));
}
}  // namespace detail

inline nlohmann::json lattice_to_json(const Lattice& lat) {
  const EventSchema& schema = *lat.schema();
  nlohmann::json j;
  j["slots"] = nlohmann::json::array();
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const SlotId& s = schema.slot(i);
    j["slots"].push_back({{"name", s.name},
                          {"row", s.row},
                          {"col", s.col},
                          {"droppable", schema.droppable(i)}});
  }
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : lat.nodes()) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& s : n.shapes)
      shapes.push_back({{"outcome", detail::slotset_to_json(schema, s.outcome)},
                        {"context", detail::slotset_to_json(schema, s.context)}});
    j["nodes"].push_back({{"id", n.id}, {"shapes", shapes}});
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& e : lat.edges()) {
    nlohmann::json children = nlohmann::json::array();
    for (const auto& c : e.spec.children)
      children.push_back({{"outcome", detail::slotset_to_json(schema, c.outcome)},
                          {"context", detail::slotset_to_json(schema, c.context)}});
    j["edges"].push_back({{"parent", e.parent},
                          {"child", e.child},
                          {"parent_shape", e.parent_shape},
                          {"weight", e.weight},
                          {"independence", e.independence},
                          {"children", children}});
  }
  return j;
}

inline Lattice lattice_from_json(const nlohmann::json& j) {
  if (!j.contains("slots") || !j.contains("nodes") || !j.contains("edges"))
    throw_data("lattice JSON needs slots, nodes and edges");
  std::vector<SlotId> slots;
  std::vector<bool> droppable;
  for (const auto& s : j.at("slots")) {
    slots.push_back(SlotId{s.value("row", 0), s.value("col", 0),
                           s.at("name").get<std::string>()});
    droppable.push_back(s.value("droppable", false));
  }
  auto schema = std::make_shared<const EventSchema>(std::move(slots), std::move(droppable));

  std::vector<LatticeNode> nodes;
  for (const auto& n : j.at("nodes")) {
    LatticeNode node;
    node.id = n.at("id").get<NodeId>();
    std::string where = "node " + std::to_string(node.id);
    for (const auto& s : n.at("shapes"))
      node.shapes.push_back(
          EventShape{detail::slotset_from_json(schema, s.at("outcome"), where),
                     detail::slotset_from_json(schema, s.at("context"), where)});
    nodes.push_back(std::move(node));
  }

  std::vector<FactorizationEdge> edges;
  for (const auto& e : j.at("edges")) {
    FactorizationEdge edge;
    edge.parent = e.at("parent").get<NodeId>();
    edge.child = e.at("child").get<NodeId>();
    edge.parent_shape = e.value("parent_shape", 0);
    edge.weight = e.at("weight").get<double>();
    edge.independence = e.value("independence", false);
    std::string where = "edge " + std::to_string(edge.parent) + "->" +
                        std::to_string(edge.child);
    for (const auto& c : e.at("children"))
      edge.spec.children.push_back(
          {detail::slotset_from_json(schema, c.at("outcome"), where),
           detail::slotset_from_json(schema, c.at("context"), where)});
    edges.push_back(std::move(edge));
  }

  // root flags are structural; recompute them
  std::vector<std::size_t> indeg(nodes.size(), 0);
  for (const auto& e : edges)
    if (e.child >= 0 && e.child < static_cast<NodeId>(nodes.size())) indeg[e.child]++;
  for (auto& n : nodes)
    n.is_root = n.id >= 0 && n.id < static_cast<NodeId>(indeg.size()) && indeg[n.id] == 0;

  return Lattice(schema, std::move(nodes), std::move(edges));
}

inline Lattice load_lattice_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open lattice spec: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_data(path + ": " + e.what());
  }
  return lattice_from_json(j);
}

// ---------------------------------------------------------------------------
// Model <-> JSON
// ---------------------------------------------------------------------------

struct StoredModel {
  std::shared_ptr<const ModelData> data;
  MixtureWeights weights;
  nlohmann::json meta;  // task block + provenance
};

inline nlohmann::json model_to_json(const ModelData& data, const MixtureWeights& weights,
                                    const nlohmann::json& meta) {
  const Lattice& lat = *data.lattice;
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["meta"] = meta;

  // lattice with the trained weights written onto its edges
  nlohmann::json jl = lattice_to_json(lat);
  for (const auto& n : lat.nodes()) {
    const auto& out = lat.out_edges(n.id);
    if (out.empty()) continue;
    const auto& w = weights.at(n.id);
    for (std::size_t p = 0; p < out.size(); ++p)
      jl["edges"][out[p]]["weight"] = w[p];
  }
  j["lattice"] = std::move(jl);

  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [id, table] : data.counts) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [ckey, row] : table.joints())
      for (const auto& [okey, c] : row) rows.push_back({ckey, okey, c});
    counts[std::to_string(id)] = std::move(rows);
  }
  j["counts"] = std::move(counts);

  nlohmann::json discounts = nlohmann::json::object();
  for (const auto& [id, dt] : data.discounts) {
    nlohmann::json fallback = nlohmann::json::array();
    for (bool f : dt.used_fallback) fallback.push_back(f);
    discounts[std::to_string(id)] = {
        {"K", dt.K}, {"beta", dt.beta}, {"fallback", fallback}};
  }
  j["discounts"] = std::move(discounts);

  nlohmann::json vocab = nlohmann::json::object();
  for (const auto& [id, shapes] : data.base_vocab) {
    nlohmann::json per_shape = nlohmann::json::object();
    for (const auto& [shape, keys] : shapes) per_shape[std::to_string(shape)] = keys;
    vocab[std::to_string(id)] = std::move(per_shape);
  }
  j["vocab"] = std::move(vocab);
  return j;
}

inline StoredModel model_from_json(const nlohmann::json& j) {
  if (j.value("format_version", -1) != kModelFormatVersion)
    throw_data("unsupported model format version");
  auto data = std::make_shared<ModelData>();
  data->lattice = std::make_shared<const Lattice>(lattice_from_json(j.at("lattice")));
  const Lattice& lat = *data->lattice;

  for (const auto& [id_text, rows] : j.at("counts").items()) {
    NodeId id = std::stoi(id_text);
    const LatticeNode& node = lat.node(id);
    CountTable& table = data->counts[id];
    for (const auto& row : rows) {
      std::string ckey = row.at(0).get<std::string>();
      std::string okey = row.at(1).get<std::string>();
      std::int64_t c = row.at(2).get<std::int64_t>();
      Event o = event_from_key(lat.schema(), okey);
      Event ce = event_from_key(lat.schema(), ckey);
      int shape = -1;
      for (std::size_t s = 0; s < node.shapes.size(); ++s)
        if (node.shapes[s].outcome == o.assigned_slots() &&
            node.shapes[s].context == ce.assigned_slots())
          shape = static_cast<int>(s);
      if (shape < 0)
        throw_data("count row does not match any event shape of node " + id_text);
      table.add(shape, okey, ckey, c);
    }
  }
  for (const auto& n : lat.nodes()) data->counts[n.id];  // ensure empty tables exist

  for (const auto& [id_text, dj] : j.at("discounts").items()) {
    DiscountTable dt;
    dt.K = dj.at("K").get<std::int64_t>();
    dt.beta = dj.at("beta").get<std::vector<double>>();
    for (const auto& f : dj.at("fallback")) dt.used_fallback.push_back(f.get<bool>());
    data->discounts[std::stoi(id_text)] = std::move(dt);
  }

  for (const auto& [id_text, shapes] : j.at("vocab").items()) {
    NodeId id = std::stoi(id_text);
    for (const auto& [shape_text, keys] : shapes.items())
      data->base_vocab[id][std::stoi(shape_text)] = keys.get<std::vector<std::string>>();
  }

  StoredModel out;
  out.weights = MixtureWeights::from_lattice(lat);
  out.data = std::move(data);
  out.meta = j.value("meta", nlohmann::json::object());
  return out;
}

inline void save_model(const std::string& path, const ModelData& data,
                       const MixtureWeights& weights, const nlohmann::json& meta) {
  std::ofstream out(path);
  if (!out) throw_data("cannot write model file: " + path);
  out << model_to_json(data, weights, meta).dump(1) << '\n';
}

inline StoredModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_data(path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace folm
