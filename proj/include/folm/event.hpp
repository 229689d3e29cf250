#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <folm/error.hpp>

namespace folm {

// Reserved characters for count-table keys: slot values are joined with
// kKeySep and unassigned slots print as kKeyHole. Terms may contain neither,
// which is what makes canonical keys injective.
inline constexpr char kKeySep = '|';
inline constexpr std::string_view kKeyHole = "␀";

// An opaque vocabulary symbol.
class Term {
 public:
  Term() = default;
  explicit Term(std::string text) : text_(std::move(text)) {
    if (!is_valid(text_)) throw_data("invalid term: \"" + text_ + "\"");
  }

  static bool is_valid(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s) {
      if (std::isspace(static_cast<unsigned char>(c)) || c == kKeySep) return false;
    }
    return s.find(kKeyHole) == std::string_view::npos;
  }

  const std::string& str() const { return text_; }

  friend bool operator==(const Term&, const Term&) = default;
  friend auto operator<=>(const Term&, const Term&) = default;

 private:
  std::string text_;
};

// A slot of an event grid: a (row, col) position plus a role label.
// The pair (position, name) is unique within a schema; flat tuples are
// 1 x n grids on row 0.
struct SlotId {
  int row = 0;
  int col = 0;
  std::string name;

  friend bool operator==(const SlotId&, const SlotId&) = default;
};

// Sorted, duplicate-free set of slot indices into a schema.
class SlotSet {
 public:
  SlotSet() = default;
  SlotSet(std::initializer_list<std::size_t> init) : idx_(init) { normalize(); }
  explicit SlotSet(std::vector<std::size_t> idx) : idx_(std::move(idx)) { normalize(); }

  bool empty() const { return idx_.empty(); }
  std::size_t size() const { return idx_.size(); }
  bool contains(std::size_t i) const {
    return std::binary_search(idx_.begin(), idx_.end(), i);
  }
  bool subset_of(const SlotSet& other) const {
    return std::includes(other.idx_.begin(), other.idx_.end(), idx_.begin(), idx_.end());
  }
  bool disjoint_with(const SlotSet& other) const {
    std::vector<std::size_t> tmp;
    std::set_intersection(idx_.begin(), idx_.end(), other.idx_.begin(), other.idx_.end(),
                          std::back_inserter(tmp));
    return tmp.empty();
  }
  SlotSet minus(const SlotSet& other) const {
    std::vector<std::size_t> out;
    std::set_difference(idx_.begin(), idx_.end(), other.idx_.begin(), other.idx_.end(),
                        std::back_inserter(out));
    return SlotSet(std::move(out));
  }
  SlotSet unite(const SlotSet& other) const {
    std::vector<std::size_t> out;
    std::set_union(idx_.begin(), idx_.end(), other.idx_.begin(), other.idx_.end(),
                   std::back_inserter(out));
    return SlotSet(std::move(out));
  }

  auto begin() const { return idx_.begin(); }
  auto end() const { return idx_.end(); }
  const std::vector<std::size_t>& indices() const { return idx_; }

  friend bool operator==(const SlotSet&, const SlotSet&) = default;
  friend auto operator<=>(const SlotSet&, const SlotSet&) = default;

 private:
  void normalize() {
    std::sort(idx_.begin(), idx_.end());
    idx_.erase(std::unique(idx_.begin(), idx_.end()), idx_.end());
  }
  std::vector<std::size_t> idx_;
};

// Ordered slot grid shared by every event of one model. Immutable.
class EventSchema {
 public:
  explicit EventSchema(std::vector<SlotId> slots, std::vector<bool> droppable = {})
      : slots_(std::move(slots)), droppable_(std::move(droppable)) {
    if (slots_.empty()) throw_data("event schema needs at least one slot");
    if (droppable_.empty()) droppable_.assign(slots_.size(), false);
    if (droppable_.size() != slots_.size())
      throw_data("droppable flags must match slot count");
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      for (std::size_t j = i + 1; j < slots_.size(); ++j) {
        if (slots_[i] == slots_[j])
          throw_data("duplicate (position, name) slot in schema: " + slots_[i].name);
      }
      auto [it, fresh] = by_name_.try_emplace(slots_[i].name, i);
      if (!fresh) it->second = kAmbiguous;
    }
  }

  std::size_t size() const { return slots_.size(); }
  const SlotId& slot(std::size_t i) const { return slots_[i]; }
  bool droppable(std::size_t i) const { return droppable_[i]; }

  // Index of the slot with the given role name; nullopt when absent or when
  // the name appears at more than one position.
  std::optional<std::size_t> index_of(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end() || it->second == kAmbiguous) return std::nullopt;
    return it->second;
  }

  SlotSet all_slots() const {
    std::vector<std::size_t> idx(slots_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return SlotSet(std::move(idx));
  }

  friend bool operator==(const EventSchema& a, const EventSchema& b) {
    return a.slots_ == b.slots_ && a.droppable_ == b.droppable_;
  }

 private:
  static constexpr std::size_t kAmbiguous = static_cast<std::size_t>(-1);
  std::vector<SlotId> slots_;
  std::vector<bool> droppable_;
  std::map<std::string, std::size_t> by_name_;
};

using SchemaPtr = std::shared_ptr<const EventSchema>;

// A (possibly partial) assignment of terms to schema slots. Dropped slots
// are simply unassigned, so full and projected events share this type.
// Immutable after construction.
class Event {
 public:
  explicit Event(SchemaPtr schema)
      : schema_(std::move(schema)), slots_(schema_->size()) {}

  Event(SchemaPtr schema, std::vector<std::optional<Term>> slots)
      : schema_(std::move(schema)), slots_(std::move(slots)) {
    if (slots_.size() != schema_->size())
      throw_data("event assignment size does not match schema");
  }

  static Event from_pairs(SchemaPtr schema,
                          const std::vector<std::pair<std::size_t, Term>>& pairs) {
    std::vector<std::optional<Term>> slots(schema->size());
    for (const auto& [i, t] : pairs) {
      if (i >= slots.size()) throw_data("slot index out of range for schema");
      slots[i] = t;
    }
    return Event(std::move(schema), std::move(slots));
  }

  const SchemaPtr& schema() const { return schema_; }
  bool assigned(std::size_t i) const { return i < slots_.size() && slots_[i].has_value(); }
  const Term& term(std::size_t i) const { return *slots_[i]; }

  SlotSet assigned_slots() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < slots_.size(); ++i)
      if (slots_[i]) idx.push_back(i);
    return SlotSet(std::move(idx));
  }

  std::size_t assigned_count() const {
    std::size_t n = 0;
    for (const auto& s : slots_)
      if (s) ++n;
    return n;
  }

  bool full() const { return assigned_count() == slots_.size(); }

  // Keeps exactly the requested slots; the input is unchanged.
  Event project(const SlotSet& keep) const {
    std::vector<std::optional<Term>> out(slots_.size());
    for (std::size_t i : keep) {
      if (i >= slots_.size())
        throw_data("projection slot index " + std::to_string(i) + " outside schema");
      if (!slots_[i])
        throw_data("projection slot " + schema_->slot(i).name + " is not assigned");
      out[i] = slots_[i];
    }
    return Event(schema_, std::move(out));
  }

  // Union of two assignments on the same schema; overlapping slots must agree.
  Event merged_with(const Event& other) const {
    if (schema_ != other.schema_) throw_data("cannot merge events on different schemas");
    std::vector<std::optional<Term>> out = slots_;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!other.slots_[i]) continue;
      if (out[i] && *out[i] != *other.slots_[i])
        throw_data("conflicting assignment while merging events");
      out[i] = other.slots_[i];
    }
    return Event(schema_, std::move(out));
  }

  friend bool operator==(const Event& a, const Event& b) {
    return a.schema_ == b.schema_ && a.slots_ == b.slots_;
  }

 private:
  SchemaPtr schema_;
  std::vector<std::optional<Term>> slots_;
};

// Deterministic injective serialization of an event, used as count-table key.
// Slots follow schema order; unassigned slots are marked with kKeyHole.
inline std::string canonical_key(const Event& e) {
  std::string out;
  const std::size_t n = e.schema()->size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += kKeySep;
    if (e.assigned(i))
      out += e.term(i).str();
    else
      out += kKeyHole;
  }
  return out;
}

inline Event event_from_key(const SchemaPtr& schema, std::string_view key) {
  std::vector<std::optional<Term>> slots;
  slots.reserve(schema->size());
  std::size_t start = 0;
  while (true) {
    std::size_t sep = key.find(kKeySep, start);
    std::string_view part =
        sep == std::string_view::npos ? key.substr(start) : key.substr(start, sep - start);
    if (part != kKeyHole) slots.emplace_back(Term(std::string(part)));
    else slots.emplace_back(std::nullopt);
    if (sep == std::string_view::npos) break;
    start = sep + 1;
  }
  if (slots.size() != schema->size())
    throw_data("key \"" + std::string(key) + "\" does not match schema slot count");
  return Event(schema, std::move(slots));
}

// An outcome/context pair on one joint schema; the two assignments must not
// overlap. Pairs with a partially assigned context are the projected queries
// produced while walking a lattice.
struct ConditionalQuery {
  Event outcome;
  Event context;

  ConditionalQuery(Event outcome_, Event context_)
      : outcome(std::move(outcome_)), context(std::move(context_)) {
    if (outcome.schema() != context.schema())
      throw_data("query outcome and context must share one joint schema");
    if (outcome.assigned_count() == 0) throw_data("query outcome must assign a slot");
    if (!outcome.assigned_slots().disjoint_with(context.assigned_slots()))
      throw_data("query outcome and context slots overlap");
  }
};

// One factorization manner: how a parent query resolves into child sub-events.
// An empty outcome subset means the child inherits the parent outcome whole
// (the asynchronous case, where only the conditioning event shrinks).
struct ProjectionSpec {
  struct Child {
    SlotSet outcome;
    SlotSet context;
    friend bool operator==(const Child&, const Child&) = default;
  };
  std::vector<Child> children;

  friend bool operator==(const ProjectionSpec&, const ProjectionSpec&) = default;
};

inline std::vector<ConditionalQuery> apply_factorization(const ConditionalQuery& query,
                                                         const ProjectionSpec& spec) {
  std::vector<ConditionalQuery> out;
  out.reserve(spec.children.size());
  for (const auto& child : spec.children) {
    Event o = child.outcome.empty() ? query.outcome : query.outcome.project(child.outcome);
    Event c = query.context.project(child.context);
    out.emplace_back(std::move(o), std::move(c));
  }
  return out;
}

}  // namespace folm
