#pragma once

#include <cstdint>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kbqa/actions.hpp"
#include "kbqa/kb.hpp"

namespace kbqa {

struct SemanticError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExecutorConfig {
  // Almost(n) keeps |V| within [n - tol, n + tol].
  std::int64_t almost_small_threshold = 5;
  std::int64_t almost_small_tol = 1;
  std::int64_t almost_large_tol = 5;
  // GreaterThan/LessThan compare with >= / <= and keep the anchor entry.
  bool comparison_strict = false;
  bool exclude_anchor = false;
};

// Key of the single entry produced by GetKeys. Never a real symbol id.
inline constexpr SymbolId kKeysKey = -2;

enum class Focus : std::uint8_t { Values, Keys };

// Intermediate-result dictionary threaded between actions.
struct WorkingDict {
  struct Entry {
    SymbolId key;
    IdSet values;
    bool operator==(const Entry&) const = default;
  };

  std::vector<Entry> entries;  // insertion-ordered, keys unique
  std::vector<bool> bool_list;
  std::optional<std::int64_t> number;
  Focus focus = Focus::Values;

  bool operator==(const WorkingDict&) const = default;

  Entry* find(SymbolId key) {
    for (Entry& e : entries)
      if (e.key == key) return &e;
    return nullptr;
  }
  const Entry* find(SymbolId key) const {
    for (const Entry& e : entries)
      if (e.key == key) return &e;
    return nullptr;
  }

  void insert_or_extend(SymbolId key, const IdSet& values) {
    if (Entry* e = find(key))
      e->values = idset_union(e->values, values);
    else
      entries.push_back(Entry{key, values});
  }

  IdSet keys() const {
    IdSet out;
    for (const Entry& e : entries) idset_insert(out, e.key);
    return out;
  }

  IdSet value_union() const {
    IdSet out;
    for (const Entry& e : entries) out = idset_union(out, e.values);
    return out;
  }

  IdSet focused_set() const { return focus == Focus::Keys ? keys() : value_union(); }

  // Order-insensitive over entries; used to detect duplicate search states.
  std::string canonical_key() const {
    std::vector<const Entry*> sorted;
    sorted.reserve(entries.size());
    for (const Entry& e : entries) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(),
              [](const Entry* a, const Entry* b) { return a->key < b->key; });
    std::ostringstream out;
    out << (focus == Focus::Keys ? 'K' : 'V') << ';';
    for (const Entry* e : sorted) {
      out << e->key << ':';
      for (SymbolId v : e->values) out << v << ',';
      out << ';';
    }
    out << 'B';
    for (bool b : bool_list) out << (b ? '1' : '0');
    out << ";N";
    if (number) out << *number;
    return out.str();
  }
};

struct Answer {
  enum class Kind : std::uint8_t { Entities, Number, Booleans };

  Kind kind = Kind::Entities;
  IdSet entities;
  std::int64_t number = 0;
  std::vector<bool> booleans;

  bool operator==(const Answer&) const = default;

  static Answer of_entities(IdSet s) { return Answer{Kind::Entities, std::move(s), 0, {}}; }
  static Answer of_number(std::int64_t n) { return Answer{Kind::Number, {}, n, {}}; }
  static Answer of_booleans(std::vector<bool> b) {
    return Answer{Kind::Booleans, {}, 0, std::move(b)};
  }
};

namespace detail {

inline void filter_entries(WorkingDict& d, auto keep) {
  std::vector<WorkingDict::Entry> kept;
  for (WorkingDict::Entry& e : d.entries)
    if (keep(e)) kept.push_back(std::move(e));
  d.entries = std::move(kept);
}

}  // namespace detail

inline void step(const GroundedAction& a, WorkingDict& d, const KnowledgeBase& kb,
                 const ExecutorConfig& cfg) {
  switch (a.op) {
    case Operator::Select: {
      d.insert_or_extend(a.entity, kb.select_targets(a.entity, a.predicate, a.type));
      d.focus = Focus::Values;
      break;
    }
    case Operator::SelectAll: {
      for (SymbolId member : kb.members_of(a.source_type)) {
        IdSet s = kb.select_targets(member, a.predicate, a.type);
        if (!s.empty()) d.insert_or_extend(member, s);
      }
      d.focus = Focus::Keys;
      break;
    }
    case Operator::Bool: {
      if (d.number) throw SemanticError("Bool after Count");
      if (d.entries.empty()) throw SemanticError("Bool on empty dictionary");
      d.bool_list.push_back(idset_contains(d.value_union(), a.entity));
      break;
    }
    case Operator::ArgMin:
    case Operator::ArgMax: {
      if (d.entries.empty()) throw SemanticError("ArgMin/ArgMax on empty dictionary");
      std::size_t best = d.entries.front().values.size();
      for (const auto& e : d.entries) {
        const std::size_t n = e.values.size();
        if (a.op == Operator::ArgMin ? n < best : n > best) best = n;
      }
      detail::filter_entries(d, [&](const auto& e) { return e.values.size() == best; });
      d.focus = Focus::Keys;
      break;
    }
    case Operator::GreaterThan:
    case Operator::LessThan: {
      const WorkingDict::Entry* anchor = d.find(a.entity);
      if (!anchor) throw SemanticError("comparison anchor not in dictionary");
      const std::size_t c = anchor->values.size();
      const bool greater = a.op == Operator::GreaterThan;
      detail::filter_entries(d, [&](const auto& e) {
        if (cfg.exclude_anchor && e.key == a.entity) return false;
        const std::size_t n = e.values.size();
        if (cfg.comparison_strict) return greater ? n > c : n < c;
        return greater ? n >= c : n <= c;
      });
      d.focus = Focus::Keys;
      break;
    }
    case Operator::Inter:
    case Operator::Union:
    case Operator::Diff: {
      const IdSet s = kb.select_targets(a.entity, a.predicate, a.type);
      // A lone values-focused selection (or an empty dictionary) treats Union
      // with a fresh anchor as a second selection rather than a merge.
      if (a.op == Operator::Union && !d.find(a.entity) &&
          (d.entries.empty() || (d.entries.size() == 1 && d.focus == Focus::Values))) {
        d.insert_or_extend(a.entity, s);
        break;
      }
      for (auto& e : d.entries) {
        if (a.op == Operator::Inter)
          e.values = idset_inter(e.values, s);
        else if (a.op == Operator::Union)
          e.values = idset_union(e.values, s);
        else
          e.values = idset_diff(e.values, s);
      }
      break;
    }
    case Operator::Count: {
      if (!d.bool_list.empty()) throw SemanticError("Count after Bool");
      d.number = static_cast<std::int64_t>(d.focused_set().size());
      d.entries.clear();
      break;
    }
    case Operator::AtLeast:
    case Operator::AtMost:
    case Operator::EqualsTo: {
      detail::filter_entries(d, [&](const auto& e) {
        const auto n = static_cast<std::int64_t>(e.values.size());
        if (a.op == Operator::AtLeast) return n >= a.number;
        if (a.op == Operator::AtMost) return n <= a.number;
        return n == a.number;
      });
      d.focus = Focus::Keys;
      break;
    }
    case Operator::GetKeys: {
      IdSet former = d.keys();
      d.entries.clear();
      d.entries.push_back(WorkingDict::Entry{kKeysKey, std::move(former)});
      d.focus = Focus::Values;
      break;
    }
    case Operator::Almost: {
      const std::int64_t tol =
          a.number <= cfg.almost_small_threshold ? cfg.almost_small_tol : cfg.almost_large_tol;
      detail::filter_entries(d, [&](const auto& e) {
        return std::llabs(static_cast<std::int64_t>(e.values.size()) - a.number) <= tol;
      });
      d.focus = Focus::Keys;
      break;
    }
    case Operator::EOQ:
      break;
  }
}

inline Answer answer_of(const WorkingDict& d) {
  if (!d.bool_list.empty()) return Answer::of_booleans(d.bool_list);
  if (d.number) return Answer::of_number(*d.number);
  if (d.entries.empty()) throw SemanticError("no result to return");
  return Answer::of_entities(d.focused_set());
}

inline Answer execute(const GroundedSequence& seq, const KnowledgeBase& kb,
                      const ExecutorConfig& cfg = {}) {
  WorkingDict d;
  for (const GroundedAction& a : seq) step(a, d, kb, cfg);
  return answer_of(d);
}

// Dictionary snapshot after each action, for the program trace output.
inline std::vector<WorkingDict> execute_trace(const GroundedSequence& seq,
                                              const KnowledgeBase& kb,
                                              const ExecutorConfig& cfg = {}) {
  std::vector<WorkingDict> out;
  WorkingDict d;
  for (const GroundedAction& a : seq) {
    step(a, d, kb, cfg);
    out.push_back(d);
  }
  return out;
}

// Parse, ground and run a masked program; any failure is nullopt (callers
// turn it into zero reward).
inline std::optional<Answer> run_program(const ActionSequence& seq, const MaskTable& table,
                                         const KnowledgeBase& kb, const ExecutorConfig& cfg = {}) {
  try {
    return execute(unmask(seq, table), kb, cfg);
  } catch (const UnresolvedMask&) {
    return std::nullopt;
  } catch (const SemanticError&) {
    return std::nullopt;
  }
}

inline std::optional<Answer> run_program_tokens(const std::vector<std::string>& tokens,
                                                const MaskTable& table, const KnowledgeBase& kb,
                                                const ExecutorConfig& cfg = {},
                                                int max_actions = kDefaultMaxActions) {
  try {
    return run_program(parse_tokens(tokens, max_actions), table, kb, cfg);
  } catch (const MalformedProgram&) {
    return std::nullopt;
  }
}

inline std::string entity_label(const KnowledgeBase& kb, SymbolId id) {
  return id == kKeysKey ? std::string("<keys>") : std::string(kb.symbols.label(id));
}

inline std::string format_dict(const KnowledgeBase& kb, const WorkingDict& d) {
  std::ostringstream out;
  out << "{";
  for (std::size_t i = 0; i < d.entries.size(); ++i) {
    if (i) out << ", ";
    out << entity_label(kb, d.entries[i].key) << ": {";
    for (std::size_t j = 0; j < d.entries[i].values.size(); ++j) {
      if (j) out << ", ";
      out << entity_label(kb, d.entries[i].values[j]);
    }
    out << "}";
  }
  out << "}";
  if (!d.bool_list.empty()) {
    out << " bools=[";
    for (std::size_t i = 0; i < d.bool_list.size(); ++i)
      out << (i ? "," : "") << (d.bool_list[i] ? "true" : "false");
    out << "]";
  }
  if (d.number) out << " number=" << *d.number;
  return out.str();
}

inline std::string format_answer(const KnowledgeBase& kb, const Answer& a) {
  std::ostringstream out;
  switch (a.kind) {
    case Answer::Kind::Entities: {
      out << "{";
      for (std::size_t i = 0; i < a.entities.size(); ++i)
        out << (i ? ", " : "") << entity_label(kb, a.entities[i]);
      out << "}";
      break;
    }
    case Answer::Kind::Number:
      out << a.number;
      break;
    case Answer::Kind::Booleans: {
      for (std::size_t i = 0; i < a.booleans.size(); ++i)
        out << (i ? ", " : "") << (a.booleans[i] ? "YES" : "NO");
      break;
    }
  }
  return out.str();
}

}  // namespace kbqa
