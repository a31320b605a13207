#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "kbqa/ids.hpp"

namespace kbqa {

// Sorted unique id vector. Small enough at this scale that flat vectors beat
// node-based sets for every operation we need.
using IdSet = std::vector<SymbolId>;

inline void idset_insert(IdSet& s, SymbolId id) {
  auto it = std::lower_bound(s.begin(), s.end(), id);
  if (it == s.end() || *it != id) s.insert(it, id);
}

inline bool idset_contains(const IdSet& s, SymbolId id) {
  return std::binary_search(s.begin(), s.end(), id);
}

inline IdSet idset_union(const IdSet& a, const IdSet& b) {
  IdSet out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline IdSet idset_inter(const IdSet& a, const IdSet& b) {
  IdSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline IdSet idset_diff(const IdSet& a, const IdSet& b) {
  IdSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

struct Triple {
  EntityId subject;
  PredicateId predicate;
  EntityId object;

  auto operator<=>(const Triple&) const = default;
};

struct KbParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Immutable fact store: triples plus type declarations, with the two indexes
// the executor and the program search need. The symbol table keeps growing as
// datasets intern new labels; the facts never change after load.
class KnowledgeBase {
public:
  SymbolTable symbols;

  const std::vector<Triple>& triples() const { return triples_; }

  const std::map<TypeId, IdSet>& type_members() const { return type_members_; }

  const std::map<std::pair<EntityId, PredicateId>, IdSet>& sp_index() const { return sp_index_; }

  // Objects of (e, r, .) that are members of type t. Unknown ids give the
  // empty set; execution must stay total so bad programs earn reward 0.
  IdSet select_targets(EntityId e, PredicateId r, TypeId t) const {
    auto sp = sp_index_.find({e, r});
    if (sp == sp_index_.end()) return {};
    auto tm = type_members_.find(t);
    if (tm == type_members_.end()) return {};
    return idset_inter(sp->second, tm->second);
  }

  IdSet members_of(TypeId t) const {
    auto it = type_members_.find(t);
    if (it == type_members_.end()) return {};
    return it->second;
  }

  void add_triple(EntityId s, PredicateId p, EntityId o) {
    triples_.push_back({s, p, o});
  }

  void declare_type(EntityId e, TypeId t) { declarations_.emplace_back(e, t); }

  // Dedups triples and builds both indexes. Call once after the last
  // add_triple/declare_type.
  void finalize() {
    std::sort(triples_.begin(), triples_.end());
    triples_.erase(std::unique(triples_.begin(), triples_.end()), triples_.end());
    sp_index_.clear();
    for (const Triple& tr : triples_) idset_insert(sp_index_[{tr.subject, tr.predicate}], tr.object);
    type_members_.clear();
    for (const auto& [e, t] : declarations_) idset_insert(type_members_[t], e);
  }

  bool operator==(const KnowledgeBase& other) const {
    return symbols == other.symbols && triples_ == other.triples_ &&
           type_members_ == other.type_members_ && sp_index_ == other.sp_index_;
  }

private:
  std::vector<Triple> triples_;
  std::vector<std::pair<EntityId, TypeId>> declarations_;
  std::map<TypeId, IdSet> type_members_;
  std::map<std::pair<EntityId, PredicateId>, IdSet> sp_index_;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

inline bool skippable(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;  // blank
}

}  // namespace detail

// Triples file: one `subject<TAB>predicate<TAB>object` per line.
// Types file: one `entity<TAB>type` per line. `#` starts a comment line.
inline KnowledgeBase load_kb(const std::string& triples_path, const std::string& types_path) {
  KnowledgeBase kb;

  std::ifstream triples(triples_path);
  if (!triples) throw KbParseError("cannot open triples file: " + triples_path);
  std::string line;
  int lineno = 0;
  while (std::getline(triples, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    auto fields = detail::split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty())
      throw KbParseError(triples_path + ":" + std::to_string(lineno) +
                         ": expected subject<TAB>predicate<TAB>object");
    kb.add_triple(kb.symbols.intern(fields[0]), kb.symbols.intern(fields[1]),
                  kb.symbols.intern(fields[2]));
  }

  std::ifstream types(types_path);
  if (!types) throw KbParseError("cannot open types file: " + types_path);
  lineno = 0;
  while (std::getline(types, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    auto fields = detail::split_tabs(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
      throw KbParseError(types_path + ":" + std::to_string(lineno) + ": expected entity<TAB>type");
    if (!kb.symbols.lookup(fields[0]))
      throw KbParseError(types_path + ":" + std::to_string(lineno) +
                         ": type declaration for unknown entity '" + fields[0] + "'");
    kb.declare_type(kb.symbols.intern(fields[0]), kb.symbols.intern(fields[1]));
  }

  kb.finalize();
  return kb;
}

}  // namespace kbqa
