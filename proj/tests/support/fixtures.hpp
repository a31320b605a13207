#pragma once

#include <initializer_list>
#include <string>
#include <vector>

#include "kbqa/kb.hpp"

namespace fixtures {

inline std::string data_path(const std::string& name) {
  return std::string(KBQA_SOURCE_DIR) + "/data/" + name;
}

// Countries and the rivers that flow through them; mirrors data/rivers_*.tsv.
inline kbqa::KnowledgeBase rivers_kb() {
  kbqa::KnowledgeBase kb;
  auto add = [&](const char* s, const char* o) {
    kb.add_triple(kb.symbols.intern(s), kb.symbols.intern("flow"), kb.symbols.intern(o));
  };
  add("China", "Indus");
  add("China", "Satluj");
  add("India", "Indus");
  add("India", "Satluj");
  add("India", "Godavari");
  add("Russia", "Volga");
  add("Russia", "Moskva");
  add("Russia", "Neva");
  add("Russia", "Ob");
  add("USA", "Mississippi");
  add("USA", "Colorado");
  add("USA", "Rio Grande");
  const kbqa::TypeId country = kb.symbols.intern("country");
  const kbqa::TypeId river = kb.symbols.intern("river");
  for (const char* c : {"China", "India", "Russia", "USA"})
    kb.declare_type(*kb.symbols.lookup(c), country);
  for (const char* r : {"Indus", "Satluj", "Godavari", "Volga", "Moskva", "Neva", "Ob",
                        "Mississippi", "Colorado", "Rio Grande"})
    kb.declare_type(*kb.symbols.lookup(r), river);
  kb.finalize();
  return kb;
}

inline kbqa::SymbolId id(const kbqa::KnowledgeBase& kb, const std::string& label) {
  auto found = kb.symbols.lookup(label);
  if (!found) throw std::runtime_error("fixture label not interned: " + label);
  return *found;
}

inline kbqa::IdSet ids(const kbqa::KnowledgeBase& kb, std::initializer_list<const char*> labels) {
  kbqa::IdSet out;
  for (const char* l : labels) kbqa::idset_insert(out, id(kb, l));
  return out;
}

inline std::vector<std::string> labels_of(const kbqa::KnowledgeBase& kb, const kbqa::IdSet& set) {
  std::vector<std::string> out;
  for (kbqa::SymbolId s : set) out.emplace_back(kb.symbols.label(s));
  return out;
}

}  // namespace fixtures
