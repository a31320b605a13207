#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kbqa/actions.hpp"
#include "kbqa/executor.hpp"
#include "kbqa/kb.hpp"

namespace kbqa {

struct DatasetParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One annotated question: masked input tokens, the mask bindings, the gold
// denotation, and any machine-found reference programs.
struct Example {
  std::string question_id;
  std::string category;
  std::vector<std::string> tokens;
  MaskTable table;
  Answer gold;
  std::vector<ActionSequence> pseudo_gold;
};

namespace detail {

inline SymbolId resolve_label(const KnowledgeBase& kb, const std::string& label,
                              const std::string& where) {
  auto id = kb.symbols.lookup(label);
  if (!id) throw DatasetParseError(where + ": unknown KB label '" + label + "'");
  return *id;
}

inline nlohmann::json gold_to_json(const KnowledgeBase& kb, const Answer& a) {
  nlohmann::json j;
  switch (a.kind) {
    case Answer::Kind::Entities: {
      j["type"] = "entities";
      nlohmann::json labels = nlohmann::json::array();
      for (SymbolId id : a.entities) labels.push_back(std::string(kb.symbols.label(id)));
      j["value"] = std::move(labels);
      break;
    }
    case Answer::Kind::Number:
      j["type"] = "number";
      j["value"] = a.number;
      break;
    case Answer::Kind::Booleans:
      j["type"] = "booleans";
      j["value"] = a.booleans;
      break;
  }
  return j;
}

inline Answer gold_from_json(const KnowledgeBase& kb, const nlohmann::json& j,
                             const std::string& where) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "entities") {
    IdSet set;
    for (const auto& label : j.at("value"))
      idset_insert(set, resolve_label(kb, label.get<std::string>(), where));
    return Answer::of_entities(std::move(set));
  }
  if (type == "number") return Answer::of_number(j.at("value").get<std::int64_t>());
  if (type == "booleans") return Answer::of_booleans(j.at("value").get<std::vector<bool>>());
  throw DatasetParseError(where + ": unknown gold type '" + type + "'");
}

inline nlohmann::json label_map_to_json(const KnowledgeBase& kb,
                                        const std::map<int, SymbolId>& map) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [index, id] : map)
    j[std::to_string(index)] = std::string(kb.symbols.label(id));
  return j;
}

inline void label_map_from_json(const KnowledgeBase& kb, const nlohmann::json& j,
                                std::map<int, SymbolId>& map, const std::string& where) {
  for (const auto& [key, label] : j.items())
    map[std::stoi(key)] = resolve_label(kb, label.get<std::string>(), where);
}

}  // namespace detail

inline nlohmann::json example_to_json(const KnowledgeBase& kb, const Example& e) {
  nlohmann::json j;
  j["question_id"] = e.question_id;
  j["category"] = e.category;
  j["tokens"] = e.tokens;
  nlohmann::json table;
  table["entities"] = detail::label_map_to_json(kb, e.table.entity_map);
  table["predicates"] = detail::label_map_to_json(kb, e.table.predicate_map);
  table["types"] = detail::label_map_to_json(kb, e.table.type_map);
  nlohmann::json numbers = nlohmann::json::object();
  for (const auto& [index, value] : e.table.number_map) numbers[std::to_string(index)] = value;
  table["numbers"] = std::move(numbers);
  j["mask_table"] = std::move(table);
  j["gold"] = detail::gold_to_json(kb, e.gold);
  if (!e.pseudo_gold.empty()) {
    nlohmann::json programs = nlohmann::json::array();
    for (const ActionSequence& seq : e.pseudo_gold) programs.push_back(to_text(seq));
    j["pseudo_gold"] = std::move(programs);
  }
  return j;
}

inline Example example_from_json(const KnowledgeBase& kb, const nlohmann::json& j,
                                 const std::string& where = "example") {
  Example e;
  e.question_id = j.at("question_id").get<std::string>();
  e.category = j.value("category", std::string("other"));
  e.tokens = j.at("tokens").get<std::vector<std::string>>();
  const auto& table = j.at("mask_table");
  detail::label_map_from_json(kb, table.at("entities"), e.table.entity_map, where);
  detail::label_map_from_json(kb, table.at("predicates"), e.table.predicate_map, where);
  detail::label_map_from_json(kb, table.at("types"), e.table.type_map, where);
  if (table.contains("numbers"))
    for (const auto& [key, value] : table.at("numbers").items())
      e.table.number_map[std::stoi(key)] = value.get<std::int64_t>();
  e.gold = detail::gold_from_json(kb, j.at("gold"), where);
  if (j.contains("pseudo_gold"))
    for (const auto& text : j.at("pseudo_gold"))
      e.pseudo_gold.push_back(sequence_from_text(text.get<std::string>()));
  return e;
}

inline std::vector<Example> load_dataset(const std::string& path, const KnowledgeBase& kb) {
  std::ifstream in(path);
  if (!in) throw DatasetParseError("cannot open " + path);
  std::vector<Example> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw DatasetParseError(where + ": " + ex.what());
    }
    try {
      out.push_back(example_from_json(kb, j, where));
    } catch (const nlohmann::json::exception& ex) {
      throw DatasetParseError(where + ": " + ex.what());
    }
  }
  return out;
}

inline void save_dataset(const std::string& path, const KnowledgeBase& kb,
                         const std::vector<Example>& examples) {
  std::ofstream out(path);
  if (!out) throw DatasetParseError("cannot write " + path);
  for (const Example& e : examples) out << example_to_json(kb, e).dump() << '\n';
}

}  // namespace kbqa
