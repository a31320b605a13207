#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kbqa/ids.hpp"

namespace kbqa {

// The 17 primitive operators. Argument slots are fixed per operator; the
// token stream carries no brackets, so arity alone recovers the structure.
enum class Operator : std::uint8_t {
  Select,       // (entity, predicate, type)
  SelectAll,    // (type, predicate, type)
  Bool,         // (entity)
  ArgMin,       //
  ArgMax,       //
  GreaterThan,  // (entity)
  LessThan,     // (entity)
  Inter,        // (entity, predicate, type)
  Union,        // (entity, predicate, type)
  Diff,         // (entity, predicate, type)
  Count,        //
  AtLeast,      // (number)
  AtMost,       // (number)
  EqualsTo,     // (number)
  GetKeys,      //
  Almost,       // (number)
  EOQ,          //
};

inline constexpr int kNumOperators = 17;
inline constexpr int kDefaultMaxActions = 5;

// Slot kinds as they appear in the token stream. Numbers ride on
// entity-spelled masks; their values live in MaskTable::number_map.
enum class SlotKind : std::uint8_t { Entity, Predicate, Type, Number };

inline const std::array<std::string_view, kNumOperators>& operator_names() {
  static const std::array<std::string_view, kNumOperators> names = {
      "Select", "SelectAll", "Bool",    "ArgMin",   "ArgMax",  "GreaterThan",
      "LessThan", "Inter",   "Union",   "Diff",     "Count",   "AtLeast",
      "AtMost",  "EqualsTo", "GetKeys", "Almost",   "EOQ"};
  return names;
}

inline std::string_view name_of(Operator op) {
  return operator_names()[static_cast<std::size_t>(op)];
}

inline std::optional<Operator> operator_from_name(std::string_view name) {
  const auto& names = operator_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Operator>(i);
  return std::nullopt;
}

inline const std::vector<SlotKind>& slots_of(Operator op) {
  static const std::vector<SlotKind> ert = {SlotKind::Entity, SlotKind::Predicate, SlotKind::Type};
  static const std::vector<SlotKind> trt = {SlotKind::Type, SlotKind::Predicate, SlotKind::Type};
  static const std::vector<SlotKind> e = {SlotKind::Entity};
  static const std::vector<SlotKind> n = {SlotKind::Number};
  static const std::vector<SlotKind> none = {};
  switch (op) {
    case Operator::Select:
    case Operator::Inter:
    case Operator::Union:
    case Operator::Diff:
      return ert;
    case Operator::SelectAll:
      return trt;
    case Operator::Bool:
    case Operator::GreaterThan:
    case Operator::LessThan:
      return e;
    case Operator::AtLeast:
    case Operator::AtMost:
    case Operator::EqualsTo:
    case Operator::Almost:
      return n;
    default:
      return none;
  }
}

inline int arity_of(Operator op) { return static_cast<int>(slots_of(op).size()); }

enum class MaskKind : std::uint8_t { Entity, Predicate, Type };

// Placeholder token standing for a KB artifact: <E1>, <P2>, <T1>, ...
// Number arguments are spelled as entity masks and resolved via number_map.
struct MaskToken {
  MaskKind kind;
  int index;  // 1-based

  auto operator<=>(const MaskToken&) const = default;

  std::string spelling() const {
    const char c = kind == MaskKind::Entity ? 'E' : kind == MaskKind::Predicate ? 'P' : 'T';
    return std::string("<") + c + std::to_string(index) + ">";
  }

  static std::optional<MaskToken> parse(std::string_view tok) {
    if (tok.size() < 4 || tok.front() != '<' || tok.back() != '>') return std::nullopt;
    MaskKind kind;
    switch (tok[1]) {
      case 'E': kind = MaskKind::Entity; break;
      case 'P': kind = MaskKind::Predicate; break;
      case 'T': kind = MaskKind::Type; break;
      default: return std::nullopt;
    }
    int index = 0;
    for (std::size_t i = 2; i + 1 < tok.size(); ++i) {
      if (tok[i] < '0' || tok[i] > '9') return std::nullopt;
      index = index * 10 + (tok[i] - '0');
    }
    if (index < 1) return std::nullopt;
    return MaskToken{kind, index};
  }
};

// Per-question record of what each mask stands for. Injective per kind; an
// entity-spelled index is either an entity or a number, never both.
struct MaskTable {
  std::map<int, EntityId> entity_map;     // <Ei> -> entity
  std::map<int, PredicateId> predicate_map;  // <Pi> -> predicate
  std::map<int, TypeId> type_map;         // <Ti> -> type
  std::map<int, std::int64_t> number_map;  // <Ei> -> integer literal
};

struct Action {
  Operator op;
  std::vector<MaskToken> args;

  bool operator==(const Action&) const = default;
};

// Masked program: non-empty, ends with the single EOQ.
struct ActionSequence {
  std::vector<Action> actions;

  bool operator==(const ActionSequence&) const = default;
};

struct MalformedProgram : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnresolvedMask : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Grounded action: mask arguments resolved to KB ids / integer literals.
// Slots not used by the operator stay at their defaults.
struct GroundedAction {
  Operator op = Operator::EOQ;
  EntityId entity = kInvalidSymbol;
  TypeId source_type = kInvalidSymbol;  // first slot of SelectAll
  PredicateId predicate = kInvalidSymbol;
  TypeId type = kInvalidSymbol;
  std::int64_t number = 0;

  bool operator==(const GroundedAction&) const = default;
};

using GroundedSequence = std::vector<GroundedAction>;

// Flat token stream: operator token followed by its argument masks.
inline std::vector<std::string> tokenize(const ActionSequence& seq) {
  std::vector<std::string> tokens;
  for (const Action& a : seq.actions) {
    tokens.emplace_back(name_of(a.op));
    for (const MaskToken& m : a.args) tokens.push_back(m.spelling());
  }
  return tokens;
}

namespace detail {

inline bool slot_accepts(SlotKind slot, MaskKind kind) {
  switch (slot) {
    case SlotKind::Entity:
    case SlotKind::Number:  // numbers are entity-spelled
      return kind == MaskKind::Entity;
    case SlotKind::Predicate:
      return kind == MaskKind::Predicate;
    case SlotKind::Type:
      return kind == MaskKind::Type;
  }
  return false;
}

}  // namespace detail

// Inverse of tokenize. Rejects wrong arity, wrong slot kinds, missing or
// non-final EOQ, and programs longer than max_actions.
inline ActionSequence parse_tokens(const std::vector<std::string>& tokens,
                                   int max_actions = kDefaultMaxActions) {
  if (tokens.empty()) throw MalformedProgram("empty token stream");
  ActionSequence seq;
  std::size_t pos = 0;
  bool saw_eoq = false;
  while (pos < tokens.size()) {
    if (saw_eoq) throw MalformedProgram("token after EOQ: " + tokens[pos]);
    auto op = operator_from_name(tokens[pos]);
    if (!op) throw MalformedProgram("expected operator, got: " + tokens[pos]);
    ++pos;
    Action action{*op, {}};
    for (SlotKind slot : slots_of(*op)) {
      if (pos >= tokens.size())
        throw MalformedProgram(std::string("truncated arguments for ") + std::string(name_of(*op)));
      auto mask = MaskToken::parse(tokens[pos]);
      if (!mask || !detail::slot_accepts(slot, mask->kind))
        throw MalformedProgram("bad argument for " + std::string(name_of(*op)) + ": " + tokens[pos]);
      action.args.push_back(*mask);
      ++pos;
    }
    if (*op == Operator::EOQ) saw_eoq = true;
    seq.actions.push_back(std::move(action));
    if (static_cast<int>(seq.actions.size()) > max_actions)
      throw MalformedProgram("program exceeds " + std::to_string(max_actions) + " actions");
  }
  if (!saw_eoq) throw MalformedProgram("missing EOQ");
  return seq;
}

inline GroundedSequence unmask(const ActionSequence& seq, const MaskTable& table) {
  GroundedSequence out;
  out.reserve(seq.actions.size());
  for (const Action& a : seq.actions) {
    GroundedAction g;
    g.op = a.op;
    const auto& slots = slots_of(a.op);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const MaskToken& m = a.args[i];
      switch (slots[i]) {
        case SlotKind::Entity: {
          auto it = table.entity_map.find(m.index);
          if (m.kind != MaskKind::Entity || it == table.entity_map.end())
            throw UnresolvedMask("no entity for " + m.spelling());
          g.entity = it->second;
          break;
        }
        case SlotKind::Number: {
          auto it = table.number_map.find(m.index);
          if (m.kind != MaskKind::Entity || it == table.number_map.end())
            throw UnresolvedMask("no number for " + m.spelling());
          g.number = it->second;
          break;
        }
        case SlotKind::Predicate: {
          auto it = table.predicate_map.find(m.index);
          if (it == table.predicate_map.end()) throw UnresolvedMask("no predicate for " + m.spelling());
          g.predicate = it->second;
          break;
        }
        case SlotKind::Type: {
          auto it = table.type_map.find(m.index);
          if (it == table.type_map.end()) throw UnresolvedMask("no type for " + m.spelling());
          // SelectAll's first slot is the source type, every other type slot
          // is the target type.
          if (a.op == Operator::SelectAll && i == 0)
            g.source_type = it->second;
          else
            g.type = it->second;
          break;
        }
      }
    }
    out.push_back(g);
  }
  return out;
}

// Text form for logs and fixtures: `Select(<E1>,<P1>,<T1>) | EOQ`.
inline std::string to_text(const ActionSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.actions.size(); ++i) {
    if (i > 0) out += " | ";
    const Action& a = seq.actions[i];
    out += std::string(name_of(a.op));
    if (!a.args.empty()) {
      out += "(";
      for (std::size_t j = 0; j < a.args.size(); ++j) {
        if (j > 0) out += ",";
        out += a.args[j].spelling();
      }
      out += ")";
    }
  }
  return out;
}

inline ActionSequence sequence_from_text(const std::string& text,
                                         int max_actions = kDefaultMaxActions) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (c == '(' || c == ')' || c == ',' || c == '|' || std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return parse_tokens(tokens, max_actions);
}

}  // namespace kbqa
